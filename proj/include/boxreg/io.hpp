#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "boxreg/eval.hpp"
#include "boxreg/optim.hpp"
#include "boxreg/simulate.hpp"

namespace boxreg {

using json = nlohmann::ordered_json;

enum class SimMode { bev2d, full3d };

inline const char* to_string(SimMode m) {
  return m == SimMode::bev2d ? "2d" : "3d";
}

inline SimMode sim_mode_from_string(const std::string& s) {
  if (s == "2d") return SimMode::bev2d;
  if (s == "3d") return SimMode::full3d;
  throw std::invalid_argument("mode must be '2d' or '3d', got '" + s + "'");
}

/// Everything one experiment needs: simulation, loss, and optimizer settings.
struct AppConfig {
  SimMode mode = SimMode::full3d;
  std::uint64_t seed = 0;
  LossConfig loss;
  OptimizerSettings opt;
  TrajectoryConfig traj;
  SensorModel sensor;
  NoiseScales noise;
  double occlusion_fraction = 0.3;
  int fps_points = 512;
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config field '" + key + "': not a number: " + v);
  }
  if (pos != v.size()) {
    throw std::invalid_argument("config field '" + key + "': not a number: " + v);
  }
  return out;
}

inline long parse_int(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  long out;
  try {
    out = std::stol(v, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument("config field '" + key + "': not an integer: " + v);
  }
  if (pos != v.size()) {
    throw std::invalid_argument("config field '" + key + "': not an integer: " + v);
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config field '" + key + "': not a boolean: " + v);
}

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

}  // namespace detail

/// Parses the flat `key = value` config format; '#' starts a comment.
/// Unknown keys are rejected by name. Missing keys keep their defaults.
inline AppConfig parse_config_text(const std::string& text) {
  AppConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected 'key = value'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected 'key = value'");
    }

    if (key == "mode") cfg.mode = sim_mode_from_string(value);
    else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(detail::parse_int(key, value));
    else if (key == "weight_closeness") cfg.loss.closeness_weight = detail::parse_double(key, value);
    else if (key == "weight_enclosure") cfg.loss.enclosure_weight = detail::parse_double(key, value);
    else if (key == "weight_smoothness") cfg.loss.smoothness_weight = detail::parse_double(key, value);
    else if (key == "weight_alignment") cfg.loss.alignment_weight = detail::parse_double(key, value);
    else if (key == "top_k") cfg.loss.top_k = static_cast<int>(detail::parse_int(key, value));
    else if (key == "l1_smoothing") cfg.loss.l1_width = detail::parse_double(key, value);
    else if (key == "max_iterations") cfg.opt.max_iterations = static_cast<int>(detail::parse_int(key, value));
    else if (key == "gradient_tolerance") cfg.opt.gradient_tolerance = detail::parse_double(key, value);
    else if (key == "loss_change_tolerance") cfg.opt.loss_change_tolerance = detail::parse_double(key, value);
    else if (key == "lbfgs_history") cfg.opt.lbfgs_history = static_cast<int>(detail::parse_int(key, value));
    else if (key == "newton_fd_step") cfg.opt.newton_fd_step = detail::parse_double(key, value);
    else if (key == "window_size") cfg.opt.window_size = static_cast<int>(detail::parse_int(key, value));
    else if (key == "window_stride") cfg.opt.window_stride = static_cast<int>(detail::parse_int(key, value));
    else if (key == "trajectory_steps") cfg.traj.steps = static_cast<int>(detail::parse_int(key, value));
    else if (key == "speed") cfg.traj.speed = detail::parse_double(key, value);
    else if (key == "time_step") cfg.traj.time_step = detail::parse_double(key, value);
    else if (key == "straight_path") cfg.traj.straight = detail::parse_bool(key, value);
    else if (key == "box_length") cfg.traj.length = detail::parse_double(key, value);
    else if (key == "box_width") cfg.traj.width = detail::parse_double(key, value);
    else if (key == "box_height") cfg.traj.height = detail::parse_double(key, value);
    else if (key == "sensor_x") cfg.sensor.position.x() = detail::parse_double(key, value);
    else if (key == "sensor_y") cfg.sensor.position.y() = detail::parse_double(key, value);
    else if (key == "sensor_z") cfg.sensor.position.z() = detail::parse_double(key, value);
    else if (key == "point_spacing") cfg.sensor.spacing = detail::parse_double(key, value);
    else if (key == "point_noise") cfg.sensor.noise_sigma = detail::parse_double(key, value);
    else if (key == "noise_x") cfg.noise.x = detail::parse_double(key, value);
    else if (key == "noise_y") cfg.noise.y = detail::parse_double(key, value);
    else if (key == "noise_z") cfg.noise.z = detail::parse_double(key, value);
    else if (key == "noise_roll") cfg.noise.roll = detail::parse_double(key, value);
    else if (key == "noise_pitch") cfg.noise.pitch = detail::parse_double(key, value);
    else if (key == "noise_yaw") cfg.noise.yaw = detail::parse_double(key, value);
    else if (key == "occlusion_fraction") cfg.occlusion_fraction = detail::parse_double(key, value);
    else if (key == "fps_points") cfg.fps_points = static_cast<int>(detail::parse_int(key, value));
    else throw std::invalid_argument("unknown config field '" + key + "'");
  }
  cfg.loss.bev_mode = cfg.mode == SimMode::bev2d;
  cfg.traj.bev_mode = cfg.mode == SimMode::bev2d;
  return cfg;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot read file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline AppConfig parse_config_file(const std::string& path) {
  return parse_config_text(read_text_file(path));
}

/// Writes through a temp file and renames, so readers never see partial output.
inline void atomic_write_text(const std::string& path, const std::string& content) {
  const std::filesystem::path target(path);
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::invalid_argument("cannot write file: " + path);
    out << content;
    if (!out.good()) throw std::invalid_argument("write failed: " + path);
  }
  std::filesystem::rename(tmp, target);
}

/// One simulated experiment: frames plus ground-truth and perturbed tracks.
struct Dataset {
  AppConfig meta;
  std::vector<PointFrame> frames;
  Track gt_track;
  Track initial_track;
};

/// Runs the full simulation pipeline: trajectory, per-frame visible-surface
/// scan, occlusion, farthest-point downsampling, and the perturbed initial
/// track. Deterministic in meta.seed; per-frame streams use derived seeds.
inline Dataset build_dataset(const AppConfig& cfg) {
  validate_trajectory_config(cfg.traj);
  if (!(cfg.occlusion_fraction >= 0.0 && cfg.occlusion_fraction < 1.0)) {
    throw std::invalid_argument("occlusion_fraction must be in [0, 1)");
  }
  if (cfg.fps_points < 1) throw std::invalid_argument("fps_points must be >= 1");

  Dataset ds;
  ds.meta = cfg;
  ds.gt_track = gen_trajectory(cfg.traj);
  ds.frames.reserve(ds.gt_track.size());
  for (std::size_t i = 0; i < ds.gt_track.size(); ++i) {
    PointFrame frame =
        gen_vehicle_cloud(ds.gt_track[i], cfg.sensor, derive_seed(cfg.seed, 3 * i));
    frame = occlude(frame, cfg.occlusion_fraction, derive_seed(cfg.seed, 3 * i + 1));
    frame = fps(frame, cfg.fps_points, derive_seed(cfg.seed, 3 * i + 2));
    frame.index = static_cast<int>(i);
    ds.frames.push_back(std::move(frame));
  }
  ds.initial_track = perturb_track(ds.gt_track, cfg.noise, derive_seed(cfg.seed, 1000003));
  return ds;
}

inline json box_to_json(const BoxState& b) {
  return json::array({b.x, b.y, b.z, b.l, b.w, b.h, b.roll, b.pitch, b.yaw});
}

inline BoxState box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 9) {
    throw std::invalid_argument("box record must be an array of 9 numbers");
  }
  BoxState b;
  b.x = j[0];
  b.y = j[1];
  b.z = j[2];
  b.l = j[3];
  b.w = j[4];
  b.h = j[5];
  b.roll = j[6];
  b.pitch = j[7];
  b.yaw = j[8];
  return b;
}

inline json track_to_json(const Track& t) {
  json arr = json::array();
  for (const BoxState& b : t) arr.push_back(box_to_json(b));
  return arr;
}

inline Track track_from_json(const json& j) {
  Track t;
  for (const json& b : j) t.push_back(box_from_json(b));
  return t;
}

inline json config_to_json(const AppConfig& cfg) {
  json j;
  j["mode"] = to_string(cfg.mode);
  j["seed"] = cfg.seed;
  j["weight_closeness"] = cfg.loss.closeness_weight;
  j["weight_enclosure"] = cfg.loss.enclosure_weight;
  j["weight_smoothness"] = cfg.loss.smoothness_weight;
  j["weight_alignment"] = cfg.loss.alignment_weight;
  j["top_k"] = cfg.loss.top_k;
  j["l1_smoothing"] = cfg.loss.l1_width;
  j["max_iterations"] = cfg.opt.max_iterations;
  j["gradient_tolerance"] = cfg.opt.gradient_tolerance;
  j["loss_change_tolerance"] = cfg.opt.loss_change_tolerance;
  j["lbfgs_history"] = cfg.opt.lbfgs_history;
  j["newton_fd_step"] = cfg.opt.newton_fd_step;
  j["window_size"] = cfg.opt.window_size;
  j["window_stride"] = cfg.opt.window_stride;
  j["trajectory_steps"] = cfg.traj.steps;
  j["speed"] = cfg.traj.speed;
  j["time_step"] = cfg.traj.time_step;
  j["straight_path"] = cfg.traj.straight;
  j["box_length"] = cfg.traj.length;
  j["box_width"] = cfg.traj.width;
  j["box_height"] = cfg.traj.height;
  j["sensor_x"] = cfg.sensor.position.x();
  j["sensor_y"] = cfg.sensor.position.y();
  j["sensor_z"] = cfg.sensor.position.z();
  j["point_spacing"] = cfg.sensor.spacing;
  j["point_noise"] = cfg.sensor.noise_sigma;
  j["noise_x"] = cfg.noise.x;
  j["noise_y"] = cfg.noise.y;
  j["noise_z"] = cfg.noise.z;
  j["noise_roll"] = cfg.noise.roll;
  j["noise_pitch"] = cfg.noise.pitch;
  j["noise_yaw"] = cfg.noise.yaw;
  j["occlusion_fraction"] = cfg.occlusion_fraction;
  j["fps_points"] = cfg.fps_points;
  return j;
}

inline AppConfig config_from_json(const json& j) {
  std::ostringstream text;
  for (const auto& [key, value] : j.items()) {
    text << key << " = "
         << (value.is_string() ? value.get<std::string>() : value.dump()) << "\n";
  }
  return parse_config_text(text.str());
}

inline json dataset_to_json(const Dataset& ds) {
  json j;
  json meta;
  meta["mode"] = to_string(ds.meta.mode);
  meta["seed"] = ds.meta.seed;
  meta["trajectory"] = {{"steps", ds.meta.traj.steps},
                        {"speed", ds.meta.traj.speed},
                        {"time_step", ds.meta.traj.time_step},
                        {"straight", ds.meta.traj.straight}};
  meta["box_size"] = {ds.meta.traj.length, ds.meta.traj.width, ds.meta.traj.height};
  meta["sensor"] = {{"position",
                     {ds.meta.sensor.position.x(), ds.meta.sensor.position.y(),
                      ds.meta.sensor.position.z()}},
                    {"spacing", ds.meta.sensor.spacing},
                    {"noise_sigma", ds.meta.sensor.noise_sigma}};
  meta["noise_scales"] = {ds.meta.noise.x,    ds.meta.noise.y,
                          ds.meta.noise.z,    ds.meta.noise.roll,
                          ds.meta.noise.pitch, ds.meta.noise.yaw};
  meta["occlusion_fraction"] = ds.meta.occlusion_fraction;
  meta["fps_points"] = ds.meta.fps_points;
  j["meta"] = std::move(meta);

  json frames = json::array();
  for (const PointFrame& f : ds.frames) {
    json pts = json::array();
    for (const Vec3& p : f.points) {
      pts.push_back(json::array({p.x(), p.y(), p.z()}));
    }
    frames.push_back({{"t", f.index}, {"points", std::move(pts)}});
  }
  j["frames"] = std::move(frames);
  j["gt_track"] = track_to_json(ds.gt_track);
  j["initial_track"] = track_to_json(ds.initial_track);
  return j;
}

inline Dataset dataset_from_json(const json& j) {
  Dataset ds;
  const json& meta = j.at("meta");
  ds.meta.mode = sim_mode_from_string(meta.at("mode").get<std::string>());
  ds.meta.seed = meta.at("seed").get<std::uint64_t>();
  const json& traj = meta.at("trajectory");
  ds.meta.traj.steps = traj.at("steps");
  ds.meta.traj.speed = traj.at("speed");
  ds.meta.traj.time_step = traj.at("time_step");
  ds.meta.traj.straight = traj.at("straight");
  ds.meta.traj.bev_mode = ds.meta.mode == SimMode::bev2d;
  ds.meta.loss.bev_mode = ds.meta.traj.bev_mode;
  const json& size = meta.at("box_size");
  ds.meta.traj.length = size.at(0);
  ds.meta.traj.width = size.at(1);
  ds.meta.traj.height = size.at(2);
  const json& sensor = meta.at("sensor");
  ds.meta.sensor.position = Vec3(sensor.at("position").at(0),
                                 sensor.at("position").at(1),
                                 sensor.at("position").at(2));
  ds.meta.sensor.spacing = sensor.at("spacing");
  ds.meta.sensor.noise_sigma = sensor.at("noise_sigma");
  const json& ns = meta.at("noise_scales");
  ds.meta.noise = {ns.at(0), ns.at(1), ns.at(2), ns.at(3), ns.at(4), ns.at(5)};
  ds.meta.occlusion_fraction = meta.at("occlusion_fraction");
  ds.meta.fps_points = meta.at("fps_points");

  for (const json& f : j.at("frames")) {
    PointFrame frame;
    frame.index = f.at("t");
    for (const json& p : f.at("points")) {
      frame.points.emplace_back(p.at(0), p.at(1), p.at(2));
    }
    ds.frames.push_back(std::move(frame));
  }
  ds.gt_track = track_from_json(j.at("gt_track"));
  ds.initial_track = track_from_json(j.at("initial_track"));
  if (ds.frames.size() != ds.gt_track.size() ||
      ds.frames.size() != ds.initial_track.size()) {
    throw std::invalid_argument("dataset: frame/track length mismatch");
  }
  return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
  atomic_write_text(path, dataset_to_json(ds).dump(1) + "\n");
}

inline Dataset load_dataset(const std::string& path) {
  return dataset_from_json(json::parse(read_text_file(path)));
}

inline void save_track(const Track& t, const std::string& path) {
  json j;
  j["track"] = track_to_json(t);
  atomic_write_text(path, j.dump(1) + "\n");
}

inline Track load_track(const std::string& path) {
  return track_from_json(json::parse(read_text_file(path)).at("track"));
}

inline json metrics_to_json(const MetricsRow& m) {
  json j;
  j["mean_abs_dx"] = m.mean_dx;
  j["mean_abs_dy"] = m.mean_dy;
  j["mean_abs_dz"] = m.mean_dz;
  j["mean_abs_droll"] = m.mean_droll;
  j["mean_abs_dpitch"] = m.mean_dpitch;
  j["mean_abs_dyaw"] = m.mean_dyaw;
  j["mean_iou_2d"] = m.mean_iou_2d;
  j["mean_iou_3d"] = m.mean_iou_3d;
  j["per_frame"] = {{"dx", m.dx},         {"dy", m.dy},
                    {"dz", m.dz},         {"droll", m.droll},
                    {"dpitch", m.dpitch}, {"dyaw", m.dyaw},
                    {"iou_2d", m.iou_2d}, {"iou_3d", m.iou_3d}};
  return j;
}

inline MetricsRow metrics_from_json(const json& j) {
  MetricsRow m;
  m.mean_dx = j.at("mean_abs_dx");
  m.mean_dy = j.at("mean_abs_dy");
  m.mean_dz = j.at("mean_abs_dz");
  m.mean_droll = j.at("mean_abs_droll");
  m.mean_dpitch = j.at("mean_abs_dpitch");
  m.mean_dyaw = j.at("mean_abs_dyaw");
  m.mean_iou_2d = j.at("mean_iou_2d");
  m.mean_iou_3d = j.at("mean_iou_3d");
  const json& pf = j.at("per_frame");
  m.dx = pf.at("dx").get<std::vector<double>>();
  m.dy = pf.at("dy").get<std::vector<double>>();
  m.dz = pf.at("dz").get<std::vector<double>>();
  m.droll = pf.at("droll").get<std::vector<double>>();
  m.dpitch = pf.at("dpitch").get<std::vector<double>>();
  m.dyaw = pf.at("dyaw").get<std::vector<double>>();
  m.iou_2d = pf.at("iou_2d").get<std::vector<double>>();
  m.iou_3d = pf.at("iou_3d").get<std::vector<double>>();
  return m;
}

/// Per-frame error table for external plotting. The iou column is the 2D IoU
/// in BEV mode and the 3D IoU otherwise.
inline std::string metrics_to_csv(const MetricsRow& m, SimMode mode) {
  std::ostringstream out;
  out << "frame,dx,dy,dz,droll,dpitch,dyaw,iou\n";
  out.precision(17);
  for (std::size_t i = 0; i < m.dx.size(); ++i) {
    const double iou = mode == SimMode::bev2d ? m.iou_2d[i] : m.iou_3d[i];
    out << i << ',' << m.dx[i] << ',' << m.dy[i] << ',' << m.dz[i] << ','
        << m.droll[i] << ',' << m.dpitch[i] << ',' << m.dyaw[i] << ',' << iou
        << '\n';
  }
  return out.str();
}

/// Companion report for a registration or baseline run.
struct ExperimentReport {
  std::string mode;       // "2d" | "3d"
  std::string optimizer;  // "lbfgs" | "newton" | "window" | "icp"
  AppConfig config;
  MetricsRow initial;
  std::optional<MetricsRow> refined;
  std::optional<MetricsRow> baseline;
  std::vector<double> loss_curve;
  int iterations = 0;
  std::string termination;
  bool window_fallback = false;
  double runtime_seconds = 0.0;
  std::vector<int> skipped_frames;
};

inline json report_to_json(const ExperimentReport& r) {
  json j;
  j["mode"] = r.mode;
  j["optimizer"] = r.optimizer;
  j["config"] = config_to_json(r.config);
  j["initial"] = metrics_to_json(r.initial);
  j["refined"] = r.refined ? metrics_to_json(*r.refined) : json(nullptr);
  j["baseline"] = r.baseline ? metrics_to_json(*r.baseline) : json(nullptr);
  j["loss_curve"] = r.loss_curve;
  j["iterations"] = r.iterations;
  j["termination"] = r.termination;
  j["window_fallback"] = r.window_fallback;
  j["runtime_seconds"] = r.runtime_seconds;
  j["skipped_frames"] = r.skipped_frames;
  return j;
}

inline ExperimentReport report_from_json(const json& j) {
  ExperimentReport r;
  r.mode = j.at("mode");
  r.optimizer = j.at("optimizer");
  r.config = config_from_json(j.at("config"));
  r.initial = metrics_from_json(j.at("initial"));
  if (!j.at("refined").is_null()) r.refined = metrics_from_json(j.at("refined"));
  if (!j.at("baseline").is_null()) r.baseline = metrics_from_json(j.at("baseline"));
  r.loss_curve = j.at("loss_curve").get<std::vector<double>>();
  r.iterations = j.at("iterations");
  r.termination = j.at("termination");
  r.window_fallback = j.at("window_fallback");
  r.runtime_seconds = j.at("runtime_seconds");
  r.skipped_frames = j.at("skipped_frames").get<std::vector<int>>();
  return r;
}

inline void save_report(const ExperimentReport& r, const std::string& path) {
  atomic_write_text(path, report_to_json(r).dump(1) + "\n");
}

}  // namespace boxreg
