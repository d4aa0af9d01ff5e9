#pragma once

#include <chrono>
#include <functional>
#include <iostream>

#include "boxreg/io.hpp"

namespace boxreg::cli {

// Exit code contract: 0 success, 2 validation error, 3 numeric failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumeric = 3;

namespace detail {

inline int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  }
}

inline std::string sibling_path(const std::string& base, const char* ext) {
  std::filesystem::path p(base);
  p.replace_extension(ext);
  return p.string();
}

inline OptimMethod method_from_string(const std::string& s) {
  if (s == "lbfgs") return OptimMethod::lbfgs;
  if (s == "newton") return OptimMethod::newton;
  if (s == "window") return OptimMethod::window;
  throw std::invalid_argument("mode must be lbfgs, newton, or window, got '" + s + "'");
}

// The dataset fixes the data semantics; the registration config must agree.
inline void require_mode_match(const Dataset& ds, const AppConfig& cfg) {
  if (ds.meta.mode != cfg.mode) {
    throw std::invalid_argument(std::string("config mode '") + to_string(cfg.mode) +
                                "' does not match dataset mode '" +
                                to_string(ds.meta.mode) + "'");
  }
}

inline MetricsRow metrics_against_gt(const Track& est, const Dataset& ds) {
  return param_errors(est, ds.gt_track, 200000, derive_seed(ds.meta.seed, 777));
}

}  // namespace detail

inline int run_simulate(const std::string& config_path, const std::string& out_path,
                        std::optional<std::uint64_t> seed_override,
                        std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    AppConfig cfg = parse_config_file(config_path);
    if (seed_override) cfg.seed = *seed_override;
    const Dataset ds = build_dataset(cfg);
    save_dataset(ds, out_path);
    out << "wrote " << out_path << " (" << ds.frames.size() << " frames, mode "
        << to_string(cfg.mode) << ", seed " << cfg.seed << ")\n";
    return kExitOk;
  });
}

inline int run_register(const std::string& dataset_path, const std::string& config_path,
                        const std::string& out_path, const std::string& mode,
                        std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    const Dataset ds = load_dataset(dataset_path);
    AppConfig cfg = parse_config_file(config_path);
    detail::require_mode_match(ds, cfg);
    cfg.opt.method = detail::method_from_string(mode);

    const auto t0 = std::chrono::steady_clock::now();
    const RegistrationResult res =
        register_track(ds.initial_track, ds.frames, cfg.loss, cfg.opt);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    ExperimentReport report;
    report.mode = to_string(ds.meta.mode);
    report.optimizer = mode;
    report.config = cfg;
    report.initial = detail::metrics_against_gt(ds.initial_track, ds);
    report.refined = detail::metrics_against_gt(res.refined, ds);
    report.loss_curve = res.loss_curve;
    report.iterations = res.iterations;
    report.termination = to_string(res.reason);
    report.window_fallback = res.window_fallback;
    report.runtime_seconds = seconds;

    save_track(res.refined, out_path);
    const std::string report_path = detail::sibling_path(out_path, ".report.json");
    save_report(report, report_path);
    out << "registered " << ds.frames.size() << " frames in " << res.iterations
        << " iterations (" << to_string(res.reason) << "), loss "
        << res.loss_curve.front() << " -> " << res.loss_curve.back() << "\n"
        << "mean IoU " << (ds.meta.mode == SimMode::bev2d
                               ? report.initial.mean_iou_2d
                               : report.initial.mean_iou_3d)
        << " -> " << (ds.meta.mode == SimMode::bev2d
                          ? report.refined->mean_iou_2d
                          : report.refined->mean_iou_3d)
        << "\nwrote " << out_path << " and " << report_path << "\n";
    return kExitOk;
  });
}

inline int run_evaluate(const std::string& dataset_path, const std::string& track_path,
                        const std::string& out_path, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    const Dataset ds = load_dataset(dataset_path);
    const Track track = load_track(track_path);
    if (track.size() != ds.gt_track.size()) {
      throw std::invalid_argument("track length does not match dataset");
    }
    const MetricsRow metrics = detail::metrics_against_gt(track, ds);
    atomic_write_text(out_path, metrics_to_json(metrics).dump(1) + "\n");
    const std::string csv_path = detail::sibling_path(out_path, ".csv");
    atomic_write_text(csv_path, metrics_to_csv(metrics, ds.meta.mode));
    out << "wrote " << out_path << " and " << csv_path << "\n";
    return kExitOk;
  });
}

inline int run_baseline_icp(const std::string& dataset_path, const std::string& out_path,
                            std::ostream& out = std::cout,
                            std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    const Dataset ds = load_dataset(dataset_path);
    const IcpSettings settings;
    const auto t0 = std::chrono::steady_clock::now();
    const IcpResult res = icp_baseline(ds.frames, ds.initial_track, settings,
                                       derive_seed(ds.meta.seed, 888));
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    ExperimentReport report;
    report.mode = to_string(ds.meta.mode);
    report.optimizer = "icp";
    report.config = ds.meta;
    report.initial = detail::metrics_against_gt(ds.initial_track, ds);
    report.baseline = detail::metrics_against_gt(res.track, ds);
    report.runtime_seconds = seconds;
    report.skipped_frames = res.skipped_frames;

    save_track(res.track, out_path);
    const std::string report_path = detail::sibling_path(out_path, ".report.json");
    save_report(report, report_path);
    out << "icp refined " << ds.frames.size() << " frames ("
        << res.skipped_frames.size() << " skipped), mean IoU "
        << (ds.meta.mode == SimMode::bev2d ? report.initial.mean_iou_2d
                                           : report.initial.mean_iou_3d)
        << " -> " << (ds.meta.mode == SimMode::bev2d
                          ? report.baseline->mean_iou_2d
                          : report.baseline->mean_iou_3d)
        << "\nwrote " << out_path << " and " << report_path << "\n";
    return kExitOk;
  });
}

/// Compares analytic and central-difference gradients at the initial track
/// and at ten random perturbations of it. `corrupt_gradient` is a test hook
/// that injects an error into the analytic gradient (negative control).
inline int run_gradcheck(const std::string& dataset_path, const std::string& config_path,
                         bool corrupt_gradient = false, std::ostream& out = std::cout,
                         std::ostream& err = std::cerr) {
  return detail::guarded(err, [&] {
    const Dataset ds = load_dataset(dataset_path);
    AppConfig cfg = parse_config_file(config_path);
    detail::require_mode_match(ds, cfg);

    NoiseScales wiggle = ds.meta.noise;
    wiggle.x *= 0.3;
    wiggle.y *= 0.3;
    wiggle.z *= 0.3;
    wiggle.roll *= 0.3;
    wiggle.pitch *= 0.3;
    wiggle.yaw *= 0.3;

    double worst = 0.0;
    for (int trial = 0; trial < 11; ++trial) {
      const Track track =
          trial == 0 ? ds.initial_track
                     : perturb_track(ds.initial_track, wiggle,
                                     derive_seed(ds.meta.seed, 5000 + trial));
      TrackTerm analytic = total_loss(track, ds.frames, cfg.loss);
      if (corrupt_gradient) {
        analytic.grad[0] += 1e-2 * (1.0 + std::abs(analytic.grad[0]));
      }
      const Eigen::VectorXd fd =
          finite_diff_gradient(track, ds.frames, cfg.loss, 1e-5);
      for (Eigen::Index i = 0; i < fd.size(); ++i) {
        const double denom =
            std::max({1.0, std::abs(analytic.grad[i]), std::abs(fd[i])});
        worst = std::max(worst, std::abs(analytic.grad[i] - fd[i]) / denom);
      }
    }
    const bool pass = worst < 1e-4;
    out << "gradcheck: max relative error " << worst << " over 11 evaluation points: "
        << (pass ? "PASS" : "FAIL") << "\n";
    return pass ? kExitOk : kExitNumeric;
  });
}

}  // namespace boxreg::cli
