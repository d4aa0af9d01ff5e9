#pragma once

#include "boxreg/cli.hpp"
#include "boxreg/eval.hpp"
#include "boxreg/geometry.hpp"
#include "boxreg/io.hpp"
#include "boxreg/losses.hpp"
#include "boxreg/optim.hpp"
#include "boxreg/rng.hpp"
#include "boxreg/simulate.hpp"
