#pragma once

#include "timecaps/adam.hpp"
#include "timecaps/capsule.hpp"
#include "timecaps/checkpoint.hpp"
#include "timecaps/config_io.hpp"
#include "timecaps/data.hpp"
#include "timecaps/error.hpp"
#include "timecaps/grad_check.hpp"
#include "timecaps/graph.hpp"
#include "timecaps/kernels.hpp"
#include "timecaps/model.hpp"
#include "timecaps/ops.hpp"
#include "timecaps/tensor.hpp"
#include "timecaps/training.hpp"
#include "timecaps/verify.hpp"
#include "timecaps/run_config.hpp"
