#pragma once

#include "branchy/config.hpp"
#include "branchy/cost.hpp"
#include "branchy/data.hpp"
#include "branchy/engine.hpp"
#include "branchy/errors.hpp"
#include "branchy/kernels.hpp"
#include "branchy/metrics.hpp"
#include "branchy/model_io.hpp"
#include "branchy/models.hpp"
#include "branchy/report.hpp"
#include "branchy/rng.hpp"
#include "branchy/tensor.hpp"
