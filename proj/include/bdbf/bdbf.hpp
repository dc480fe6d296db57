#pragma once

// Bayesian deep basis fitting: last-layer Bayesian regression over per-pixel
// basis vectors, with calibrated predictive uncertainty and evaluation
// metrics. All components are header-only.

#include "bdbf/basis.hpp"
#include "bdbf/calibration.hpp"
#include "bdbf/common.hpp"
#include "bdbf/fitting.hpp"
#include "bdbf/io.hpp"
#include "bdbf/linalg.hpp"
#include "bdbf/metrics.hpp"
#include "bdbf/prior.hpp"
#include "bdbf/rng.hpp"
#include "bdbf/synth.hpp"
