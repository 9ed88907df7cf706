#pragma once

// Umbrella header for the whole library.

#include "baselines.hpp"
#include "common.hpp"
#include "core.hpp"
#include "dcorr.hpp"
#include "evalmetrics.hpp"
#include "graphspec.hpp"
#include "inference.hpp"
#include "report.hpp"
#include "rng.hpp"
#include "simgen.hpp"
#include "tensorio.hpp"
