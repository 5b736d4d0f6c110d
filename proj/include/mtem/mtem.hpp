#pragma once

// Umbrella header for the whole library.

#include "mtem/analysis.hpp"
#include "mtem/brownian.hpp"
#include "mtem/builtins.hpp"
#include "mtem/core.hpp"
#include "mtem/experiments.hpp"
#include "mtem/integrators.hpp"
#include "mtem/parallel.hpp"
#include "mtem/rng.hpp"
#include "mtem/truncation.hpp"
