#pragma once

#include "simplexci/core.hpp"
#include "simplexci/distributions.hpp"
#include "simplexci/estimators.hpp"
#include "simplexci/inference.hpp"
#include "simplexci/io.hpp"
#include "simplexci/montecarlo.hpp"
#include "simplexci/rng.hpp"
#include "simplexci/simplex_geometry.hpp"
