#pragma once

#include "medcurve/error.hpp"
#include "medcurve/rng.hpp"
#include "medcurve/curves.hpp"
#include "medcurve/median_solver.hpp"
#include "medcurve/linearization.hpp"
#include "medcurve/designs.hpp"
#include "medcurve/estimators.hpp"
#include "medcurve/variance.hpp"
#include "medcurve/stratification.hpp"
#include "medcurve/simulation.hpp"
#include "medcurve/io.hpp"
