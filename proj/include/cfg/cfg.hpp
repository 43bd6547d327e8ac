#pragma once

// Umbrella header for the contact factor graph library.

#include "cfg/baselines.hpp"
#include "cfg/coulomb.hpp"
#include "cfg/energy.hpp"
#include "cfg/errors.hpp"
#include "cfg/factors.hpp"
#include "cfg/geometry.hpp"
#include "cfg/graph.hpp"
#include "cfg/inner_solver.hpp"
#include "cfg/log.hpp"
#include "cfg/outer.hpp"
#include "cfg/parallel.hpp"
#include "cfg/scenario.hpp"
#include "cfg/scene.hpp"
#include "cfg/validate.hpp"
