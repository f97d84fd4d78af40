#pragma once

// Umbrella header.
#include "poolbalance/config.hpp"
#include "poolbalance/csv.hpp"
#include "poolbalance/engine.hpp"
#include "poolbalance/errors.hpp"
#include "poolbalance/experiment.hpp"
#include "poolbalance/fluid.hpp"
#include "poolbalance/fluid_system.hpp"
#include "poolbalance/load_schedule.hpp"
#include "poolbalance/metrics.hpp"
#include "poolbalance/occupancy.hpp"
#include "poolbalance/oracle.hpp"
#include "poolbalance/policy.hpp"
#include "poolbalance/rng.hpp"
