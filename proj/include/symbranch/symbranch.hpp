#pragma once

#include "errors.hpp"
#include "stats.hpp"
#include "random.hpp"
#include "parallel.hpp"
#include "uniformization.hpp"
#include "migration.hpp"
#include "noise.hpp"
#include "sbm_sde.hpp"
#include "dual.hpp"
#include "quadrant.hpp"
#include "infinite_rate.hpp"
