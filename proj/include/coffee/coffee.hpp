#pragma once

#include "coffee/cache.hpp"
#include "coffee/error.hpp"
#include "coffee/fovcast.hpp"
#include "coffee/grid.hpp"
#include "coffee/kvfile.hpp"
#include "coffee/overlap.hpp"
#include "coffee/report.hpp"
#include "coffee/score.hpp"
#include "coffee/simulate.hpp"
#include "coffee/trace.hpp"
#include "coffee/transgain.hpp"
