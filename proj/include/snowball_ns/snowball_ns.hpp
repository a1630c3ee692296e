#pragma once

#include "snowball_ns/core.hpp"
#include "snowball_ns/lrps.hpp"
#include "snowball_ns/memo.hpp"
#include "snowball_ns/numeric.hpp"
#include "snowball_ns/persistence.hpp"
#include "snowball_ns/point.hpp"
#include "snowball_ns/problems.hpp"
#include "snowball_ns/rng.hpp"
#include "snowball_ns/snowball.hpp"
#include "snowball_ns/trace.hpp"
