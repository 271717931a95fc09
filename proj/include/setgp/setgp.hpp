#pragma once

#define SETGP_VERSION_MAJOR 0
#define SETGP_VERSION_MINOR 1
#define SETGP_VERSION_PATCH 0

#include "setgp/errors.hpp"
#include "setgp/point_set.hpp"
#include "setgp/kernels.hpp"
#include "setgp/gp.hpp"
#include "setgp/hyperfit.hpp"
#include "setgp/bayesopt.hpp"
#include "setgp/testbed.hpp"
