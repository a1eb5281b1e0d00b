#pragma once

#include "toral/discretize.hpp"
#include "toral/entropy.hpp"
#include "toral/error.hpp"
#include "toral/geometry.hpp"
#include "toral/lattice.hpp"
#include "toral/maps.hpp"
#include "toral/matrix.hpp"
#include "toral/parallel.hpp"
#include "toral/rng.hpp"
