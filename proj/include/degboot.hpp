#pragma once

#include "degboot/bootstrap.hpp"
#include "degboot/derivative.hpp"
#include "degboot/error.hpp"
#include "degboot/inference.hpp"
#include "degboot/io.hpp"
#include "degboot/moments.hpp"
#include "degboot/montecarlo.hpp"
#include "degboot/parallel.hpp"
#include "degboot/resample.hpp"
#include "degboot/rng.hpp"
#include "degboot/simulate.hpp"
#include "degboot/sphere_grid.hpp"
#include "degboot/sphereopt.hpp"
#include "degboot/version.hpp"
