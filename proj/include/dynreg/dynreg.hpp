#pragma once

// Umbrella header for the dynreg library: identification of the latent linear
// dynamics driving time-varying regression coefficients.

#include "dynreg/baseline.hpp"
#include "dynreg/bench.hpp"
#include "dynreg/cm.hpp"
#include "dynreg/em.hpp"
#include "dynreg/errors.hpp"
#include "dynreg/io.hpp"
#include "dynreg/linalg.hpp"
#include "dynreg/model.hpp"
#include "dynreg/rng.hpp"
#include "dynreg/simulate.hpp"
#include "dynreg/svec.hpp"
