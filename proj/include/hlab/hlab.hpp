#pragma once

// Umbrella header.

#include "hlab/cg.hpp"
#include "hlab/coarse.hpp"
#include "hlab/common.hpp"
#include "hlab/correctors.hpp"
#include "hlab/field_io.hpp"
#include "hlab/fields.hpp"
#include "hlab/harness.hpp"
#include "hlab/lattice.hpp"
#include "hlab/renorm.hpp"
#include "hlab/solver.hpp"
#include "hlab/spectral.hpp"
#include "hlab/stats.hpp"
#include "hlab/stochproc.hpp"
#include "hlab/twoscale.hpp"
