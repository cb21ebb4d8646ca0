#pragma once

// Umbrella header: the whole library.

#include "cam3d/attention.hpp"
#include "cam3d/files.hpp"
#include "cam3d/geometry.hpp"
#include "cam3d/nn.hpp"
#include "cam3d/oracles.hpp"
#include "cam3d/pipeline.hpp"
#include "cam3d/queries.hpp"
#include "cam3d/rng.hpp"
#include "cam3d/sampling.hpp"
#include "cam3d/temporal.hpp"
#include "cam3d/types.hpp"
#include "cam3d/verify.hpp"
