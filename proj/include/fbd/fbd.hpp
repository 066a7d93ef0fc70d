#pragma once

#include "fbd/backbone.hpp"
#include "fbd/config.hpp"
#include "fbd/data.hpp"
#include "fbd/errors.hpp"
#include "fbd/experiment.hpp"
#include "fbd/gp_blur.hpp"
#include "fbd/gradcheck.hpp"
#include "fbd/metrics.hpp"
#include "fbd/numerics.hpp"
#include "fbd/pipeline.hpp"
#include "fbd/rng.hpp"
#include "fbd/sha256.hpp"
#include "fbd/trainer.hpp"
