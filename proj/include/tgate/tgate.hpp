#pragma once

#include "tgate/analysis.hpp"
#include "tgate/commands.hpp"
#include "tgate/cost.hpp"
#include "tgate/denoiser.hpp"
#include "tgate/gating.hpp"
#include "tgate/guidance.hpp"
#include "tgate/kernels.hpp"
#include "tgate/pipeline.hpp"
#include "tgate/prng.hpp"
#include "tgate/run_config.hpp"
#include "tgate/scheduler.hpp"
#include "tgate/tensor.hpp"
#include "tgate/tensor_io.hpp"
