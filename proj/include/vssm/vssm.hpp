#pragma once

#include "vssm/bench.hpp"
#include "vssm/checkpoint.hpp"
#include "vssm/config.hpp"
#include "vssm/diffusion.hpp"
#include "vssm/global_memory.hpp"
#include "vssm/hybrid_model.hpp"
#include "vssm/interchange.hpp"
#include "vssm/kernels.hpp"
#include "vssm/local_attention.hpp"
#include "vssm/matrix.hpp"
#include "vssm/rolling_cache.hpp"
#include "vssm/router.hpp"
#include "vssm/weights.hpp"
