#pragma once

// Umbrella header for the full library.

#include "engageformer/checkpoint.hpp"
#include "engageformer/config.hpp"
#include "engageformer/data.hpp"
#include "engageformer/encoder.hpp"
#include "engageformer/fusion.hpp"
#include "engageformer/graph.hpp"
#include "engageformer/metrics.hpp"
#include "engageformer/model.hpp"
#include "engageformer/ops.hpp"
#include "engageformer/optimizer.hpp"
#include "engageformer/rng.hpp"
#include "engageformer/tensor.hpp"
#include "engageformer/tokenizer.hpp"
#include "engageformer/train.hpp"
