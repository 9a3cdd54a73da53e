// Umbrella header.
#pragma once

#include "rulesent/analysis.hpp"
#include "rulesent/checkpoint.hpp"
#include "rulesent/cnn_model.hpp"
#include "rulesent/crowd.hpp"
#include "rulesent/distill.hpp"
#include "rulesent/embeddings.hpp"
#include "rulesent/error.hpp"
#include "rulesent/eval_stats.hpp"
#include "rulesent/rules.hpp"
#include "rulesent/sst_data.hpp"
#include "rulesent/tensor.hpp"
#include "rulesent/types.hpp"
