#pragma once

#include "gpllm/random.hpp"
#include "gpllm/kernel.hpp"
#include "gpllm/model.hpp"
#include "gpllm/prior.hpp"
#include "gpllm/sampler.hpp"
#include "gpllm/predict.hpp"
#include "gpllm/treed.hpp"
#include "gpllm/dataset.hpp"
#include "gpllm/csv.hpp"
#include "gpllm/generators.hpp"
#include "gpllm/explore.hpp"
#include "gpllm/config.hpp"
#include "gpllm/experiment.hpp"
#include "gpllm/io.hpp"
