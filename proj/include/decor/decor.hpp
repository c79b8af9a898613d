// Umbrella header.
#pragma once

#include "decor/config_file.hpp"
#include "decor/database_io.hpp"
#include "decor/embedding.hpp"
#include "decor/eval.hpp"
#include "decor/feedback_gen.hpp"
#include "decor/nn/grad_check.hpp"
#include "decor/nn/graph.hpp"
#include "decor/nn/layers.hpp"
#include "decor/nn/param_store.hpp"
#include "decor/nn/tensor.hpp"
#include "decor/policy.hpp"
#include "decor/rollout.hpp"
#include "decor/service.hpp"
#include "decor/simulator.hpp"
#include "decor/synth.hpp"
#include "decor/trainer.hpp"
