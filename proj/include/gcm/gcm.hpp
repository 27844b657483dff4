#pragma once

// Umbrella header for the grammar-based concurrent action model.

#include "gcm/autodiff.hpp"
#include "gcm/checkpoint.hpp"
#include "gcm/clip.hpp"
#include "gcm/config.hpp"
#include "gcm/data_io.hpp"
#include "gcm/errors.hpp"
#include "gcm/gradcheck.hpp"
#include "gcm/grammar.hpp"
#include "gcm/memory_bank.hpp"
#include "gcm/metrics.hpp"
#include "gcm/nn.hpp"
#include "gcm/nodes.hpp"
#include "gcm/optim.hpp"
#include "gcm/parallel.hpp"
#include "gcm/parse.hpp"
#include "gcm/selfcheck.hpp"
#include "gcm/synth.hpp"
#include "gcm/train.hpp"
