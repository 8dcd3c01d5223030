#pragma once

#include "scorelab/attacks.hpp"
#include "scorelab/autodiff.hpp"
#include "scorelab/dataset.hpp"
#include "scorelab/diffusion.hpp"
#include "scorelab/errors.hpp"
#include "scorelab/evaluation.hpp"
#include "scorelab/gradcheck.hpp"
#include "scorelab/io.hpp"
#include "scorelab/manifest.hpp"
#include "scorelab/metrics.hpp"
#include "scorelab/nn.hpp"
#include "scorelab/purify.hpp"
#include "scorelab/random.hpp"
#include "scorelab/schedule.hpp"
#include "scorelab/tensor.hpp"
#include "scorelab/threading.hpp"
#include "scorelab/train.hpp"
