#pragma once

#include "odernn/errors.hpp"
#include "odernn/numerics/matrix.hpp"
#include "odernn/numerics/rng.hpp"
#include "odernn/numerics/layers.hpp"
#include "odernn/numerics/recurrent.hpp"
#include "odernn/numerics/adam.hpp"
#include "odernn/odesolve.hpp"
#include "odernn/channel/channel.hpp"
#include "odernn/channel/sequence.hpp"
#include "odernn/models/models.hpp"
#include "odernn/models/forward.hpp"
#include "odernn/training/engines.hpp"
#include "odernn/training/train.hpp"
#include "odernn/eval/metrics.hpp"
#include "odernn/eval/sweep.hpp"
#include "odernn/config.hpp"
#include "odernn/io.hpp"
