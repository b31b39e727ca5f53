#pragma once

#include "stnl/checkpoint.hpp"
#include "stnl/config.hpp"
#include "stnl/conv3d.hpp"
#include "stnl/eval.hpp"
#include "stnl/gradcheck.hpp"
#include "stnl/layers.hpp"
#include "stnl/losses.hpp"
#include "stnl/model.hpp"
#include "stnl/nonlocal.hpp"
#include "stnl/optim.hpp"
#include "stnl/rng.hpp"
#include "stnl/sampler.hpp"
#include "stnl/tensor.hpp"
#include "stnl/tensor_io.hpp"
#include "stnl/textio.hpp"
#include "stnl/train.hpp"
