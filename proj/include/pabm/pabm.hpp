#pragma once

// Umbrella header.

#include "pabm/blocks.hpp"
#include "pabm/checkpoint.hpp"
#include "pabm/common.hpp"
#include "pabm/data.hpp"
#include "pabm/gradcheck.hpp"
#include "pabm/model.hpp"
#include "pabm/ops.hpp"
#include "pabm/optim.hpp"
#include "pabm/params.hpp"
#include "pabm/pointops.hpp"
#include "pabm/random.hpp"
#include "pabm/runconfig.hpp"
#include "pabm/scan.hpp"
#include "pabm/tensor.hpp"
#include "pabm/train.hpp"
