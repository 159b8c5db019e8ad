#pragma once

#include "slicemoa/attention.hpp"
#include "slicemoa/backbone.hpp"
#include "slicemoa/cache.hpp"
#include "slicemoa/checkpoint.hpp"
#include "slicemoa/data.hpp"
#include "slicemoa/error.hpp"
#include "slicemoa/featurize.hpp"
#include "slicemoa/metrics.hpp"
#include "slicemoa/model.hpp"
#include "slicemoa/ops.hpp"
#include "slicemoa/random.hpp"
#include "slicemoa/report.hpp"
#include "slicemoa/slicing.hpp"
#include "slicemoa/tensor.hpp"
#include "slicemoa/training.hpp"
