// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "reattn/attend.hpp"
#include "reattn/dense_matrix.hpp"
#include "reattn/engine.hpp"
#include "reattn/full_attention.hpp"
#include "reattn/harness.hpp"
#include "reattn/kv_cache.hpp"
#include "reattn/metrics.hpp"
#include "reattn/model.hpp"
#include "reattn/needle.hpp"
#include "reattn/rope.hpp"
#include "reattn/scope.hpp"
#include "reattn/selection.hpp"
#include "reattn/selection_reference.hpp"
#include "reattn/softmax.hpp"
#include "reattn/window_reference.hpp"
