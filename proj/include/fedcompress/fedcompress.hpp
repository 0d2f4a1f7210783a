// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "fedcompress/codec.hpp"
#include "fedcompress/compression.hpp"
#include "fedcompress/config.hpp"
#include "fedcompress/controller.hpp"
#include "fedcompress/data.hpp"
#include "fedcompress/distillation.hpp"
#include "fedcompress/error.hpp"
#include "fedcompress/experiment.hpp"
#include "fedcompress/matrix.hpp"
#include "fedcompress/nn.hpp"
#include "fedcompress/random.hpp"
#include "fedcompress/rep_score.hpp"
#include "fedcompress/report.hpp"
#include "fedcompress/runtime.hpp"
