// Copyright 2026 The SpikeForge Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "spikeforge/analysis.hpp"
#include "spikeforge/ann.hpp"
#include "spikeforge/calibration.hpp"
#include "spikeforge/data.hpp"
#include "spikeforge/error.hpp"
#include "spikeforge/graph.hpp"
#include "spikeforge/kernels.hpp"
#include "spikeforge/rewrite.hpp"
#include "spikeforge/serialization.hpp"
#include "spikeforge/snn.hpp"
#include "spikeforge/tensor.hpp"
#include "spikeforge/threshold.hpp"

#define SPIKEFORGE_VERSION "0.1.0"
