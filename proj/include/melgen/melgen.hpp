// Copyright 2026 The melgen Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "melgen/audio/fft.hpp"
#include "melgen/audio/inversion.hpp"
#include "melgen/audio/mel.hpp"
#include "melgen/audio/wav.hpp"
#include "melgen/baselines/benchmark.hpp"
#include "melgen/baselines/frame_models.hpp"
#include "melgen/core/ops.hpp"
#include "melgen/core/parameters.hpp"
#include "melgen/core/recurrent.hpp"
#include "melgen/core/tape.hpp"
#include "melgen/density/gmm.hpp"
#include "melgen/multiscale/tiers.hpp"
#include "melgen/net/frame_stack.hpp"
#include "melgen/net/network.hpp"
#include "melgen/runtime/checkpoint.hpp"
#include "melgen/runtime/corpus.hpp"
#include "melgen/runtime/optimizer.hpp"
#include "melgen/runtime/sampling.hpp"
#include "melgen/runtime/train.hpp"
#include "melgen/tts/attention.hpp"
#include "melgen/tts/vocabulary.hpp"
