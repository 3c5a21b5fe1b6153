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

#include "melgen/audio/mel.hpp"

#include <random>
#include <string>
#include <vector>

namespace melgen {

struct SliceResult {
  std::vector<Matrix> crops;
  std::vector<std::string> warnings;
};

/// Longest frame count covering at most `seconds` of audio.
inline int max_frames_for(double seconds, const SpectrogramConfig& cfg) {
  if (!(seconds > 0.0)) throw std::invalid_argument("slice_corpus: max duration must be positive");
  return static_cast<int>(std::floor(seconds * cfg.sample_rate / cfg.hop + 1e-9));
}

/// One random contiguous crop per clip, at most `max_frames` long and
/// rounded down to a multiple of `divisor` frames. Clips shorter than one
/// divisible unit are skipped with a warning.
inline SliceResult slice_corpus(const std::vector<Matrix>& clips, int max_frames, int divisor, std::mt19937_64& rng) {
  if (max_frames < 1) throw std::invalid_argument("slice_corpus: max duration is shorter than one frame");
  if (divisor < 1) throw std::invalid_argument("slice_corpus: divisor must be positive");
  SliceResult out;
  for (std::size_t k = 0; k < clips.size(); ++k) {
    const auto t = static_cast<int>(clips[k].rows());
    const int len = (std::min(t, max_frames) / divisor) * divisor;
    if (len == 0) {
      out.warnings.push_back("clip " + std::to_string(k) + ": " + std::to_string(t) + " frames is shorter than one unit of " +
                             std::to_string(divisor) + "; skipped");
      continue;
    }
    std::uniform_int_distribution<int> start(0, t - len);
    out.crops.push_back(clips[k].middleRows(start(rng), len));
  }
  return out;
}

}  // namespace melgen
