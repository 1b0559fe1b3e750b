// Copyright 2026 The Depthbrush Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "depthbrush/error.hpp"
#include "depthbrush/imaging.hpp"
#include "depthbrush/maskgen.hpp"

namespace depthbrush {

/// Hard mask-driven composite: subject pixels (mask 1) come from the
/// original, everything else from the new background. No blending.
inline RasterImage replace_background(const RasterImage& original, const RasterImage& background,
                                      const BinaryMask& subject) {
  if (!original.same_dims(background) || original.channels != background.channels) {
    throw Error(ErrorCode::kDimMismatch, "background must match the original's dims");
  }
  if (!subject.same_dims(original.width, original.height)) {
    throw Error(ErrorCode::kDimMismatch, "subject mask must match the original's dims");
  }
  RasterImage out = background;
  const int c = original.channels;
  for (std::size_t i = 0; i < subject.bits.size(); ++i) {
    if (subject.bits[i]) {
      for (int k = 0; k < c; ++k) out.data[i * c + k] = original.data[i * c + k];
    }
  }
  return out;
}

}  // namespace depthbrush
