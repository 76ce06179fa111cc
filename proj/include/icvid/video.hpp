#pragma once

#include "icvid/tensor.hpp"

namespace icvid {

// Videos are dense [frames x H x W x 3] tensors with values in [0,1].
using VideoClip = Tensor<float>;

inline constexpr float kBackground = 0.1f;

inline VideoClip make_clip(int frames, int h, int w, float fill = kBackground) {
  return VideoClip({frames, h, w, 3}, fill);
}

inline float* frame_ptr(VideoClip& v, int k) {
  return v.data() + static_cast<int64_t>(k) * v.dim(1) * v.dim(2) * v.dim(3);
}

inline const float* frame_ptr(const VideoClip& v, int k) {
  return v.data() + static_cast<int64_t>(k) * v.dim(1) * v.dim(2) * v.dim(3);
}

// Extracts frame k as an [H x W x 3] tensor.
inline Tensor<float> frame_of(const VideoClip& v, int k) {
  Tensor<float> f({v.dim(1), v.dim(2), v.dim(3)});
  const float* src = frame_ptr(v, k);
  std::copy(src, src + f.numel(), f.data());
  return f;
}

// Content shift: dst(i, j) = src(i - dy, j - dx), background fill outside.
// dy > 0 moves content down, dx > 0 moves content right; no wraparound.
inline void shift_frame(const float* src, float* dst, int h, int w, int dy,
                        int dx, float fill = kBackground) {
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const int si = i - dy, sj = j - dx;
      float* d = dst + (static_cast<int64_t>(i) * w + j) * 3;
      if (si >= 0 && si < h && sj >= 0 && sj < w) {
        const float* s = src + (static_cast<int64_t>(si) * w + sj) * 3;
        d[0] = s[0];
        d[1] = s[1];
        d[2] = s[2];
      } else {
        d[0] = fill;
        d[1] = fill;
        d[2] = fill;
      }
    }
}

}  // namespace icvid
