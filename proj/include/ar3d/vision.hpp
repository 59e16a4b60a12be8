#pragma once

#include <optional>
#include <vector>

#include "ar3d/tensor.hpp"

namespace ar3d {

/// Grayscale frame stack [T,H,W] with pixel values in [0,1].
struct Clip {
  Tensor frames{Shape{1, 1, 1}};
  double fps = 25.0;

  std::size_t length() const { return frames.dim(0); }
  std::size_t height() const { return frames.dim(1); }
  std::size_t width() const { return frames.dim(2); }

  /// Throws unless rank 3, fps > 0 and every pixel is finite and within [0,1].
  void validate() const;
  bool operator==(const Clip&) const = default;
};

struct PreprocessConfig {
  double seconds = 7.0;   // S: leading seconds considered
  std::size_t frames = 35;  // N: frames sampled from them
  std::size_t height = 20;
  std::size_t width = 20;
  bool bg_sub = true;
  std::optional<double> bg_threshold;

  void validate() const;
  bool operator==(const PreprocessConfig&) const = default;
};

/// Frame indices floor(i*F/N), F = min(T, floor(S*fps)).
std::vector<std::size_t> sample_indices(std::size_t total_frames, double fps, double seconds,
                                        std::size_t count);

Clip sample_frames(const Clip& clip, double seconds, std::size_t count);

/// Per-pixel temporal median (lower middle for even T).
Tensor median_reference(const Clip& clip);

/// |frame - median|, optionally binarized at `threshold`.
Clip background_subtract(const Clip& clip, std::optional<double> threshold = std::nullopt);

/// Pixel-center bilinear resampling of one [H,W] frame.
Tensor resize_bilinear(const Tensor& frame, std::size_t out_h, std::size_t out_w);

Clip resize_clip(const Clip& clip, std::size_t out_h, std::size_t out_w);

Clip hflip(const Clip& clip);

/// sample -> optional background subtraction -> resize -> [1,N,H,W].
Tensor preprocess(const Clip& clip, const PreprocessConfig& cfg);

}  // namespace ar3d
