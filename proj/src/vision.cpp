#include "ar3d/vision.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ar3d {

void Clip::validate() const {
  if (frames.rank() != 3) throw Error("clip frames must be [T,H,W], got " + shape_str(frames.shape()));
  if (!(fps > 0.0) || !std::isfinite(fps)) throw Error("clip fps must be positive");
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const float v = frames[i];
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
      throw Error("clip pixel " + std::to_string(i) + " outside [0,1]");
    }
  }
}

void PreprocessConfig::validate() const {
  if (!(seconds > 0.0)) throw Error("preprocess seconds (S) must be > 0");
  if (frames < 1) throw Error("preprocess frame count (N) must be >= 1");
  if (height < 1 || width < 1) throw Error("preprocess target size must be >= 1x1");
  if (bg_threshold && !(*bg_threshold > 0.0 && *bg_threshold < 1.0)) {
    throw Error("background threshold must lie in (0,1)");
  }
}

std::vector<std::size_t> sample_indices(std::size_t total_frames, double fps, double seconds,
                                        std::size_t count) {
  if (count == 0) throw Error("frame sampler needs N >= 1");
  const auto window = static_cast<std::size_t>(std::floor(seconds * fps + 1e-9));
  const std::size_t F = std::min(total_frames, window);
  if (F < count) {
    std::ostringstream os;
    os << "clip too short: " << F << " frames available in the first " << seconds << " s (" << total_frames
       << " frames at " << fps << " fps) but " << count << " are required; need at least "
       << static_cast<double>(count) / fps << " s of footage";
    throw Error(os.str());
  }
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i * F / count;
  return idx;
}

Clip sample_frames(const Clip& clip, double seconds, std::size_t count) {
  const auto idx = sample_indices(clip.length(), clip.fps, seconds, count);
  const std::size_t plane = clip.height() * clip.width();
  Clip out{Tensor({count, clip.height(), clip.width()}), clip.fps};
  for (std::size_t i = 0; i < count; ++i) {
    const auto src = clip.frames.data().subspan(idx[i] * plane, plane);
    std::copy(src.begin(), src.end(), out.frames.data().begin() + i * plane);
  }
  return out;
}

Tensor median_reference(const Clip& clip) {
  const std::size_t T = clip.length(), plane = clip.height() * clip.width();
  Tensor ref({clip.height(), clip.width()});
  std::vector<float> column(T);
  const std::size_t mid = (T - 1) / 2;  // lower middle for even counts
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t t = 0; t < T; ++t) column[t] = clip.frames[t * plane + p];
    std::nth_element(column.begin(), column.begin() + mid, column.end());
    ref[p] = column[mid];
  }
  return ref;
}

Clip background_subtract(const Clip& clip, std::optional<double> threshold) {
  if (clip.frames.rank() != 3) throw Error("background subtraction needs a [T,H,W] clip");
  if (clip.length() < 3) {
    throw Error("background subtraction needs at least 3 frames, got " + std::to_string(clip.length()));
  }
  const Tensor ref = median_reference(clip);
  const std::size_t plane = ref.size();
  Clip out{Tensor(clip.frames.shape()), clip.fps};
  for (std::size_t i = 0; i < clip.frames.size(); ++i) {
    float d = std::abs(clip.frames[i] - ref[i % plane]);
    if (threshold) d = d >= *threshold ? 1.0f : 0.0f;
    out.frames[i] = std::min(d, 1.0f);
  }
  return out;
}

Tensor resize_bilinear(const Tensor& frame, std::size_t out_h, std::size_t out_w) {
  if (frame.rank() != 2) throw Error("resize expects a [H,W] frame, got " + shape_str(frame.shape()));
  if (out_h == 0 || out_w == 0) throw Error("resize target dimensions must be >= 1");
  const std::size_t H = frame.dim(0), W = frame.dim(1);
  if (H == out_h && W == out_w) return frame;
  auto coords = [](std::size_t out, std::size_t in) {
    struct Tap {
      std::size_t lo, hi;
      double frac;
    };
    std::vector<Tap> taps(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
      double s = (static_cast<double>(i) + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(s));
      taps[i] = {lo, std::min(lo + 1, in - 1), s - static_cast<double>(lo)};
    }
    return taps;
  };
  const auto ty = coords(out_h, H);
  const auto tx = coords(out_w, W);
  Tensor out({out_h, out_w});
  for (std::size_t i = 0; i < out_h; ++i) {
    const float* r0 = frame.data().data() + ty[i].lo * W;
    const float* r1 = frame.data().data() + ty[i].hi * W;
    for (std::size_t j = 0; j < out_w; ++j) {
      const auto& x = tx[j];
      const double top = r0[x.lo] * (1.0 - x.frac) + r0[x.hi] * x.frac;
      const double bot = r1[x.lo] * (1.0 - x.frac) + r1[x.hi] * x.frac;
      const double v = top * (1.0 - ty[i].frac) + bot * ty[i].frac;
      out[i * out_w + j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

Clip resize_clip(const Clip& clip, std::size_t out_h, std::size_t out_w) {
  const std::size_t T = clip.length(), H = clip.height(), W = clip.width();
  Clip out{Tensor({T, out_h, out_w}), clip.fps};
  for (std::size_t t = 0; t < T; ++t) {
    const auto src = clip.frames.data().subspan(t * H * W, H * W);
    const Tensor frame({H, W}, std::vector<float>(src.begin(), src.end()));
    const Tensor r = resize_bilinear(frame, out_h, out_w);
    std::copy(r.data().begin(), r.data().end(), out.frames.data().begin() + t * out_h * out_w);
  }
  return out;
}

Clip hflip(const Clip& clip) {
  const std::size_t T = clip.length(), H = clip.height(), W = clip.width();
  Clip out{Tensor(clip.frames.shape()), clip.fps};
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t row = (t * H + h) * W;
      for (std::size_t w = 0; w < W; ++w) out.frames[row + w] = clip.frames[row + W - 1 - w];
    }
  return out;
}

Tensor preprocess(const Clip& clip, const PreprocessConfig& cfg) {
  cfg.validate();
  Clip c = sample_frames(clip, cfg.seconds, cfg.frames);
  if (cfg.bg_sub) c = background_subtract(c, cfg.bg_threshold);
  c = resize_clip(c, cfg.height, cfg.width);
  return c.frames.reshaped({1, cfg.frames, cfg.height, cfg.width});
}

}  // namespace ar3d
