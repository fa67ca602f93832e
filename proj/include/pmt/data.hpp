#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "pmt/io.hpp"
#include "pmt/ops.hpp"
#include "pmt/rng.hpp"
#include "pmt/tensor.hpp"
#include "pmt/train_config.hpp"

namespace pmt {

template <typename S>
struct SegmentationSample {
  std::string id;
  Tensor<S> image;  // [C,H,W], values in [0,1]
  Tensor<S> mask;   // [1,H,W], values in {0,1}
};

// ---------------------------------------------------------------------------
// synthetic blob data
// ---------------------------------------------------------------------------

struct EllipseSpec {
  double cy, cx;    // center, pixel units
  double ry, rx;    // semi-axes
  double angle;     // radians
  double intensity;
};

namespace detail {

inline bool inside_ellipse(const EllipseSpec& e, double y, double x, double* radial = nullptr) {
  const double dy = y - e.cy, dx = x - e.cx;
  const double c = std::cos(e.angle), s = std::sin(e.angle);
  const double u = (c * dx + s * dy) / e.rx;
  const double v = (-s * dx + c * dy) / e.ry;
  const double r = std::sqrt(u * u + v * v);
  if (radial) *radial = r;
  return r <= 1.0;
}

}  // namespace detail

// Draws 1-6 ellipses spanning a wide size range (some thinner than an eighth
// of the extent, some wider than half of it), applies soft-edged intensity
// blending plus background noise, and keeps the exact ellipse union as the
// mask. Samples are redrawn until the foreground fraction lies in
// [0.05, 0.6].
template <typename S>
SegmentationSample<S> synth_sample(Index H, Index W, const std::string& id, RandomSource& rng,
                                   std::vector<EllipseSpec>* ellipses_out = nullptr) {
  const double extent = static_cast<double>(std::min(H, W));
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::vector<EllipseSpec> ellipses;
    const Index count = 1 + rng.uniform_index(6);
    for (Index e = 0; e < count; ++e) {
      EllipseSpec spec;
      const double cls = rng.uniform();
      double lo, hi;
      if (cls < 0.3) {
        lo = extent / 24.0;
        hi = extent / 16.0;  // diameter below extent/8
      } else if (cls < 0.75) {
        lo = extent / 12.0;
        hi = extent / 6.0;
      } else {
        lo = extent / 4.0;
        hi = extent / 2.8;  // diameter above extent/2
      }
      spec.ry = rng.uniform(lo, hi);
      spec.rx = rng.uniform(lo, hi);
      spec.cy = rng.uniform(0.1 * H, 0.9 * H);
      spec.cx = rng.uniform(0.1 * W, 0.9 * W);
      spec.angle = rng.uniform(0.0, 3.14159265358979323846);
      spec.intensity = rng.uniform(0.55, 0.95);
      ellipses.push_back(spec);
    }

    Tensor<S> mask({1, H, W});
    Index fg = 0;
    for (Index y = 0; y < H; ++y) {
      for (Index x = 0; x < W; ++x) {
        bool inside = false;
        for (const auto& e : ellipses)
          if (detail::inside_ellipse(e, static_cast<double>(y), static_cast<double>(x))) {
            inside = true;
            break;
          }
        mask.data()[y * W + x] = inside ? S(1) : S(0);
        fg += inside;
      }
    }
    const double fraction = static_cast<double>(fg) / static_cast<double>(H * W);
    if (fraction < 0.05 || fraction > 0.6) continue;

    Tensor<S> image({1, H, W});
    const double base = rng.uniform(0.1, 0.25);
    for (Index y = 0; y < H; ++y) {
      for (Index x = 0; x < W; ++x) {
        double v = base + 0.03 * rng.normal();
        for (const auto& e : ellipses) {
          double r = 0.0;
          detail::inside_ellipse(e, static_cast<double>(y), static_cast<double>(x), &r);
          const double edge = 2.0 / std::min(e.ry, e.rx);  // ~2px soft edge in radial units
          const double alpha = std::clamp(0.5 + (1.0 - r) / (2.0 * edge), 0.0, 1.0);
          if (alpha > 0.0) v = v * (1.0 - alpha) + e.intensity * alpha;
        }
        image.data()[y * W + x] = static_cast<S>(std::clamp(v, 0.0, 1.0));
      }
    }

    if (ellipses_out) *ellipses_out = std::move(ellipses);
    return SegmentationSample<S>{id, image, mask};
  }
  throw ContractError("synth-retry-exhausted", "could not draw a sample with foreground in range");
}

template <typename S>
std::vector<SegmentationSample<S>> generate_synthetic_dataset(Index count, Index H, Index W,
                                                              std::uint64_t seed) {
  if (H % 16 != 0 || W % 16 != 0)
    throw ConfigError("synthetic dataset size " + std::to_string(H) + "x" + std::to_string(W) +
                      " must be divisible by 16");
  RandomSource rng(seed);
  std::vector<SegmentationSample<S>> samples;
  samples.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "sample_%04lld", static_cast<long long>(i));
    samples.push_back(synth_sample<S>(H, W, id, rng));
  }
  return samples;
}

// ---------------------------------------------------------------------------
// augmentation: random shift, rotation, flips; the same transform is applied
// to the image (bilinear) and the mask (nearest, re-binarized)
// ---------------------------------------------------------------------------

struct AugmentDraw {
  double shift_y = 0.0;   // pixels
  double shift_x = 0.0;
  double angle = 0.0;     // radians
  bool flip_h = false;    // mirror along the width axis
  bool flip_v = false;    // mirror along the height axis
};

inline AugmentDraw draw_augmentation(const TrainConfig& cfg, Index H, Index W, RandomSource& rng) {
  AugmentDraw d;
  d.shift_y = rng.uniform(-cfg.aug_shift, cfg.aug_shift) * static_cast<double>(H);
  d.shift_x = rng.uniform(-cfg.aug_shift, cfg.aug_shift) * static_cast<double>(W);
  d.angle = rng.uniform(-cfg.aug_rotate_deg, cfg.aug_rotate_deg) * 3.14159265358979323846 / 180.0;
  d.flip_h = rng.bernoulli(cfg.aug_flip_prob);
  d.flip_v = rng.bernoulli(cfg.aug_flip_prob);
  return d;
}

namespace detail {

// Inverse-maps an output pixel to source coordinates: undo shift, undo
// rotation about the image center, then undo flips.
inline void inverse_map(const AugmentDraw& d, Index H, Index W, Index oy, Index ox, double& sy,
                        double& sx) {
  const double cy = (static_cast<double>(H) - 1.0) / 2.0;
  const double cx = (static_cast<double>(W) - 1.0) / 2.0;
  double y = static_cast<double>(oy) - d.shift_y - cy;
  double x = static_cast<double>(ox) - d.shift_x - cx;
  const double c = std::cos(d.angle), s = std::sin(d.angle);
  sy = c * y + s * x + cy;
  sx = -s * y + c * x + cx;
  if (d.flip_h) sx = static_cast<double>(W) - 1.0 - sx;
  if (d.flip_v) sy = static_cast<double>(H) - 1.0 - sy;
}

}  // namespace detail

template <typename S>
SegmentationSample<S> apply_augmentation(const SegmentationSample<S>& sample,
                                         const AugmentDraw& draw) {
  const Index C = sample.image.dim(0), H = sample.image.dim(1), W = sample.image.dim(2);
  SegmentationSample<S> out;
  out.id = sample.id;
  out.image = Tensor<S>({C, H, W});
  out.mask = Tensor<S>({1, H, W});
  for (Index oy = 0; oy < H; ++oy) {
    for (Index ox = 0; ox < W; ++ox) {
      double sy, sx;
      detail::inverse_map(draw, H, W, oy, ox, sy, sx);
      // image: bilinear, zero outside
      const Index y0 = static_cast<Index>(std::floor(sy));
      const Index x0 = static_cast<Index>(std::floor(sx));
      const double fy = sy - static_cast<double>(y0);
      const double fx = sx - static_cast<double>(x0);
      for (Index c = 0; c < C; ++c) {
        auto at = [&](Index y, Index x) -> double {
          if (y < 0 || y >= H || x < 0 || x >= W) return 0.0;
          return static_cast<double>(sample.image.data()[(c * H + y) * W + x]);
        };
        const double v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                         fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
        out.image.data()[(c * H + oy) * W + ox] = static_cast<S>(v);
      }
      // mask: nearest, zero outside, exactly binary by construction
      const Index ny = static_cast<Index>(std::llround(sy));
      const Index nx = static_cast<Index>(std::llround(sx));
      S m = S(0);
      if (ny >= 0 && ny < H && nx >= 0 && nx < W)
        m = sample.mask.data()[ny * W + nx] >= S(0.5) ? S(1) : S(0);
      out.mask.data()[oy * W + ox] = m;
    }
  }
  return out;
}

template <typename S>
SegmentationSample<S> augment_sample(const SegmentationSample<S>& sample, const TrainConfig& cfg,
                                     RandomSource& rng) {
  const Index H = sample.image.dim(1), W = sample.image.dim(2);
  return apply_augmentation(sample, draw_augmentation(cfg, H, W, rng));
}

// Nearest-neighbor mask downsampling by an integer factor (top-left rule),
// preserving binarity.
template <typename S>
Tensor<S> nearest_downsample_mask(const Tensor<S>& mask, Index factor) {
  detail::check_rank(mask, 4, "nearest_downsample_mask input");
  const Index N = mask.dim(0), C = mask.dim(1), H = mask.dim(2), W = mask.dim(3);
  if (factor < 1 || H % factor != 0 || W % factor != 0)
    throw DimensionError("downsample factor " + std::to_string(factor) + " for " +
                         shape_str(mask.shape()));
  const Index Ho = H / factor, Wo = W / factor;
  Tensor<S> out({N, C, Ho, Wo});
  for (Index nc = 0; nc < N * C; ++nc)
    for (Index y = 0; y < Ho; ++y)
      for (Index x = 0; x < Wo; ++x)
        out.data()[nc * Ho * Wo + y * Wo + x] =
            mask.data()[nc * H * W + (y * factor) * W + (x * factor)];
  return out;
}

// ---------------------------------------------------------------------------
// dataset directory layout: images/<id>.pmtn + masks/<id>.pmtn
// ---------------------------------------------------------------------------

template <typename S>
void save_dataset(const std::string& dir, const std::vector<SegmentationSample<S>>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  for (const auto& s : samples) {
    write_pmtn((fs::path(dir) / "images" / (s.id + ".pmtn")).string(), to_f32_record(s.image));
    write_pmtn((fs::path(dir) / "masks" / (s.id + ".pmtn")).string(), to_u8_record(s.mask));
  }
}

template <typename S>
std::vector<SegmentationSample<S>> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path images = fs::path(dir) / "images";
  const fs::path masks = fs::path(dir) / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks))
    throw IoError("missing-dataset-dirs", dir + " must contain images/ and masks/");
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(images))
    if (entry.path().extension() == ".pmtn") ids.push_back(entry.path().stem().string());
  std::sort(ids.begin(), ids.end());
  std::vector<SegmentationSample<S>> samples;
  samples.reserve(ids.size());
  for (const auto& id : ids) {
    SegmentationSample<S> s;
    s.id = id;
    s.image = tensor_from_record<S>(read_pmtn((images / (id + ".pmtn")).string()));
    const fs::path mask_path = masks / (id + ".pmtn");
    if (!fs::exists(mask_path)) throw IoError("missing-mask", id);
    s.mask = tensor_from_record<S>(read_pmtn(mask_path.string()));
    if (s.image.rank() != 3 || s.mask.rank() != 3 || s.mask.dim(0) != 1 ||
        s.image.dim(1) != s.mask.dim(1) || s.image.dim(2) != s.mask.dim(2))
      throw IoError("bad-sample-shape", id + ": image " + shape_str(s.image.shape()) + " mask " +
                                            shape_str(s.mask.shape()));
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace pmt
