#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "cemcd/ops.hpp"
#include "cemcd/png_io.hpp"
#include "cemcd/rng.hpp"
#include "cemcd/tensor.hpp"

namespace cemcd {

namespace fs = std::filesystem;

// Co-registered bitemporal pair with its binary change mask. pre/post are
// [3,H,W] in [0,1]; gt is [H,W] with values in {0,1}.
struct BitemporalSample {
  Tensor<float> pre;
  Tensor<float> post;
  Tensor<float> gt;
  std::string id;

  int height() const { return gt.dim(0); }
  int width() const { return gt.dim(1); }

  void validate() const {
    if (pre.rank() != 3 || pre.dim(0) != 3) throw ShapeError("pre image must be [3,H,W]");
    check_same_shape(pre, post, "sample images");
    if (gt.rank() != 2 || gt.dim(0) != pre.dim(1) || gt.dim(1) != pre.dim(2))
      throw ShapeError("gt mask " + gt.shape_str() + " does not match images " + pre.shape_str());
    check_divisible_by_32(height(), width());
    for (std::size_t i = 0; i < gt.numel(); ++i)
      if (gt[i] != 0.0f && gt[i] != 1.0f) throw ShapeError("gt mask must be binary");
  }
};

inline void check_divisible_by_32(int h, int w);  // from encoder.hpp when included together

enum class Split { train, val, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "'");
}

struct DatasetManifest {
  fs::path root;
  Split split = Split::train;
  std::vector<std::string> sample_ids;
  int tile_size = 256;

  bool contains(const std::string& id) const {
    return std::find(sample_ids.begin(), sample_ids.end(), id) != sample_ids.end();
  }
};

namespace detail {

inline std::set<std::string> png_ids(const fs::path& dir) {
  std::set<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") ids.insert(e.path().stem().string());
  return ids;
}

}  // namespace detail

// Scans the `A/ B/ label/` layout. Ids come from `list/<split>.txt` in file
// order when present, otherwise every PNG id sorted lexicographically.
inline DatasetManifest load_dataset(const fs::path& root, Split split, int tile_size) {
  if (tile_size <= 0 || tile_size % 32 != 0)
    throw ConfigError("tile_size must be a positive multiple of 32, got " + std::to_string(tile_size));
  for (const char* sub : {"A", "B", "label"})
    if (!fs::is_directory(root / sub))
      throw DatasetLayoutError("missing directory '" + (root / sub).string() + "'");

  const auto a_ids = detail::png_ids(root / "A");
  const auto b_ids = detail::png_ids(root / "B");
  const auto l_ids = detail::png_ids(root / "label");
  std::set<std::string> all;
  all.insert(a_ids.begin(), a_ids.end());
  all.insert(b_ids.begin(), b_ids.end());
  all.insert(l_ids.begin(), l_ids.end());
  for (const auto& id : all) {
    if (!a_ids.count(id)) throw DatasetLayoutError("sample '" + id + "' missing from A/");
    if (!b_ids.count(id)) throw DatasetLayoutError("sample '" + id + "' missing from B/");
    if (!l_ids.count(id)) throw DatasetLayoutError("sample '" + id + "' missing from label/");
  }

  DatasetManifest m;
  m.root = root;
  m.split = split;
  m.tile_size = tile_size;

  const fs::path list_file = root / "list" / (to_string(split) + ".txt");
  if (fs::is_regular_file(list_file)) {
    std::ifstream in(list_file);
    if (!in) throw IoError("cannot read '" + list_file.string() + "'");
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (line.empty()) continue;
      if (!all.count(line))
        throw DatasetLayoutError("listed sample '" + line + "' has no image files");
      m.sample_ids.push_back(line);
    }
  } else {
    m.sample_ids.assign(all.begin(), all.end());  // std::set iterates sorted
  }
  return m;
}

// Reads one triple; images normalized to [0,1], label binarized at >127.
inline BitemporalSample read_sample(const DatasetManifest& manifest, const std::string& id) {
  if (!manifest.contains(id)) throw DatasetLayoutError("sample '" + id + "' not in manifest");
  const PngImage a = read_png((manifest.root / "A" / (id + ".png")).string(), 3);
  const PngImage b = read_png((manifest.root / "B" / (id + ".png")).string(), 3);
  const PngImage l = read_png((manifest.root / "label" / (id + ".png")).string(), 1);
  if (a.height != b.height || a.width != b.width || a.height != l.height || a.width != l.width)
    throw DatasetLayoutError("sample '" + id + "' has mismatched image sizes");
  BitemporalSample s;
  s.id = id;
  s.pre = from_png8<float>(a);
  s.post = from_png8<float>(b);
  s.gt = Tensor<float>({l.height, l.width});
  for (std::size_t i = 0; i < s.gt.numel(); ++i) s.gt[i] = l.pixels[i] > 127 ? 1.0f : 0.0f;
  s.validate();
  return s;
}

// Writes one triple in the same layout (A/B as RGB, label as 0/255 gray).
inline void write_sample(const fs::path& root, const BitemporalSample& s) {
  for (const char* sub : {"A", "B", "label"}) fs::create_directories(root / sub);
  write_png((root / "A" / (s.id + ".png")).string(), to_png8(s.pre));
  write_png((root / "B" / (s.id + ".png")).string(), to_png8(s.post));
  PngImage label;
  label.height = s.height();
  label.width = s.width();
  label.channels = 1;
  label.pixels.resize(s.gt.numel());
  for (std::size_t i = 0; i < s.gt.numel(); ++i)
    label.pixels[i] = s.gt[i] != 0.0f ? 255 : 0;
  write_png((root / "label" / (s.id + ".png")).string(), label);
}

inline void write_dataset(const fs::path& root, const std::vector<BitemporalSample>& samples) {
  for (const auto& s : samples) write_sample(root, s);
}

// ---- Synthetic bitemporal scenes ------------------------------------------

struct SynthesisConfig {
  int num_samples = 20;
  int tile_size = 256;
  double change_fraction_target = 0.05;  // 0 disables change entirely
  int object_count_min = 3;
  int object_count_max = 8;
  double noise_level = 0.02;
  std::uint64_t seed = 0;
  int max_retries = 100;

  void validate() const {
    if (num_samples <= 0) throw ConfigError("num_samples must be positive");
    if (tile_size <= 0 || tile_size % 32 != 0)
      throw ConfigError("tile_size must be a positive multiple of 32");
    if (change_fraction_target < 0.0 || change_fraction_target >= 1.0)
      throw ConfigError("change_fraction_target must be in [0,1)");
    if (object_count_min < 1 || object_count_max < object_count_min || object_count_max > 60)
      throw ConfigError("object_count_range must satisfy 1 <= min <= max <= 60");
    if (noise_level < 0.0) throw ConfigError("noise_level must be >= 0");
  }
};

namespace detail {

struct SynthObject {
  bool ellipse = false;
  int state = 0;  // 0 = both epochs, 1 = pre only, 2 = post only
  double cy = 0, cx = 0, ry = 0, rx = 0;
  float color[3] = {0, 0, 0};

  bool covers(int y, int x) const {
    const double dy = (y + 0.5 - cy), dx = (x + 0.5 - cx);
    if (ellipse) {
      const double u = dy / ry, v = dx / rx;
      return u * u + v * v <= 1.0;
    }
    return std::abs(dy) <= ry && std::abs(dx) <= rx;
  }
};

// Smooth textured background: per-channel base tone + bilinearly upsampled
// coarse noise grid.
inline Tensor<float> synth_background(int size, Rng& rng) {
  const int grid = 8;
  Tensor<float> coarse({1, 3, grid, grid});
  float base[3];
  for (int c = 0; c < 3; ++c) base[c] = static_cast<float>(rng.uniform(0.25, 0.7));
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < grid * grid; ++i)
      coarse[static_cast<std::size_t>(c) * grid * grid + i] =
          base[c] + static_cast<float>(rng.uniform(-0.15, 0.15));
  Tensor<float> up = bilinear_resize(coarse, size, size);
  Tensor<float> bg({3, size, size});
  for (std::size_t i = 0; i < bg.numel(); ++i)
    bg[i] = std::min(1.0f, std::max(0.0f, up[i]));
  return bg;
}

inline BitemporalSample synth_one(const SynthesisConfig& cfg, Rng& rng, const std::string& id) {
  const int size = cfg.tile_size;
  BitemporalSample s;
  s.id = id;
  s.pre = synth_background(size, rng);
  s.post = s.pre;
  s.gt = Tensor<float>({size, size});

  const int count = rng.uniform_int(cfg.object_count_min, cfg.object_count_max);
  std::vector<SynthObject> objs(static_cast<std::size_t>(count));
  int n_changed = 0;
  for (auto& o : objs) {
    o.ellipse = rng.bernoulli(0.5);
    if (cfg.change_fraction_target > 0.0 && rng.bernoulli(0.5)) {
      o.state = rng.bernoulli(0.5) ? 1 : 2;
      ++n_changed;
    }
    for (float& c : o.color)
      c = static_cast<float>(rng.bernoulli(0.5) ? rng.uniform(0.0, 0.3) : rng.uniform(0.7, 1.0));
  }
  if (cfg.change_fraction_target > 0.0 && n_changed == 0) {
    objs[0].state = rng.bernoulli(0.5) ? 1 : 2;
    n_changed = 1;
  }

  // Size changed objects against an equal share of the changed-pixel budget;
  // unchanged objects get an independent modest footprint.
  const double target_px = cfg.change_fraction_target * size * size;
  for (auto& o : objs) {
    double area;
    if (o.state != 0) {
      area = (target_px / std::max(1, n_changed)) * rng.uniform(0.8, 1.2);
    } else {
      const double side = size * rng.uniform(0.05, 0.18);
      area = side * side;
    }
    const double aspect = rng.uniform(0.6, 1.6);
    if (o.ellipse) {
      // pi * ry * rx = area
      o.ry = std::sqrt(area * aspect / 3.14159265358979323846);
      o.rx = o.ry / aspect;
    } else {
      // (2*ry) * (2*rx) = area
      o.ry = 0.5 * std::sqrt(area * aspect);
      o.rx = o.ry / aspect;
    }
    o.ry = std::min(o.ry, size / 2.0 - 1.0);
    o.rx = std::min(o.rx, size / 2.0 - 1.0);
    o.cy = rng.uniform(o.ry, size - o.ry);
    o.cx = rng.uniform(o.rx, size - o.rx);
  }

  // Paint in draw order (consistent z-order in both epochs) and track
  // per-pixel membership; gt marks pixels whose membership set differs.
  std::vector<std::uint64_t> member_pre(static_cast<std::size_t>(size) * size, 0);
  std::vector<std::uint64_t> member_post(member_pre.size(), 0);
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  for (std::size_t k = 0; k < objs.size(); ++k) {
    const auto& o = objs[k];
    const int y0 = std::max(0, static_cast<int>(o.cy - o.ry - 1));
    const int y1 = std::min(size - 1, static_cast<int>(o.cy + o.ry + 1));
    const int x0 = std::max(0, static_cast<int>(o.cx - o.rx - 1));
    const int x1 = std::min(size - 1, static_cast<int>(o.cx + o.rx + 1));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        if (!o.covers(y, x)) continue;
        const std::size_t p = static_cast<std::size_t>(y) * size + x;
        if (o.state != 2) {
          member_pre[p] |= (1ULL << k);
          for (int c = 0; c < 3; ++c) s.pre[static_cast<std::size_t>(c) * plane + p] = o.color[c];
        }
        if (o.state != 1) {
          member_post[p] |= (1ULL << k);
          for (int c = 0; c < 3; ++c) s.post[static_cast<std::size_t>(c) * plane + p] = o.color[c];
        }
      }
  }
  for (std::size_t p = 0; p < plane; ++p)
    s.gt[p] = member_pre[p] != member_post[p] ? 1.0f : 0.0f;

  if (cfg.noise_level > 0.0) {
    for (std::size_t i = 0; i < s.post.numel(); ++i) {
      const double noisy = s.post[i] + rng.uniform(-cfg.noise_level, cfg.noise_level);
      s.post[i] = static_cast<float>(std::min(1.0, std::max(0.0, noisy)));
    }
  }
  return s;
}

}  // namespace detail

// Deterministic in cfg (the seed fully determines every sample). Samples are
// regenerated until their change fraction lands within 30% of the target;
// running out of retries means the target is unreachable for the configured
// object range.
inline std::vector<BitemporalSample> synthesize_dataset(const SynthesisConfig& cfg) {
  cfg.validate();
  std::vector<BitemporalSample> out;
  out.reserve(static_cast<std::size_t>(cfg.num_samples));
  Rng master(cfg.seed);
  for (int i = 0; i < cfg.num_samples; ++i) {
    Rng sample_rng = master.split(static_cast<std::uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof(name), "synth_%04d", i);
    bool accepted = false;
    for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
      BitemporalSample s = detail::synth_one(cfg, sample_rng, name);
      if (cfg.change_fraction_target == 0.0) {
        out.push_back(std::move(s));
        accepted = true;
        break;
      }
      double frac = 0.0;
      for (std::size_t p = 0; p < s.gt.numel(); ++p) frac += s.gt[p];
      frac /= static_cast<double>(s.gt.numel());
      if (std::abs(frac - cfg.change_fraction_target) <= 0.3 * cfg.change_fraction_target) {
        out.push_back(std::move(s));
        accepted = true;
        break;
      }
    }
    if (!accepted)
      throw SynthesisError("could not reach change fraction " +
                           std::to_string(cfg.change_fraction_target) + " for sample " +
                           std::to_string(i) + " after " + std::to_string(cfg.max_retries) +
                           " attempts");
  }
  return out;
}

// ---- Training-time augmentation --------------------------------------------

struct AugmentOp {
  bool flip_h = false;
  bool flip_v = false;
  int off_y = 0;
  int off_x = 0;
  int crop = 0;
};

namespace detail {

template <typename S>
Tensor<S> flip_tensor(const Tensor<S>& t, bool flip_h, bool flip_v) {
  Tensor<S> out(t.shape());
  const int ch = t.rank() == 3 ? t.dim(0) : 1;
  const int h = t.dim(t.rank() == 3 ? 1 : 0);
  const int w = t.dim(t.rank() == 3 ? 2 : 1);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < ch; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int sy = flip_v ? h - 1 - y : y;
        const int sx = flip_h ? w - 1 - x : x;
        out[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * w + x] =
            t[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(sy) * w + sx];
      }
  return out;
}

template <typename S>
Tensor<S> crop_tensor(const Tensor<S>& t, int off_y, int off_x, int crop) {
  const int ch = t.rank() == 3 ? t.dim(0) : 1;
  const int h = t.dim(t.rank() == 3 ? 1 : 0);
  const int w = t.dim(t.rank() == 3 ? 2 : 1);
  Tensor<S> out(t.rank() == 3 ? std::vector<int>{ch, crop, crop} : std::vector<int>{crop, crop});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t oplane = static_cast<std::size_t>(crop) * crop;
  for (int c = 0; c < ch; ++c)
    for (int y = 0; y < crop; ++y)
      std::copy_n(t.data() + static_cast<std::size_t>(c) * plane +
                      static_cast<std::size_t>(off_y + y) * w + off_x,
                  crop,
                  out.data() + static_cast<std::size_t>(c) * oplane + static_cast<std::size_t>(y) * crop);
  return out;
}

}  // namespace detail

inline void check_crop(int crop, int h, int w) {
  if (crop <= 0 || crop % 32 != 0)
    throw ConfigError("crop size must be a positive multiple of 32, got " + std::to_string(crop));
  if (crop > h || crop > w)
    throw ConfigError("crop size " + std::to_string(crop) + " exceeds tile " +
                      std::to_string(h) + "x" + std::to_string(w));
}

// Applies a fixed transform, identically to all three tensors.
inline BitemporalSample apply_augment(const BitemporalSample& s, const AugmentOp& op) {
  check_crop(op.crop, s.height(), s.width());
  BitemporalSample out;
  out.id = s.id;
  out.pre = detail::crop_tensor(detail::flip_tensor(s.pre, op.flip_h, op.flip_v), op.off_y, op.off_x, op.crop);
  out.post = detail::crop_tensor(detail::flip_tensor(s.post, op.flip_h, op.flip_v), op.off_y, op.off_x, op.crop);
  out.gt = detail::crop_tensor(detail::flip_tensor(s.gt, op.flip_h, op.flip_v), op.off_y, op.off_x, op.crop);
  return out;
}

inline AugmentOp sample_augment_op(int h, int w, int crop, Rng& rng) {
  check_crop(crop, h, w);
  AugmentOp op;
  op.flip_h = rng.bernoulli(0.5);
  op.flip_v = rng.bernoulli(0.5);
  op.off_y = h == crop ? 0 : rng.uniform_int(0, h - crop);
  op.off_x = w == crop ? 0 : rng.uniform_int(0, w - crop);
  op.crop = crop;
  return op;
}

// Independent 0.5-probability flips then a random crop; one transform for
// the whole triple.
inline BitemporalSample augment(const BitemporalSample& s, int crop, Rng& rng) {
  return apply_augment(s, sample_augment_op(s.height(), s.width(), crop, rng));
}

}  // namespace cemcd
