#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "specklenn/dataset.hpp"
#include "specklenn/parallel.hpp"
#include "specklenn/rng.hpp"

namespace specklenn {

struct SplitSpec {
  double train = 0.5;
  double val = 0.25;
  double test = 0.25;
  std::uint64_t seed = 0;

  void validate() const {
    if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9) {
      throw std::invalid_argument("split fractions must be non-negative and sum to 1");
    }
  }
};

/// Source pattern ids per split.
struct Splits {
  std::vector<std::string> train, val, test;

  std::size_t size() const { return train.size() + val.size() + test.size(); }
  friend bool operator==(const Splits&, const Splits&) = default;
};

/// Partitions source patterns into train/val/test, stratified by
/// (sample_id, label). Each stratum is shuffled with its own stream; train and
/// val take rounded shares and test the rest.
inline Splits split_dataset(const Dataset& ds, const SplitSpec& spec) {
  spec.validate();
  std::map<std::pair<int, HitLabel>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& r = ds.record(i);
    if (r.source != r.id) {
      throw std::invalid_argument("split_dataset: pattern '" + r.id + "' is augmented (source '" + r.source +
                                  "'); split before augmenting");
    }
    strata[{r.sample_id, r.label}].push_back(i);
  }
  Splits out;
  std::string too_small;
  for (auto& [key, idx] : strata) {
    const std::size_t n = idx.size();
    const auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.train));
    const auto n_val =
        std::min(n - std::min(n, n_train), static_cast<std::size_t>(std::llround(static_cast<double>(n) * spec.val)));
    const std::size_t n_test = n - std::min(n, n_train) - n_val;
    if ((spec.train > 0 && n_train == 0) || (spec.val > 0 && n_val == 0) || (spec.test > 0 && n_test == 0) ||
        n_train > n) {
      too_small += " (sample " + std::to_string(key.first) + ", " + to_string(key.second) + ": " +
                   std::to_string(n) + ")";
      continue;
    }
    Rng rng = make_stream(spec.seed, static_cast<std::uint64_t>(key.first) * 16 + static_cast<int>(key.second));
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < n; ++k) {
      auto& dst = k < n_train ? out.train : (k < n_train + n_val ? out.val : out.test);
      dst.push_back(ds.record(idx[k]).id);
    }
  }
  if (!too_small.empty()) {
    throw std::invalid_argument("split_dataset: strata too small to cover every split:" + too_small);
  }
  return out;
}

inline void write_splits(const Splits& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (auto [name, ids] : {std::pair{"train", &s.train}, {"val", &s.val}, {"test", &s.test}}) {
    std::ofstream f(dir / (std::string(name) + ".txt"), std::ios::trunc);
    for (const auto& id : *ids) f << id << "\n";
    if (!f) throw std::runtime_error("failed writing split file in " + dir.string());
  }
}

inline Splits read_splits(const std::filesystem::path& dir) {
  Splits s;
  for (auto [name, ids] : {std::pair{"train", &s.train}, {"val", &s.val}, {"test", &s.test}}) {
    const auto path = dir / (std::string(name) + ".txt");
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open split file " + path.string());
    std::string line;
    while (std::getline(f, line))
      if (!line.empty()) ids->push_back(line);
  }
  return s;
}

/// Indices of the frames in `ds` with the given ids, in id order.
inline std::vector<std::size_t> indices_of(const Dataset& ds, std::span<const std::string> ids) {
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto i = ds.find(id);
    if (!i) throw std::invalid_argument("no pattern with id '" + id + "' in dataset");
    out.push_back(*i);
  }
  return out;
}

struct AugmentConfig {
  bool rotation = true;
  double min_angle_deg = 0.0;
  double max_angle_deg = 360.0;
  bool zoom = true;
  double min_zoom = 0.85;
  double max_zoom = 1.15;
  bool shift = true;
  int max_shift = 8;
  bool masking = true;
  int min_rects = 1;
  int max_rects = 3;
  double min_rect_area = 0.05;  // fraction of the frame
  double max_rect_area = 0.25;

  static AugmentConfig none() {
    AugmentConfig c;
    c.rotation = c.zoom = c.shift = c.masking = false;
    return c;
  }

  void validate() const {
    if (rotation && !(max_angle_deg > min_angle_deg)) throw std::invalid_argument("augment: empty rotation range");
    if (zoom && !(min_zoom > 0 && max_zoom > min_zoom)) throw std::invalid_argument("augment: invalid zoom range");
    if (shift && max_shift <= 0) throw std::invalid_argument("augment: max_shift must be positive");
    if (masking && !(min_rects >= 1 && max_rects >= min_rects && min_rect_area > 0 && max_rect_area > min_rect_area &&
                     max_rect_area <= 1)) {
      throw std::invalid_argument("augment: invalid masking ranges");
    }
  }
};

/// A frame and its validity mask.
struct Frame {
  std::size_t size = 0;
  std::vector<float> pixels;
  std::vector<std::uint8_t> mask;

  friend bool operator==(const Frame&, const Frame&) = default;
};

namespace detail {

// Resamples `in` at src(x, y) = centre + M (p - centre) with bilinear
// weights and zero fill. An output pixel stays valid only when every source
// pixel it draws on is inside the frame and valid.
inline Frame resample(const Frame& in, double m00, double m01, double m10, double m11) {
  const std::size_t S = in.size;
  const double c = (static_cast<double>(S) - 1) / 2;
  Frame out{S, std::vector<float>(S * S, 0.0f), std::vector<std::uint8_t>(S * S, 0)};
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      const double dx = static_cast<double>(x) - c, dy = static_cast<double>(y) - c;
      const double sx = c + m00 * dx + m01 * dy, sy = c + m10 * dx + m11 * dy;
      const double fx = std::floor(sx), fy = std::floor(sy);
      double tx = sx - fx, ty = sy - fy;
      if (tx < 1e-9) tx = 0;
      if (ty < 1e-9) ty = 0;
      double acc = 0;
      bool ok = true;
      const long ix = static_cast<long>(fx), iy = static_cast<long>(fy);
      for (int k = 0; k < 4; ++k) {
        const long px = ix + (k & 1), py = iy + (k >> 1);
        const double w = ((k & 1) ? tx : 1 - tx) * ((k >> 1) ? ty : 1 - ty);
        if (w == 0) continue;
        if (px < 0 || py < 0 || px >= static_cast<long>(S) || py >= static_cast<long>(S)) {
          ok = false;
          continue;
        }
        const std::size_t j = static_cast<std::size_t>(py) * S + static_cast<std::size_t>(px);
        if (!in.mask[j]) ok = false;
        acc += w * in.pixels[j];
      }
      const std::size_t o = y * S + x;
      out.mask[o] = ok;
      out.pixels[o] = ok ? static_cast<float>(acc) : 0.0f;
    }
  return out;
}

// Rotation by quarter turns as an index permutation, same sense as rotate().
inline Frame rotate_quarter(const Frame& in, int quarters) {
  const std::size_t S = in.size;
  Frame out{S, std::vector<float>(S * S), std::vector<std::uint8_t>(S * S)};
  quarters = ((quarters % 4) + 4) % 4;
  for (std::size_t y = 0; y < S; ++y)
    for (std::size_t x = 0; x < S; ++x) {
      std::size_t sx = x, sy = y;
      switch (quarters) {
        case 1: sx = y; sy = S - 1 - x; break;
        case 2: sx = S - 1 - x; sy = S - 1 - y; break;
        case 3: sx = S - 1 - y; sy = x; break;
        default: break;
      }
      out.pixels[y * S + x] = in.pixels[sy * S + sx];
      out.mask[y * S + x] = in.mask[sy * S + sx];
    }
  return out;
}

}  // namespace detail

/// Rotates about the frame centre; positive angles turn the image clockwise
/// as displayed (row 0 at the top). Multiples of 90 degrees are exact
/// permutations.
inline Frame rotate(const Frame& in, double degrees) {
  const double q = degrees / 90.0;
  if (q == std::round(q)) return detail::rotate_quarter(in, static_cast<int>(std::llround(q)));
  const double t = degrees * std::numbers::pi / 180.0;
  // Inverse map: source = R(-t) (p - c) + c.
  return detail::resample(in, std::cos(t), std::sin(t), -std::sin(t), std::cos(t));
}

inline Frame zoom(const Frame& in, double scale) {
  if (scale == 1.0) return in;
  return detail::resample(in, 1.0 / scale, 0.0, 0.0, 1.0 / scale);
}

/// Integer translation; pixels shifted in from outside are zero and invalid.
inline Frame shift(const Frame& in, int dx, int dy) {
  const auto S = static_cast<long>(in.size);
  Frame out{in.size, std::vector<float>(in.pixels.size(), 0.0f), std::vector<std::uint8_t>(in.mask.size(), 0)};
  for (long y = 0; y < S; ++y)
    for (long x = 0; x < S; ++x) {
      const long sx = x - dx, sy = y - dy;
      if (sx < 0 || sy < 0 || sx >= S || sy >= S) continue;
      out.pixels[static_cast<std::size_t>(y * S + x)] = in.pixels[static_cast<std::size_t>(sy * S + sx)];
      out.mask[static_cast<std::size_t>(y * S + x)] = in.mask[static_cast<std::size_t>(sy * S + sx)];
    }
  return out;
}

/// Zeroes [x0, x1) x [y0, y1) and marks it invalid.
inline void mask_rect(Frame& f, std::size_t x0, std::size_t y0, std::size_t x1, std::size_t y1) {
  for (std::size_t y = y0; y < std::min(y1, f.size); ++y)
    for (std::size_t x = x0; x < std::min(x1, f.size); ++x) {
      f.pixels[y * f.size + x] = 0.0f;
      f.mask[y * f.size + x] = 0;
    }
}

/// Applies the enabled transforms in the order rotation, zoom, shift, masking.
inline Frame augment(const Frame& in, const AugmentConfig& config, Rng& rng) {
  config.validate();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Frame f = in;
  if (config.rotation) f = rotate(f, config.min_angle_deg + (config.max_angle_deg - config.min_angle_deg) * u(rng));
  if (config.zoom) f = zoom(f, config.min_zoom + (config.max_zoom - config.min_zoom) * u(rng));
  if (config.shift) {
    std::uniform_int_distribution<int> d(-config.max_shift, config.max_shift);
    const int dx = d(rng), dy = d(rng);
    f = shift(f, dx, dy);
  }
  if (config.masking) {
    const int n = std::uniform_int_distribution<int>(config.min_rects, config.max_rects)(rng);
    const double S = static_cast<double>(f.size);
    for (int k = 0; k < n; ++k) {
      const double area = S * S * (config.min_rect_area + (config.max_rect_area - config.min_rect_area) * u(rng));
      const double aspect = std::exp(std::log(0.5) + std::log(4.0) * u(rng));
      const double w = std::clamp(std::sqrt(area * aspect), 1.0, S);
      const double h = std::clamp(area / w, 1.0, S);
      const auto iw = static_cast<std::size_t>(std::lround(w)), ih = static_cast<std::size_t>(std::lround(h));
      const auto x0 = std::uniform_int_distribution<std::size_t>(0, f.size - iw)(rng);
      const auto y0 = std::uniform_int_distribution<std::size_t>(0, f.size - ih)(rng);
      mask_rect(f, x0, y0, x0 + iw, y0 + ih);
    }
  }
  return f;
}

inline Frame frame_at(const Dataset& ds, std::size_t i) {
  auto p = ds.frame(i);
  auto m = ds.mask(i);
  return {ds.frame_size(), {p.begin(), p.end()}, {m.begin(), m.end()}};
}

/// Id of the k-th augmented copy of `source`.
inline std::string augmented_id(const std::string& source, std::size_t k) {
  return source + "~a" + std::to_string(k);
}

/// Expands the given source patterns to exactly `per_class_budget` frames per
/// label: every source once as is, plus augmented copies spread round-robin.
/// Every output record keeps its source id as lineage.
inline Dataset expand_split(const Dataset& ds, std::span<const std::string> ids, std::size_t per_class_budget,
                            const AugmentConfig& config, std::uint64_t seed,
                            std::span<const HitLabel> classes = {}, std::size_t threads = default_thread_count()) {
  config.validate();
  std::map<HitLabel, std::vector<std::size_t>> by_class;
  for (HitLabel c : classes) by_class[c];
  for (std::size_t i : indices_of(ds, ids)) by_class[ds.record(i).label].push_back(i);
  struct Job {
    std::size_t index;
    std::size_t copy;  // 0 = the source itself
  };
  std::vector<Job> jobs;
  for (const auto& [label, idx] : by_class) {
    if (idx.empty()) throw std::invalid_argument(std::string("expand_split: class ") + to_string(label) + " is empty");
    if (per_class_budget < idx.size()) {
      throw std::invalid_argument(std::string("expand_split: budget ") + std::to_string(per_class_budget) +
                                  " is below the " + std::to_string(idx.size()) + " sources of class " +
                                  to_string(label));
    }
    const std::size_t extra = per_class_budget - idx.size();
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const std::size_t copies = extra / idx.size() + (j < extra % idx.size() ? 1 : 0);
      for (std::size_t k = 0; k <= copies; ++k) jobs.push_back({idx[j], k});
    }
  }
  std::vector<Frame> frames(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t j) {
    const Job& job = jobs[j];
    Frame f = frame_at(ds, job.index);
    if (job.copy > 0) {
      Rng rng = make_stream(seed, fnv1a64(ds.record(job.index).source), job.copy);
      f = augment(f, config, rng);
    }
    frames[j] = std::move(f);
  });
  Dataset out(ds.frame_size());
  out.attributes() = ds.attributes();
  out.reserve(jobs.size());
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    PatternRecord r = ds.record(jobs[j].index);
    if (jobs[j].copy > 0) r.id = augmented_id(r.id, jobs[j].copy);
    out.add(std::move(r), frames[j].pixels, frames[j].mask);
  }
  return out;
}

/// Records of `pool` whose lineage reaches a validation or test source.
inline std::vector<std::string> leaked_ids(const Dataset& pool, const Splits& splits) {
  std::set<std::string> held(splits.val.begin(), splits.val.end());
  held.insert(splits.test.begin(), splits.test.end());
  std::vector<std::string> out;
  for (const auto& r : pool.records())
    if (held.count(r.source) || held.count(r.id)) out.push_back(r.id);
  return out;
}

}  // namespace specklenn
