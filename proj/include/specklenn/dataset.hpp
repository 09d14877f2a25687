#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <unordered_map>
#include <vector>

#include "specklenn/tensor.hpp"

namespace specklenn {

enum class HitLabel { no_hit, single_hit, multi_hit, non_sample_hit };

inline const char* to_string(HitLabel l) {
  switch (l) {
    case HitLabel::no_hit: return "no_hit";
    case HitLabel::single_hit: return "single_hit";
    case HitLabel::multi_hit: return "multi_hit";
    case HitLabel::non_sample_hit: return "non_sample_hit";
  }
  return "?";
}

inline HitLabel parse_hit_label(const std::string& s) {
  for (HitLabel l : {HitLabel::no_hit, HitLabel::single_hit, HitLabel::multi_hit, HitLabel::non_sample_hit})
    if (s == to_string(l)) return l;
  throw std::invalid_argument("unknown hit label '" + s + "'");
}

/// What a simulated pulse intersected. Multiplicities above one train as multi_hit.
enum class Category { no_hit, single, double_hit, triple, quadruple, non_sample_hit };

inline const char* to_string(Category c) {
  switch (c) {
    case Category::no_hit: return "no_hit";
    case Category::single: return "single";
    case Category::double_hit: return "double";
    case Category::triple: return "triple";
    case Category::quadruple: return "quadruple";
    case Category::non_sample_hit: return "non_sample_hit";
  }
  return "?";
}

inline Category parse_category(const std::string& s) {
  for (Category c : {Category::no_hit, Category::single, Category::double_hit, Category::triple,
                     Category::quadruple, Category::non_sample_hit})
    if (s == to_string(c)) return c;
  throw std::invalid_argument("unknown hit category '" + s +
                              "' (expected single, double, triple, quadruple, no_hit or non_sample_hit)");
}

inline int multiplicity(Category c) {
  switch (c) {
    case Category::single: return 1;
    case Category::double_hit: return 2;
    case Category::triple: return 3;
    case Category::quadruple: return 4;
    default: return 0;
  }
}

inline HitLabel label_for(Category c) {
  switch (c) {
    case Category::no_hit: return HitLabel::no_hit;
    case Category::single: return HitLabel::single_hit;
    case Category::non_sample_hit: return HitLabel::non_sample_hit;
    default: return HitLabel::multi_hit;
  }
}

/// Metadata of one frame. `source` is the id of the simulated pattern the
/// frame derives from; for an unaugmented frame it is the frame's own id.
struct PatternRecord {
  std::string id;
  int sample_id = 0;
  HitLabel label = HitLabel::single_hit;
  int multiplicity = 1;
  double fluence_factor = 1.0;
  std::uint64_t seed = 0;
  std::string source;
  std::size_t n_atoms = 0;
  std::uint64_t particle_id = 0;

  friend bool operator==(const PatternRecord&, const PatternRecord&) = default;
};

/// Frames, masks (1 = valid pixel) and records, stored contiguously.
class Dataset {
 public:
  explicit Dataset(std::size_t frame_size = 96) : frame_size_(frame_size) {}

  std::size_t frame_size() const { return frame_size_; }
  std::size_t pixel_count() const { return frame_size_ * frame_size_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  const std::vector<PatternRecord>& records() const { return records_; }
  const PatternRecord& record(std::size_t i) const { return records_.at(i); }
  PatternRecord& record(std::size_t i) { return records_.at(i); }

  std::span<const float> frame(std::size_t i) const { return {pixels_.data() + i * pixel_count(), pixel_count()}; }
  std::span<float> frame(std::size_t i) { return {pixels_.data() + i * pixel_count(), pixel_count()}; }
  std::span<const std::uint8_t> mask(std::size_t i) const { return {masks_.data() + i * pixel_count(), pixel_count()}; }
  std::span<std::uint8_t> mask(std::size_t i) { return {masks_.data() + i * pixel_count(), pixel_count()}; }

  std::map<std::string, std::string>& attributes() { return attributes_; }
  const std::map<std::string, std::string>& attributes() const { return attributes_; }

  void add(PatternRecord rec, std::span<const float> frame, std::span<const std::uint8_t> mask) {
    if (frame.size() != pixel_count() || mask.size() != pixel_count()) {
      throw ShapeError("dataset frames are " + std::to_string(frame_size_) + "x" + std::to_string(frame_size_) +
                       ", got " + std::to_string(frame.size()) + " pixels");
    }
    if (index_.count(rec.id)) throw std::invalid_argument("duplicate pattern id '" + rec.id + "'");
    if (rec.source.empty()) rec.source = rec.id;
    index_[rec.id] = records_.size();
    records_.push_back(std::move(rec));
    pixels_.insert(pixels_.end(), frame.begin(), frame.end());
    masks_.insert(masks_.end(), mask.begin(), mask.end());
  }

  void reserve(std::size_t n) {
    records_.reserve(n);
    pixels_.reserve(n * pixel_count());
    masks_.reserve(n * pixel_count());
  }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// [B,1,S,S] tensor of the selected frames.
  Tensor<float> frames(std::span<const std::size_t> idx) const {
    Tensor<float> out(Shape{idx.size(), 1, frame_size_, frame_size_});
    for (std::size_t k = 0; k < idx.size(); ++k) {
      auto f = frame(idx[k]);
      std::copy(f.begin(), f.end(), out.data() + k * pixel_count());
    }
    return out;
  }

  Tensor<float> frames() const {
    Tensor<float> out(Shape{size(), 1, frame_size_, frame_size_});
    std::copy(pixels_.begin(), pixels_.end(), out.data());
    return out;
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset out(frame_size_);
    out.attributes_ = attributes_;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.add(records_.at(i), frame(i), mask(i));
    return out;
  }

  std::vector<std::size_t> indices_where(HitLabel label) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (records_[i].label == label) out.push_back(i);
    return out;
  }

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.frame_size_ == b.frame_size_ && a.records_ == b.records_ && a.pixels_ == b.pixels_ &&
           a.masks_ == b.masks_ && a.attributes_ == b.attributes_;
  }

 private:
  std::size_t frame_size_;
  std::map<std::string, std::string> attributes_;
  std::vector<PatternRecord> records_;
  std::vector<float> pixels_;
  std::vector<std::uint8_t> masks_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr int kDatasetFormatVersion = 1;

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("not a number: '" + s + "'");
  }
  return v;
}

/// Directory layout: manifest.txt (text header and one line per frame),
/// frames.f32 (little-endian float32, row-major S*S per frame) and masks.u8
/// (one byte per pixel, 1 = valid).
inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream mf(dir / "manifest.txt", std::ios::trunc);
  mf << "specklenn-dataset\n";
  mf << "format_version " << kDatasetFormatVersion << "\n";
  mf << "frame_size " << ds.frame_size() << "\n";
  mf << "count " << ds.size() << "\n";
  for (const auto& [k, v] : ds.attributes()) mf << "attr " << k << " " << v << "\n";
  mf << "columns id sample label multiplicity fluence seed source n_atoms particle\n";
  for (const auto& r : ds.records()) {
    mf << "frame " << r.id << " " << r.sample_id << " " << to_string(r.label) << " " << r.multiplicity << " "
       << format_double(r.fluence_factor) << " " << r.seed << " " << r.source << " " << r.n_atoms << " "
       << r.particle_id << "\n";
  }
  std::ofstream ff(dir / "frames.f32", std::ios::binary | std::ios::trunc);
  std::vector<unsigned char> buf(4 * ds.pixel_count());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto f = ds.frame(i);
    for (std::size_t p = 0; p < f.size(); ++p) {
      const std::uint32_t u = std::bit_cast<std::uint32_t>(f[p]);
      for (int b = 0; b < 4; ++b) buf[4 * p + b] = static_cast<unsigned char>(u >> (8 * b));
    }
    ff.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }
  std::ofstream kf(dir / "masks.u8", std::ios::binary | std::ios::trunc);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto m = ds.mask(i);
    kf.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size()));
  }
  if (!mf || !ff || !kf) throw std::runtime_error("failed writing dataset to " + dir.string());
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.txt");
  if (!mf) throw std::runtime_error("cannot open dataset manifest " + (dir / "manifest.txt").string());
  std::string line;
  if (!std::getline(mf, line) || line != "specklenn-dataset") {
    throw std::runtime_error("not a dataset manifest: " + (dir / "manifest.txt").string());
  }
  std::size_t frame_size = 0, count = 0;
  std::map<std::string, std::string> attrs;
  std::vector<PatternRecord> recs;
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string tag;
    is >> tag;
    if (tag == "format_version") {
      int v = 0;
      is >> v;
      if (v != kDatasetFormatVersion) {
        throw std::runtime_error("dataset format version " + std::to_string(v) + " unsupported");
      }
    } else if (tag == "frame_size") {
      is >> frame_size;
    } else if (tag == "count") {
      is >> count;
    } else if (tag == "attr") {
      std::string k, v;
      is >> k;
      std::getline(is >> std::ws, v);
      attrs[k] = v;
    } else if (tag == "columns") {
      continue;
    } else if (tag == "frame") {
      PatternRecord r;
      std::string label, fluence;
      is >> r.id >> r.sample_id >> label >> r.multiplicity >> fluence >> r.seed >> r.source >> r.n_atoms >>
          r.particle_id;
      if (!is) throw std::runtime_error("malformed dataset record: " + line);
      r.label = parse_hit_label(label);
      r.fluence_factor = parse_double(fluence);
      recs.push_back(std::move(r));
    } else {
      throw std::runtime_error("unknown dataset manifest entry: " + line);
    }
  }
  if (frame_size == 0) throw std::runtime_error("dataset manifest lacks frame_size");
  if (recs.size() != count) {
    throw std::runtime_error("dataset manifest lists " + std::to_string(recs.size()) + " frames, header says " +
                             std::to_string(count));
  }
  Dataset ds(frame_size);
  ds.attributes() = attrs;
  ds.reserve(count);
  const std::size_t P = frame_size * frame_size;
  std::ifstream ff(dir / "frames.f32", std::ios::binary);
  std::ifstream kf(dir / "masks.u8", std::ios::binary);
  if (!ff || !kf) throw std::runtime_error("dataset " + dir.string() + " lacks frames.f32 or masks.u8");
  std::vector<unsigned char> buf(4 * P);
  std::vector<float> frame(P);
  std::vector<std::uint8_t> mask(P);
  for (auto& r : recs) {
    ff.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    kf.read(reinterpret_cast<char*>(mask.data()), static_cast<std::streamsize>(mask.size()));
    if (!ff || !kf) throw std::runtime_error("dataset blobs in " + dir.string() + " are truncated");
    for (std::size_t p = 0; p < P; ++p) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(buf[4 * p + b]) << (8 * b);
      frame[p] = std::bit_cast<float>(u);
    }
    ds.add(std::move(r), frame, mask);
  }
  return ds;
}

}  // namespace specklenn
