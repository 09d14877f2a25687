#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "specklenn/embedding.hpp"
#include "specklenn/triplet.hpp"

namespace specklenn {

struct SupportClass {
  std::string label;
  std::vector<std::vector<float>> embeddings;
  std::vector<std::string> sources;  // id of the pattern behind each embedding
};

/// Labeled embeddings grouped by class in registration order.
struct SupportSet {
  std::vector<SupportClass> classes;
  std::size_t dim = 0;

  std::size_t class_count() const { return classes.size(); }

  /// Shots per class if every class has the same count, else 0.
  std::size_t shots() const {
    if (classes.empty()) return 0;
    const std::size_t n = classes.front().embeddings.size();
    for (const auto& c : classes)
      if (c.embeddings.size() != n) return 0;
    return n;
  }
  bool balanced() const { return shots() > 0; }

  const SupportClass* find(const std::string& label) const {
    for (const auto& c : classes)
      if (c.label == label) return &c;
    return nullptr;
  }

  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    for (const auto& c : classes) out.push_back(c.label);
    return out;
  }
};

inline constexpr double kUnitNormTolerance = 1e-5;

/// Groups precomputed embeddings by label. Classes appear in order of first
/// occurrence.
inline SupportSet build_support_set(const Tensor<float>& embeddings, std::span<const std::string> labels,
                                    std::span<const std::string> sources = {}) {
  if (embeddings.rank() != 2 || embeddings.dim(0) == 0) {
    throw std::invalid_argument("build_support_set: need at least one labeled pattern");
  }
  const std::size_t n = embeddings.dim(0), d = embeddings.dim(1);
  if (labels.size() != n || (!sources.empty() && sources.size() != n)) {
    throw std::invalid_argument("build_support_set: need one label (and source id) per embedding");
  }
  SupportSet set;
  set.dim = d;
  for (std::size_t i = 0; i < n; ++i) {
    auto row = embeddings.row(i);
    double ss = 0;
    for (float v : row) ss += static_cast<double>(v) * v;
    const double norm = std::sqrt(ss);
    if (std::abs(norm - 1.0) > kUnitNormTolerance) {
      throw std::invalid_argument("build_support_set: support " + std::to_string(i) + " is not unit norm (" +
                                  std::to_string(norm) + ")");
    }
    SupportClass* cls = nullptr;
    for (auto& c : set.classes)
      if (c.label == labels[i]) cls = &c;
    if (!cls) {
      set.classes.push_back({labels[i], {}, {}});
      cls = &set.classes.back();
    }
    cls->embeddings.emplace_back(row.begin(), row.end());
    cls->sources.push_back(sources.empty() ? std::to_string(i) : sources[i]);
  }
  return set;
}

/// Embeds raw [B,1,S,S] frames once in eval mode and groups them by label.
inline SupportSet build_support_set(const EmbeddingNet<float>& model, const Tensor<float>& frames,
                                    std::span<const std::string> labels,
                                    std::span<const std::string> sources = {}) {
  if (frames.rank() == 0 || frames.dim(0) == 0) {
    throw std::invalid_argument("build_support_set: need at least one labeled pattern");
  }
  return build_support_set(model.embed(frames), labels, sources);
}

struct ClassificationResult {
  std::string predicted_label;
  std::size_t predicted_index = 0;
  std::vector<std::string> labels;                // class order of the support set
  std::vector<double> mean_distance;              // d-bar per class
  std::vector<std::vector<double>> distances;     // per class, per support
  bool tie = false;                               // another class shares the minimal d-bar
};

/// Mean squared distance from the query to each class's supports; the
/// smallest wins, ties going to the earliest registered class.
inline ClassificationResult classify(std::span<const float> query, const SupportSet& support) {
  if (support.classes.empty()) throw std::invalid_argument("classify: empty support set");
  if (query.size() != support.dim) {
    throw ShapeError("classify: query has dimension " + std::to_string(query.size()) + ", supports " +
                     std::to_string(support.dim));
  }
  ClassificationResult r;
  for (const auto& c : support.classes) {
    if (c.embeddings.empty()) throw std::invalid_argument("classify: class '" + c.label + "' has no supports");
    r.labels.push_back(c.label);
    std::vector<double> ds;
    double sum = 0;
    for (const auto& s : c.embeddings) {
      ds.push_back(squared_distance(query.data(), s.data(), support.dim));
      sum += ds.back();
    }
    r.mean_distance.push_back(sum / static_cast<double>(ds.size()));
    r.distances.push_back(std::move(ds));
  }
  for (std::size_t k = 1; k < r.mean_distance.size(); ++k)
    if (r.mean_distance[k] < r.mean_distance[r.predicted_index]) r.predicted_index = k;
  for (std::size_t k = 0; k < r.mean_distance.size(); ++k)
    if (k != r.predicted_index && r.mean_distance[k] == r.mean_distance[r.predicted_index]) r.tie = true;
  r.predicted_label = r.labels[r.predicted_index];
  return r;
}

/// Embeds one raw frame ([S,S], [1,S,S] or [1,1,S,S]) and classifies it.
inline ClassificationResult classify_pattern(const EmbeddingNet<float>& model, const Tensor<float>& image,
                                             const SupportSet& support) {
  const std::size_t S = model.config().backbone.input_size;
  if (image.size() != S * S) {
    throw ShapeError("classify_pattern: expected a " + std::to_string(S) + "x" + std::to_string(S) +
                     " frame, got " + shape_str(image.shape()) + " (crop or resize first)");
  }
  const Tensor<float> e = model.embed(image.reshaped(Shape{1, 1, S, S}));
  return classify(e.row(0), support);
}

}  // namespace specklenn
