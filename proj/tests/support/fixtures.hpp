#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "specklenn/dataset.hpp"
#include "specklenn/rng.hpp"

namespace specklenn::testing {

/// `per` random frames for every (sample, label) pair, ids "t<sample>-<label>-<k>".
inline Dataset toy_dataset(int samples, const std::vector<HitLabel>& labels, std::size_t per, std::size_t size = 8,
                           std::uint64_t seed = 1) {
  Dataset ds(size);
  Rng rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> f(size * size);
  std::vector<std::uint8_t> m(size * size, 1);
  for (int s = 0; s < samples; ++s)
    for (HitLabel l : labels)
      for (std::size_t k = 0; k < per; ++k) {
        PatternRecord r;
        r.id = "t" + std::to_string(s) + "-" + to_string(l) + "-" + std::to_string(k);
        r.source = r.id;
        r.sample_id = s;
        r.label = l;
        r.multiplicity = l == HitLabel::multi_hit ? 2 : (l == HitLabel::single_hit ? 1 : 0);
        for (float& v : f) v = u(rng);
        ds.add(r, f, m);
      }
  return ds;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("specklenn-" + tag + "-" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace specklenn::testing
