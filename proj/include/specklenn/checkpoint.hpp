#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "specklenn/embedding.hpp"

namespace specklenn {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr const char* kCheckpointManifest = "manifest.txt";
inline constexpr const char* kCheckpointBlob = "tensors.f32";

/// On-disk model container: a text manifest naming every tensor (dtype,
/// shape, element offset) plus one little-endian float32 blob.
struct Checkpoint {
  int format_version = kCheckpointFormatVersion;
  std::string model_kind;
  std::map<std::string, std::string> config;
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw CheckpointError("checkpoint has no tensor '" + name + "'");
  }

  const std::string& config_value(const std::string& key) const {
    auto it = config.find(key);
    if (it == config.end()) throw CheckpointError("checkpoint config lacks '" + key + "'");
    return it->second;
  }
};

namespace detail {

inline void put_le32(float v, unsigned char* out) {
  std::uint32_t u = std::bit_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) out[b] = static_cast<unsigned char>(u >> (8 * b));
}

inline float get_le32(const unsigned char* in) {
  std::uint32_t u = 0;
  for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(in[b]) << (8 * b);
  return std::bit_cast<float>(u);
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

}  // namespace detail

inline void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<unsigned char> blob;
  std::ostringstream manifest;
  manifest << "specklenn-checkpoint\n";
  manifest << "format_version " << ck.format_version << "\n";
  manifest << "model_kind " << ck.model_kind << "\n";
  for (const auto& [k, v] : ck.config) manifest << "config " << k << " " << v << "\n";
  for (const auto& [k, v] : ck.metadata) manifest << "meta " << k << " " << v << "\n";
  std::size_t offset = 0;
  for (const auto& [name, t] : ck.tensors) {
    manifest << "tensor " << name << " f32 ";
    for (std::size_t i = 0; i < t.rank(); ++i) manifest << (i ? "," : "") << t.dim(i);
    manifest << " " << offset << " " << t.size() << "\n";
    const std::size_t start = blob.size();
    blob.resize(start + 4 * t.size());
    for (std::size_t i = 0; i < t.size(); ++i) detail::put_le32(t[i], blob.data() + start + 4 * i);
    offset += t.size();
  }
  manifest << "blob " << kCheckpointBlob << " " << blob.size() << " "
           << detail::hex64(fnv1a64(blob.data(), blob.size())) << "\n";

  std::ofstream bf(dir / kCheckpointBlob, std::ios::binary | std::ios::trunc);
  bf.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
  std::ofstream mf(dir / kCheckpointManifest, std::ios::trunc);
  mf << manifest.str();
  if (!bf || !mf) throw CheckpointError("failed writing checkpoint to " + dir.string());
}

inline Checkpoint read_checkpoint(const std::filesystem::path& dir) {
  std::ifstream mf(dir / kCheckpointManifest);
  if (!mf) throw CheckpointError("cannot open checkpoint manifest " + (dir / kCheckpointManifest).string());
  std::string line;
  if (!std::getline(mf, line) || line != "specklenn-checkpoint") {
    throw CheckpointError("not a checkpoint manifest: " + (dir / kCheckpointManifest).string());
  }
  Checkpoint ck;
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset, count;
  };
  std::vector<Entry> entries;
  std::size_t blob_bytes = 0;
  std::string blob_hash;
  bool have_version = false, have_blob = false;
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string tag;
    is >> tag;
    if (tag == "format_version") {
      is >> ck.format_version;
      have_version = true;
      if (ck.format_version != kCheckpointFormatVersion) {
        throw CheckpointError("checkpoint format version " + std::to_string(ck.format_version) +
                              " unsupported (expected " + std::to_string(kCheckpointFormatVersion) + ")");
      }
    } else if (tag == "model_kind") {
      is >> ck.model_kind;
    } else if (tag == "config" || tag == "meta") {
      std::string k, v;
      is >> k;
      std::getline(is >> std::ws, v);
      (tag == "config" ? ck.config : ck.metadata)[k] = v;
    } else if (tag == "tensor") {
      Entry e;
      std::string dtype, dims;
      is >> e.name >> dtype >> dims >> e.offset >> e.count;
      if (!is || dtype != "f32") throw CheckpointError("malformed tensor line: " + line);
      std::istringstream ds(dims);
      for (std::string d; std::getline(ds, d, ',');) e.shape.push_back(std::stoul(d));
      if (shape_numel(e.shape) != e.count) throw CheckpointError("tensor count/shape mismatch: " + line);
      entries.push_back(std::move(e));
    } else if (tag == "blob") {
      std::string file;
      is >> file >> blob_bytes >> blob_hash;
      have_blob = static_cast<bool>(is);
    } else {
      throw CheckpointError("unknown manifest entry: " + line);
    }
  }
  if (!have_version) throw CheckpointError("checkpoint manifest lacks format_version");
  if (!have_blob) throw CheckpointError("checkpoint manifest lacks blob record (truncated?)");

  std::ifstream bf(dir / kCheckpointBlob, std::ios::binary);
  if (!bf) throw CheckpointError("cannot open checkpoint blob " + (dir / kCheckpointBlob).string());
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
  if (blob.size() != blob_bytes) {
    throw CheckpointError("checkpoint blob has " + std::to_string(blob.size()) + " bytes, manifest says " +
                          std::to_string(blob_bytes));
  }
  if (detail::hex64(fnv1a64(blob.data(), blob.size())) != blob_hash) {
    throw CheckpointError("checkpoint blob checksum mismatch (corrupt file)");
  }
  for (const Entry& e : entries) {
    if ((e.offset + e.count) * 4 > blob.size()) throw CheckpointError("tensor '" + e.name + "' exceeds blob");
    Tensor<float> t(e.shape);
    for (std::size_t i = 0; i < e.count; ++i) t[i] = detail::get_le32(blob.data() + 4 * (e.offset + i));
    ck.tensors.emplace_back(e.name, std::move(t));
  }
  return ck;
}

/// Provenance recorded alongside trained weights.
struct TrainingMetadata {
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  std::uint64_t model_version = 1;
};

namespace detail {

inline void put_backbone_config(Checkpoint& ck, const BackboneConfig& c) {
  ck.config["backbone.input_size"] = std::to_string(c.input_size);
  ck.config["backbone.conv1_out_channels"] = std::to_string(c.conv1_out_channels);
  ck.config["backbone.conv2_out_channels"] = std::to_string(c.conv2_out_channels);
  ck.config["backbone.kernel_size"] = std::to_string(c.kernel_size);
  std::ostringstream os;
  os.precision(17);
  os << c.init_std;
  ck.config["backbone.init_std"] = os.str();
}

inline BackboneConfig get_backbone_config(const Checkpoint& ck) {
  BackboneConfig c;
  c.input_size = std::stoul(ck.config_value("backbone.input_size"));
  c.conv1_out_channels = std::stoul(ck.config_value("backbone.conv1_out_channels"));
  c.conv2_out_channels = std::stoul(ck.config_value("backbone.conv2_out_channels"));
  c.kernel_size = std::stoul(ck.config_value("backbone.kernel_size"));
  c.init_std = std::stod(ck.config_value("backbone.init_std"));
  return c;
}

inline void put_metadata(Checkpoint& ck, const TrainingMetadata& m) {
  ck.metadata["seed"] = std::to_string(m.seed);
  ck.metadata["epoch"] = std::to_string(m.epoch);
  std::ostringstream os;
  os.precision(17);
  os << m.loss;
  ck.metadata["loss"] = os.str();
  ck.metadata["model_version"] = std::to_string(m.model_version);
}

inline TrainingMetadata get_metadata(const Checkpoint& ck) {
  TrainingMetadata m;
  auto get = [&](const char* k) -> std::string {
    auto it = ck.metadata.find(k);
    return it == ck.metadata.end() ? std::string("0") : it->second;
  };
  m.seed = std::stoull(get("seed"));
  m.epoch = std::stoul(get("epoch"));
  m.loss = std::stod(get("loss"));
  m.model_version = std::stoull(get("model_version"));
  return m;
}

template <class T, class Model>
void put_state(Checkpoint& ck, Model& model) {
  for (const NamedTensor<T>& nt : model.state()) ck.tensors.emplace_back(nt.name, nt.tensor->template cast<float>());
}

template <class T, class Model>
void get_state(const Checkpoint& ck, Model& model) {
  for (const NamedTensor<T>& nt : model.state()) {
    const Tensor<float>& src = ck.tensor(nt.name);
    if (src.shape() != nt.tensor->shape()) {
      throw CheckpointError("tensor '" + nt.name + "' has shape " + shape_str(src.shape()) +
                            ", model expects " + shape_str(nt.tensor->shape()));
    }
    *nt.tensor = src.template cast<T>();
  }
}

}  // namespace detail

template <class T>
Checkpoint to_checkpoint(EmbeddingNet<T>& net, const TrainingMetadata& meta = {}) {
  Checkpoint ck;
  ck.model_kind = "embedding";
  detail::put_backbone_config(ck, net.config().backbone);
  ck.config["fc_hidden"] = std::to_string(net.config().fc_hidden);
  ck.config["embedding_dim"] = std::to_string(net.config().embedding_dim);
  detail::put_metadata(ck, meta);
  detail::put_state<T>(ck, net);
  return ck;
}

template <class T = float>
EmbeddingNet<T> embedding_from_checkpoint(const Checkpoint& ck) {
  if (ck.model_kind != "embedding") {
    throw CheckpointError("checkpoint holds a '" + ck.model_kind + "' model, expected 'embedding'");
  }
  EmbeddingNetConfig config;
  config.backbone = detail::get_backbone_config(ck);
  config.fc_hidden = std::stoul(ck.config_value("fc_hidden"));
  config.embedding_dim = std::stoul(ck.config_value("embedding_dim"));
  EmbeddingNet<T> net = EmbeddingNet<T>::build(config, 0);
  detail::get_state<T>(ck, net);
  return net;
}

template <class T>
void save_embedding_net(EmbeddingNet<T>& net, const std::filesystem::path& dir,
                        const TrainingMetadata& meta = {}) {
  write_checkpoint(to_checkpoint(net, meta), dir);
}

template <class T = float>
EmbeddingNet<T> load_embedding_net(const std::filesystem::path& dir, TrainingMetadata* meta = nullptr) {
  Checkpoint ck = read_checkpoint(dir);
  if (meta) *meta = detail::get_metadata(ck);
  return embedding_from_checkpoint<T>(ck);
}

}  // namespace specklenn
