#pragma once

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "specklenn/checkpoint.hpp"
#include "specklenn/dataset.hpp"
#include "specklenn/embedding.hpp"
#include "specklenn/fewshot.hpp"
#include "specklenn/pipeline.hpp"
#include "specklenn/trainer.hpp"

namespace specklenn {

/// Error with an HTTP-style status: 400 bad request, 404 unknown frame,
/// 409 not ready or busy.
struct ServiceError : std::runtime_error {
  int status;
  ServiceError(int s, const std::string& what) : std::runtime_error(what), status(s) {}
};

struct ServiceConfig {
  std::filesystem::path checkpoint;
  std::size_t shots = 5;
  std::vector<std::string> labels{"single_hit", "multi_hit", "non_sample_hit"};
  /// Labels per class that fire a retrain; fires again at every further multiple.
  std::size_t retrain_min_per_class = 40;
  bool auto_retrain = true;
  bool from_scratch = false;
  std::size_t retrain_budget = 200;  // frames per class after augmentation
  TrainerConfig trainer{1.0, 64, 64, 5, 1e-3, 0};
  AugmentConfig augment{};
  EmbeddingNetConfig model{};  // used when starting without a checkpoint
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path spool;
  std::size_t frame_size = 96;

  void validate() const {
    if (shots == 0) throw std::invalid_argument("service config: shots must be >= 1");
    if (labels.empty()) throw std::invalid_argument("service config: label set must not be empty");
    for (const auto& l : labels) parse_hit_label(l);
    if (retrain_min_per_class == 0) throw std::invalid_argument("service config: retrain_min_per_class must be >= 1");
    trainer.validate();
  }
};

enum class FrameState { unlabeled, labeled, classified };

inline const char* to_string(FrameState s) {
  switch (s) {
    case FrameState::unlabeled: return "unlabeled";
    case FrameState::labeled: return "labeled";
    case FrameState::classified: return "classified";
  }
  return "?";
}

inline FrameState parse_frame_state(const std::string& s) {
  for (FrameState f : {FrameState::unlabeled, FrameState::labeled, FrameState::classified})
    if (s == to_string(f)) return f;
  throw std::invalid_argument("unknown frame state '" + s + "'");
}

/// One classification, attributed to the snapshot that produced it.
struct ClassificationEvent {
  std::uint64_t seq = 0;
  std::uint64_t frame_id = 0;
  std::string predicted_label;
  std::vector<std::string> labels;
  std::vector<double> mean_distance;
  bool tie = false;
  std::uint64_t model_version = 0;
  std::uint64_t support_version = 0;
};

inline nlohmann::json to_json(const ClassificationEvent& e) {
  nlohmann::json d = nlohmann::json::object();
  for (std::size_t k = 0; k < e.labels.size(); ++k) d[e.labels[k]] = e.mean_distance[k];
  return {{"seq", e.seq},
          {"frame_id", e.frame_id},
          {"predicted_label", e.predicted_label},
          {"labels", e.labels},
          {"mean_distance", d},
          {"tie", e.tie},
          {"model_version", e.model_version},
          {"support_version", e.support_version}};
}

struct LabelChange {
  std::string label;
  std::string previous;  // empty for the first label
  std::int64_t at_ms = 0;
};

struct FrameRecord {
  std::uint64_t frame_id = 0;
  std::shared_ptr<const std::vector<float>> pixels;
  std::shared_ptr<const std::vector<std::uint8_t>> mask;
  FrameState state = FrameState::unlabeled;
  std::optional<std::string> label;
  std::optional<ClassificationEvent> result;
  std::vector<LabelChange> history;
  bool pinned = false;
  std::uint64_t label_order = 0;  // larger = labeled more recently
  std::int64_t received_ms = 0;
  std::int64_t updated_ms = 0;
};

/// Immutable model plus support set served together.
struct Snapshot {
  std::uint64_t model_version = 0;
  std::uint64_t support_version = 0;
  std::shared_ptr<const EmbeddingNet<float>> model;
  SupportSet support;  // classes with at least one support, in label-set order
  std::map<std::string, std::vector<std::uint64_t>> support_frames;
};

struct LabelAck {
  std::uint64_t frame_id = 0;
  std::string label;
  std::string previous;
  bool retrain_triggered = false;
  std::map<std::string, std::size_t> label_counts;
};

/// Entry of the append-only event log.
struct ServiceEvent {
  std::uint64_t seq = 0;
  std::string kind;  // frame, label, pin, classify, swap
  std::uint64_t frame_id = 0;
  nlohmann::json data;
};

/// Online classification service. Classifications run against an immutable
/// snapshot; labels update the support set at once; a background fine-tune
/// swaps in a new snapshot when it finishes.
class Service {
 public:
  Service(ServiceConfig config, EmbeddingNet<float> model) : config_(std::move(config)) {
    config_.validate();
    auto snap = std::make_shared<Snapshot>();
    snap->model_version = 1;
    snap->support_version = 1;
    snap->model = std::make_shared<const EmbeddingNet<float>>(std::move(model));
    snapshot_ = std::move(snap);
  }

  explicit Service(ServiceConfig config)
      : Service(config, config.checkpoint.empty() ? EmbeddingNet<float>::build(config.model, config.trainer.seed)
                                                  : load_embedding_net<float>(config.checkpoint)) {}

  ~Service() { wait_idle(); }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  const ServiceConfig& config() const { return config_; }

  std::shared_ptr<const Snapshot> snapshot() const {
    std::lock_guard<std::mutex> lock(snap_mu_);
    return snapshot_;
  }

  std::uint64_t add_frame(std::vector<float> pixels, std::vector<std::uint8_t> mask = {}) {
    const std::size_t P = config_.frame_size * config_.frame_size;
    if (pixels.size() != P) {
      throw ServiceError(400, "frame must have " + std::to_string(P) + " pixels, got " + std::to_string(pixels.size()));
    }
    if (mask.empty()) mask.assign(P, 1);
    if (mask.size() != P) throw ServiceError(400, "mask must have " + std::to_string(P) + " entries");
    std::lock_guard<std::mutex> lock(mu_);
    FrameRecord r;
    r.frame_id = next_frame_id_++;
    r.pixels = std::make_shared<const std::vector<float>>(std::move(pixels));
    r.mask = std::make_shared<const std::vector<std::uint8_t>>(std::move(mask));
    r.received_ms = r.updated_ms = now_ms();
    const auto id = r.frame_id;
    frames_.emplace(id, std::move(r));
    log_locked("frame", id, {});
    return id;
  }

  /// Classifies a stored frame against the current snapshot.
  ClassificationEvent classify(std::uint64_t frame_id) {
    std::shared_ptr<const std::vector<float>> pixels;
    {
      std::lock_guard<std::mutex> lock(mu_);
      pixels = find_locked(frame_id).pixels;
    }
    const auto snap = snapshot();
    if (snap->support.classes.empty()) throw ServiceError(409, "support set is empty; label frames first");
    const std::size_t S = config_.frame_size;
    Tensor<float> image(Shape{1, 1, S, S});
    std::copy(pixels->begin(), pixels->end(), image.data());
    const ClassificationResult r = classify_pattern(*snap->model, image, snap->support);
    ClassificationEvent e{0, frame_id, r.predicted_label, r.labels, r.mean_distance, r.tie,
                          snap->model_version, snap->support_version};
    std::lock_guard<std::mutex> lock(mu_);
    e.seq = next_seq_;
    FrameRecord& f = find_locked(frame_id);
    if (f.state == FrameState::unlabeled) f.state = FrameState::classified;
    f.result = e;
    f.updated_ms = now_ms();
    ++classified_;
    recent_.push_back(std::chrono::steady_clock::now());
    if (recent_.size() > 256) recent_.pop_front();
    log_locked("classify", frame_id, to_json(e));
    return e;
  }

  LabelAck label(std::uint64_t frame_id, const std::string& label) {
    if (std::find(config_.labels.begin(), config_.labels.end(), label) == config_.labels.end()) {
      throw ServiceError(400, "label '" + label + "' is not in the label set");
    }
    LabelAck ack;
    bool start = false;
    {
      std::lock_guard<std::mutex> lock(mu_);
      FrameRecord& f = find_locked(frame_id);
      ack.frame_id = frame_id;
      ack.label = label;
      ack.previous = f.label.value_or("");
      f.history.push_back({label, ack.previous, now_ms()});
      f.label = label;
      f.state = FrameState::labeled;
      f.label_order = ++label_counter_;
      f.updated_ms = now_ms();
      log_locked("label", frame_id, {{"label", label}, {"previous", ack.previous}});
      rebuild_support_locked();
      ack.label_counts = label_counts_locked();
      std::size_t level = std::numeric_limits<std::size_t>::max();
      for (const auto& l : config_.labels) level = std::min(level, ack.label_counts[l] / config_.retrain_min_per_class);
      if (level > trigger_level_) {
        trigger_level_ = level;
        ack.retrain_triggered = true;
        ++triggers_;
        start = config_.auto_retrain;
      }
    }
    if (start) start_retrain();
    return ack;
  }

  /// Pins a labeled frame into its class's support set (or unpins it).
  void pin(std::uint64_t frame_id, bool pinned = true) {
    std::lock_guard<std::mutex> lock(mu_);
    FrameRecord& f = find_locked(frame_id);
    if (!f.label) throw ServiceError(400, "frame " + std::to_string(frame_id) + " is not labeled");
    f.pinned = pinned;
    log_locked("pin", frame_id, {{"pinned", pinned}});
    rebuild_support_locked();
  }

  /// Starts a background fine-tune on the labeled frames. False if one is
  /// already running or nothing is labeled.
  bool start_retrain() {
    std::lock_guard<std::mutex> lock(mu_);
    if (retraining_) return false;
    Dataset pool(config_.frame_size);
    std::vector<std::string> ids;
    std::vector<HitLabel> classes;
    for (const auto& [id, f] : frames_) {
      if (!f.label) continue;
      PatternRecord r;
      r.id = "f" + std::to_string(id);
      r.label = parse_hit_label(*f.label);
      r.sample_id = 0;
      pool.add(r, *f.pixels, *f.mask);
      ids.push_back(r.id);
      if (std::find(classes.begin(), classes.end(), r.label) == classes.end()) classes.push_back(r.label);
    }
    if (pool.empty()) return false;
    if (!config_.spool.empty()) write_dataset(pool, config_.spool);
    retraining_ = true;
    if (worker_.joinable()) worker_.join();
    const auto base = snapshot();
    const std::uint64_t round = ++retrain_rounds_;
    worker_ = std::thread([this, pool = std::move(pool), ids = std::move(ids), base, round] {
      try {
        EmbeddingNet<float> net;
        if (config_.from_scratch) {
          net = EmbeddingNet<float>::build(base->model->config(), stream_seed(config_.trainer.seed, round));
        } else {
          auto copy = std::const_pointer_cast<EmbeddingNet<float>>(base->model);
          net = embedding_from_checkpoint<float>(to_checkpoint(*copy));
        }
        std::size_t largest = 0;
        std::map<HitLabel, std::size_t> per;
        for (const auto& r : pool.records()) largest = std::max(largest, ++per[r.label]);
        const Dataset expanded = expand_split(pool, ids, std::max(config_.retrain_budget, largest), config_.augment,
                                              stream_seed(config_.trainer.seed, round, 0xa06), {}, 1);
        TrainerConfig tc = config_.trainer;
        tc.seed = stream_seed(config_.trainer.seed, round, 0x7a1);
        train(net, expanded, nullptr, tc);
        swap_model(std::make_shared<const EmbeddingNet<float>>(std::move(net)));
      } catch (const std::exception& ex) {
        std::lock_guard<std::mutex> lock(mu_);
        last_error_ = ex.what();
      }
      std::lock_guard<std::mutex> lock(mu_);
      retraining_ = false;
      idle_cv_.notify_all();
    });
    return true;
  }

  /// Replaces the model and recomputes every support embedding; classifications
  /// already running finish against the old snapshot.
  void swap_model(std::shared_ptr<const EmbeddingNet<float>> model) {
    std::lock_guard<std::mutex> lock(mu_);
    cache_.clear();
    model_ = model;
    const auto old = snapshot();
    next_model_version_ = old->model_version + 1;
    rebuild_support_locked();
    log_locked("swap", 0, {{"model_version", next_model_version_}});
  }

  bool retraining() const {
    std::lock_guard<std::mutex> lock(mu_);
    return retraining_;
  }

  /// Blocks until no retrain is running.
  void wait_idle() {
    {
      std::unique_lock<std::mutex> lock(mu_);
      idle_cv_.wait(lock, [this] { return !retraining_; });
    }
    if (worker_.joinable()) worker_.join();
  }

  std::vector<FrameRecord> frames(std::optional<FrameState> state = std::nullopt) const {
    std::lock_guard<std::mutex> lock(mu_);
    std::vector<FrameRecord> out;
    for (const auto& [id, f] : frames_)
      if (!state || f.state == *state) out.push_back(f);
    return out;
  }

  FrameRecord frame(std::uint64_t frame_id) const {
    std::lock_guard<std::mutex> lock(mu_);
    return find_locked(frame_id);
  }

  /// Classification events with seq > after, waiting up to `timeout` for one.
  std::vector<ClassificationEvent> classifications_since(std::uint64_t after, std::chrono::milliseconds timeout) {
    std::unique_lock<std::mutex> lock(mu_);
    auto ready = [&] { return stopping_ || (!events_.empty() && events_.back().seq > after && has_classify_after(after)); };
    event_cv_.wait_for(lock, timeout, ready);
    std::vector<ClassificationEvent> out;
    // seq starts at 1 and has no gaps, so event `after` sits at index after - 1.
    for (std::size_t i = std::min<std::size_t>(after, events_.size()); i < events_.size(); ++i)
      if (events_[i].kind == "classify") out.push_back(event_from_json(events_[i].data));
    return out;
  }

  std::vector<ServiceEvent> events() const {
    std::lock_guard<std::mutex> lock(mu_);
    return events_;
  }

  /// Wakes every waiting stream reader.
  void stop_streams() {
    std::lock_guard<std::mutex> lock(mu_);
    stopping_ = true;
    event_cv_.notify_all();
  }

  nlohmann::json status() const {
    const auto snap = snapshot();
    std::lock_guard<std::mutex> lock(mu_);
    nlohmann::json support = nlohmann::json::object();
    for (const auto& l : config_.labels) {
      auto it = snap->support_frames.find(l);
      support[l] = it == snap->support_frames.end() ? 0 : it->second.size();
    }
    double rate = 0;
    if (recent_.size() >= 2) {
      const double dt = std::chrono::duration<double>(recent_.back() - recent_.front()).count();
      if (dt > 0) rate = static_cast<double>(recent_.size() - 1) / dt;
    }
    nlohmann::json j{{"model_version", snap->model_version},
                     {"support_version", snap->support_version},
                     {"shots", config_.shots},
                     {"labels", config_.labels},
                     {"label_counts", label_counts_locked()},
                     {"support_counts", support},
                     {"frames", frames_.size()},
                     {"classified", classified_},
                     {"throughput_fps", rate},
                     {"retraining", retraining_},
                     {"retrain_triggers", triggers_},
                     {"retrain_min_per_class", config_.retrain_min_per_class},
                     {"ready", !snap->support.classes.empty()}};
    if (!last_error_.empty()) j["last_error"] = last_error_;
    return j;
  }

  nlohmann::json supports_json() const {
    const auto snap = snapshot();
    std::lock_guard<std::mutex> lock(mu_);
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& l : config_.labels) {
      nlohmann::json ids = nlohmann::json::array(), pinned = nlohmann::json::array();
      auto it = snap->support_frames.find(l);
      if (it != snap->support_frames.end())
        for (auto id : it->second) {
          ids.push_back(id);
          auto f = frames_.find(id);
          if (f != frames_.end() && f->second.pinned) pinned.push_back(id);
        }
      classes.push_back({{"label", l}, {"frames", ids}, {"pinned", pinned}});
    }
    return {{"shots", config_.shots},
            {"model_version", snap->model_version},
            {"support_version", snap->support_version},
            {"classes", classes}};
  }

  /// Writes the labeled frames as a dataset directory.
  void write_spool(const std::filesystem::path& dir) const {
    std::lock_guard<std::mutex> lock(mu_);
    Dataset pool(config_.frame_size);
    for (const auto& [id, f] : frames_) {
      if (!f.label) continue;
      PatternRecord r;
      r.id = "f" + std::to_string(id);
      r.label = parse_hit_label(*f.label);
      pool.add(r, *f.pixels, *f.mask);
    }
    write_dataset(pool, dir);
  }

 private:
  static std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
  }

  static ClassificationEvent event_from_json(const nlohmann::json& j) {
    ClassificationEvent e;
    e.seq = j.at("seq");
    e.frame_id = j.at("frame_id");
    e.predicted_label = j.at("predicted_label");
    e.labels = j.at("labels").get<std::vector<std::string>>();
    for (const auto& l : e.labels) e.mean_distance.push_back(j.at("mean_distance").at(l));
    e.tie = j.at("tie");
    e.model_version = j.at("model_version");
    e.support_version = j.at("support_version");
    return e;
  }

  bool has_classify_after(std::uint64_t after) const {
    for (auto it = events_.rbegin(); it != events_.rend() && it->seq > after; ++it)
      if (it->kind == "classify") return true;
    return false;
  }

  FrameRecord& find_locked(std::uint64_t id) {
    auto it = frames_.find(id);
    if (it == frames_.end()) throw ServiceError(404, "unknown frame " + std::to_string(id));
    return it->second;
  }
  const FrameRecord& find_locked(std::uint64_t id) const {
    auto it = frames_.find(id);
    if (it == frames_.end()) throw ServiceError(404, "unknown frame " + std::to_string(id));
    return it->second;
  }

  void log_locked(const std::string& kind, std::uint64_t frame_id, nlohmann::json data) {
    events_.push_back({next_seq_++, kind, frame_id, std::move(data)});
    event_cv_.notify_all();
  }

  std::map<std::string, std::size_t> label_counts_locked() const {
    std::map<std::string, std::size_t> c;
    for (const auto& l : config_.labels) c[l] = 0;
    for (const auto& [id, f] : frames_)
      if (f.label) ++c[*f.label];
    return c;
  }

  // Pinned frames first, then the most recently labeled, up to `shots` per
  // class. Embeddings are cached per model.
  void rebuild_support_locked() {
    const auto old = snapshot();
    auto model = model_ ? model_ : old->model;
    auto snap = std::make_shared<Snapshot>();
    snap->model = model;
    snap->model_version = model_ ? next_model_version_ : old->model_version;
    snap->support_version = old->support_version + 1;
    std::map<std::string, std::vector<const FrameRecord*>> by;
    for (const auto& [id, f] : frames_)
      if (f.label) by[*f.label].push_back(&f);
    std::vector<std::string> labels, sources;
    std::vector<std::vector<float>> rows;
    const std::size_t S = config_.frame_size;
    for (const auto& l : config_.labels) {
      auto& v = by[l];
      std::stable_sort(v.begin(), v.end(), [](const FrameRecord* a, const FrameRecord* b) {
        if (a->pinned != b->pinned) return a->pinned;
        return a->label_order > b->label_order;
      });
      if (v.size() > config_.shots) v.resize(config_.shots);
      std::sort(v.begin(), v.end(), [](const FrameRecord* a, const FrameRecord* b) { return a->frame_id < b->frame_id; });
      for (const FrameRecord* f : v) {
        auto it = cache_.find(f->frame_id);
        if (it == cache_.end()) {
          Tensor<float> image(Shape{1, 1, S, S});
          std::copy(f->pixels->begin(), f->pixels->end(), image.data());
          const Tensor<float> e = model->embed(image);
          it = cache_.emplace(f->frame_id, std::vector<float>(e.data(), e.data() + e.size())).first;
        }
        rows.push_back(it->second);
        labels.push_back(l);
        sources.push_back(std::to_string(f->frame_id));
        snap->support_frames[l].push_back(f->frame_id);
      }
    }
    if (!rows.empty()) {
      Tensor<float> emb(Shape{rows.size(), rows.front().size()});
      for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), emb.row(i).begin());
      snap->support = build_support_set(emb, labels, sources);
    } else {
      snap->support.dim = model->embedding_dim();
    }
    model_.reset();
    std::lock_guard<std::mutex> lock(snap_mu_);
    snapshot_ = std::move(snap);
  }

  ServiceConfig config_;
  mutable std::mutex mu_;
  mutable std::mutex snap_mu_;
  std::shared_ptr<const Snapshot> snapshot_;
  std::shared_ptr<const EmbeddingNet<float>> model_;  // pending swap, consumed by rebuild_support_locked
  std::uint64_t next_model_version_ = 0;
  std::map<std::uint64_t, FrameRecord> frames_;
  std::map<std::uint64_t, std::vector<float>> cache_;
  std::vector<ServiceEvent> events_;
  std::condition_variable event_cv_;
  std::condition_variable idle_cv_;
  std::deque<std::chrono::steady_clock::time_point> recent_;
  std::uint64_t next_frame_id_ = 1;
  std::uint64_t next_seq_ = 1;
  std::uint64_t label_counter_ = 0;
  std::size_t trigger_level_ = 0;
  std::size_t triggers_ = 0;
  std::size_t classified_ = 0;
  std::uint64_t retrain_rounds_ = 0;
  bool retraining_ = false;
  bool stopping_ = false;
  std::string last_error_;
  std::thread worker_;
};

}  // namespace specklenn
