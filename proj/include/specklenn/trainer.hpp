#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "specklenn/adam.hpp"
#include "specklenn/checkpoint.hpp"
#include "specklenn/dataset.hpp"
#include "specklenn/embedding.hpp"
#include "specklenn/triplet.hpp"

namespace specklenn {

struct TrainerConfig {
  double alpha = 1.0;
  std::size_t batch_size = 64;
  std::size_t triplets_per_batch = 64;
  std::size_t epochs = 30;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;

  void validate() const {
    validate_margin(alpha);
    if (batch_size < 2) throw std::invalid_argument("trainer: batch_size must be at least 2");
    if (triplets_per_batch == 0) throw std::invalid_argument("trainer: triplets_per_batch must be positive");
    if (!(learning_rate >= 0)) throw std::invalid_argument("trainer: learning_rate must be non-negative");
  }
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0;              // mean hinge over the triplets trained on
  std::size_t batches = 0;
  std::size_t batches_trained = 0;  // batches that yielded at least one triplet
  std::size_t triplets = 0;
  DifficultyCounts candidates;  // all valid (a,p,n) seen, by difficulty
  bool no_triplets = false;     // nothing was mined; the model is unchanged
  std::optional<double> val_loss;
};

inline nlohmann::json to_json(const EpochMetrics& m) {
  nlohmann::json j{{"epoch", m.epoch},
                   {"loss", m.loss},
                   {"batches", m.batches},
                   {"batches_trained", m.batches_trained},
                   {"triplets", m.triplets},
                   {"easy", m.candidates.easy},
                   {"semi_hard", m.candidates.semi_hard},
                   {"hard", m.candidates.hard},
                   {"no_triplets", m.no_triplets}};
  if (m.val_loss) j["val_loss"] = *m.val_loss;
  return j;
}

/// Class and sample id of every frame, as the miner wants them.
struct BatchLabels {
  std::vector<int> labels;
  std::vector<int> samples;
};

inline BatchLabels batch_labels(const Dataset& ds, std::span<const std::size_t> idx) {
  BatchLabels out;
  for (std::size_t i : idx) {
    out.labels.push_back(static_cast<int>(ds.record(i).label));
    out.samples.push_back(ds.record(i).sample_id);
  }
  return out;
}

namespace detail {

template <class T>
std::vector<Tensor<T>> copy_buffers(EmbeddingNet<T>& net) {
  std::vector<Tensor<T>> out;
  for (const auto& nt : net.state())
    if (nt.name.find("running") != std::string::npos) out.push_back(*nt.tensor);
  return out;
}

template <class T>
void restore_buffers(EmbeddingNet<T>& net, const std::vector<Tensor<T>>& saved) {
  std::size_t k = 0;
  for (const auto& nt : net.state())
    if (nt.name.find("running") != std::string::npos) *nt.tensor = saved[k++];
}

inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t lo = 0; lo < n; lo += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(lo),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, lo + batch_size)));
  return out;
}

}  // namespace detail

/// One pass over `pool` in shuffled mini-batches: embed in train mode, mine
/// semi-hard triplets, minimize their mean hinge with Adam. A batch without
/// triplets leaves the model untouched, batch-norm statistics included.
template <class T>
EpochMetrics train_epoch(EmbeddingNet<T>& net, const Dataset& pool, const TrainerConfig& config,
                         AdamState<T>& adam, std::size_t epoch) {
  config.validate();
  if (pool.empty()) throw std::invalid_argument("train_epoch: empty training pool");
  adam.learning_rate = config.learning_rate;
  Rng rng = make_stream(config.seed, epoch, 0x7a1e);
  EpochMetrics m;
  m.epoch = epoch;
  double loss_sum = 0;
  auto params = net.parameters();
  Graph<T> g;
  for (const auto& idx : detail::make_batches(pool.size(), config.batch_size, rng)) {
    ++m.batches;
    if (idx.size() < 2) continue;
    const auto saved = detail::copy_buffers(net);
    g.reset();
    Tensor<T> x = standardize_batch(pool.frames(idx).template cast<T>());
    Var emb = net.forward(g, g.input(std::move(x)), Mode::train);
    const BatchLabels bl = batch_labels(pool, idx);
    MiningResult mined = mine_semi_hard(g.value(emb), bl.labels, bl.samples, config.alpha, rng,
                                        config.triplets_per_batch);
    m.candidates += mined.candidates;
    if (mined.triplets.empty()) {
      detail::restore_buffers(net, saved);
      continue;
    }
    TripletLoss tl = triplet_loss(g, emb, mined.triplets, config.alpha);
    const double n = static_cast<double>(mined.triplets.size());
    loss_sum += g.value(tl.loss)[0];
    Var mean = nn::scale(g, tl.loss, static_cast<T>(1.0 / n));
    zero_grads<T>(params);
    g.backward(mean);
    adam_step<T>(params, adam);
    ++m.batches_trained;
    m.triplets += mined.triplets.size();
  }
  m.no_triplets = m.triplets == 0;
  m.loss = m.triplets ? loss_sum / static_cast<double>(m.triplets) : 0.0;
  return m;
}

/// Mean hinge over every valid (a,p,n) of fixed validation batches, embedded
/// in eval mode. Easy triplets contribute zero, so the value falls as classes
/// separate.
template <class T>
double validation_loss(const EmbeddingNet<T>& net, const Dataset& pool, const TrainerConfig& config) {
  if (pool.empty()) throw std::invalid_argument("validation_loss: empty pool");
  Rng rng = make_stream(config.seed, 0, 0x7a11);
  const Tensor<T> all = net.embed(pool.frames().template cast<T>());
  double sum = 0;
  std::size_t count = 0;
  for (const auto& idx : detail::make_batches(pool.size(), config.batch_size, rng)) {
    const BatchLabels bl = batch_labels(pool, idx);
    const std::size_t D = all.dim(1);
    for (std::size_t a = 0; a < idx.size(); ++a)
      for (std::size_t p = 0; p < idx.size(); ++p) {
        if (p == a || bl.labels[p] != bl.labels[a] || bl.samples[p] != bl.samples[a]) continue;
        const double dap = squared_distance(all.row(idx[a]).data(), all.row(idx[p]).data(), D);
        for (std::size_t n = 0; n < idx.size(); ++n) {
          if (bl.labels[n] == bl.labels[a]) continue;
          const double dan = squared_distance(all.row(idx[a]).data(), all.row(idx[n]).data(), D);
          sum += std::max(0.0, config.alpha + dap - dan);
          ++count;
        }
      }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0;
};

/// Runs `config.epochs` epochs. With a validation pool the parameters of the
/// epoch with the lowest validation loss are restored at the end.
template <class T>
TrainResult train(EmbeddingNet<T>& net, const Dataset& train_pool, const Dataset* val_pool,
                  const TrainerConfig& config, const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
  config.validate();
  AdamState<T> adam;
  TrainResult r;
  std::optional<Checkpoint> best;
  for (std::size_t e = 0; e < config.epochs; ++e) {
    EpochMetrics m = train_epoch(net, train_pool, config, adam, e);
    if (val_pool && !val_pool->empty()) {
      m.val_loss = validation_loss(net, *val_pool, config);
      if (!best || *m.val_loss < r.best_val_loss) {
        r.best_val_loss = *m.val_loss;
        r.best_epoch = e;
        best = to_checkpoint(net, TrainingMetadata{config.seed, e, *m.val_loss});
      }
    }
    r.history.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  if (best) net = embedding_from_checkpoint<T>(*best);
  else if (!r.history.empty()) r.best_epoch = r.history.size() - 1;
  return r;
}

}  // namespace specklenn
