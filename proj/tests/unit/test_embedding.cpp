#include <gtest/gtest.h>

#include <fstream>

#include "specklenn/baseline.hpp"
#include "specklenn/checkpoint.hpp"
#include "specklenn/embedding.hpp"
#include "support/fixtures.hpp"

using namespace specklenn;
using specklenn::testing::TempDir;

namespace {

EmbeddingNetConfig small_config() {
  EmbeddingNetConfig c;
  c.backbone.input_size = 20;
  c.backbone.conv1_out_channels = 4;
  c.backbone.conv2_out_channels = 6;
  c.fc_hidden = 16;
  c.embedding_dim = 8;
  return c;
}

Tensor<float> random_batch(std::size_t B, std::size_t S, std::uint64_t seed, float scale = 1.0f) {
  Rng rng(seed);
  std::lognormal_distribution<float> d(0.0f, 1.0f);
  Tensor<float> t(Shape{B, 1, S, S});
  for (auto& v : t.values()) v = scale * d(rng);
  return t;
}

// Counts parameters layer by layer from the architecture description.
std::size_t count_parameters(std::size_t S, std::size_t c1, std::size_t c2, std::size_t k, std::size_t hidden,
                             std::size_t dim) {
  std::size_t n = 0;
  n += c1 * 1 * k * k + c1;  // conv1
  n += 2 * c1;               // bn1 gamma, beta
  std::size_t e = (S - k + 1) / 2;
  n += c2 * c1 * k * k + c2;
  n += 2 * c2;
  e = (e - k + 1) / 2;
  n += hidden * c2 * e * e + hidden;
  n += dim * hidden + dim;
  return n;
}

}  // namespace

TEST(EmbeddingNet, DefaultArchitectureParameterCount) {
  const EmbeddingNetConfig c;
  EXPECT_EQ(c.backbone.feature_count(), 64u * 21 * 21);
  const auto net = EmbeddingNet<float>::build(c, 1);
  EXPECT_EQ(net.parameter_count(), count_parameters(96, 32, 64, 5, 512, 128));
  EXPECT_EQ(net.parameter_count(), 14569152u);
  EXPECT_EQ(net.embedding_dim(), 128u);
}

TEST(EmbeddingNet, SmallArchitectureParameterCount) {
  const auto net = EmbeddingNet<float>::build(small_config(), 1);
  EXPECT_EQ(net.parameter_count(), count_parameters(20, 4, 6, 5, 16, 8));
}

TEST(EmbeddingNet, InitialWeightsFollowConfiguredSpread) {
  auto net = EmbeddingNet<float>::build(EmbeddingNetConfig{}, 3);
  for (Parameter<float>* p : net.parameters()) {
    if (p->name != "fc1.weight") continue;
    double s = 0, s2 = 0;
    for (float v : p->value.values()) {
      s += v;
      s2 += static_cast<double>(v) * v;
    }
    const double n = static_cast<double>(p->value.size());
    EXPECT_NEAR(s / n, 0.0, 1e-3);
    EXPECT_NEAR(std::sqrt(s2 / n), 0.2, 1e-3);
  }
}

TEST(EmbeddingNet, OutputsUnitNormRows) {
  const auto net = EmbeddingNet<float>::build(small_config(), 2);
  for (float scale : {1e-3f, 1.0f, 1e4f}) {
    const Tensor<float> e = net.embed(random_batch(16, 20, 5, scale));
    ASSERT_EQ(e.dim(0), 16u);
    ASSERT_EQ(e.dim(1), 8u);
    for (std::size_t n = 0; n < 16; ++n) {
      double s = 0;
      for (float v : e.row(n)) s += static_cast<double>(v) * v;
      EXPECT_NEAR(std::sqrt(s), 1.0, 1e-5);
    }
  }
}

TEST(EmbeddingNet, EvalEmbeddingIgnoresBatchMates) {
  const auto net = EmbeddingNet<float>::build(small_config(), 2);
  const Tensor<float> batch = random_batch(6, 20, 9);
  const Tensor<float> all = net.embed(batch);
  for (std::size_t n = 0; n < 6; ++n) {
    Tensor<float> one(Shape{1, 1, 20, 20});
    std::copy(batch.row(n).begin(), batch.row(n).end(), one.values().begin());
    const Tensor<float> e = net.embed(one);
    for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(e[k], all.row(n)[k]);
  }
}

TEST(EmbeddingNet, InvariantToIntensityScaleAndOffset) {
  const auto net = EmbeddingNet<float>::build(small_config(), 4);
  const Tensor<float> a = random_batch(3, 20, 1);
  Tensor<float> b = a;
  for (auto& v : b.values()) v = 7.0f * v + 3.0f;
  const Tensor<float> ea = net.embed(a), eb = net.embed(b);
  for (std::size_t i = 0; i < ea.size(); ++i) EXPECT_NEAR(ea[i], eb[i], 1e-4);
}

TEST(EmbeddingNet, SameSeedSameWeights) {
  const auto a = EmbeddingNet<float>::build(small_config(), 11);
  const auto b = EmbeddingNet<float>::build(small_config(), 11);
  const auto c = EmbeddingNet<float>::build(small_config(), 12);
  const Tensor<float> x = random_batch(2, 20, 0);
  EXPECT_EQ(a.embed(x).values()[0], b.embed(x).values()[0]);
  EXPECT_NE(a.embed(x).values()[0], c.embed(x).values()[0]);
}

TEST(EmbeddingNet, WrongInputShapeRejected) {
  const auto net = EmbeddingNet<float>::build(small_config(), 1);
  try {
    net.embed(Tensor<float>(Shape{1, 1, 21, 21}));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[B,1,20,20]"), std::string::npos) << e.what();
  }
  EXPECT_THROW(net.embed(Tensor<float>(Shape{1, 2, 20, 20})), ShapeError);
}

TEST(EmbeddingNet, ConfigValidation) {
  EmbeddingNetConfig c = small_config();
  c.embedding_dim = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.backbone.input_size = 12;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = small_config();
  c.backbone.init_std = 0;
  EXPECT_THROW(EmbeddingNet<float>::build(c, 0), std::invalid_argument);
}

TEST(EmbeddingNet, TrainModeAdvancesRunningStatistics) {
  auto net = EmbeddingNet<float>::build(small_config(), 1);
  const Tensor<float> x = random_batch(4, 20, 2);
  const Tensor<float> before = net.embed(x);
  net.embed(x, Mode::train);
  const Tensor<float> after = net.embed(x);
  double diff = 0;
  for (std::size_t i = 0; i < before.size(); ++i) diff += std::abs(before[i] - after[i]);
  EXPECT_GT(diff, 0.0);
}

TEST(Standardize, ZeroMeanUnitSpread) {
  std::vector<float> in{1, 2, 3, 4, 5, 6}, out(6);
  standardize_frame<float>(in, out);
  double s = 0, s2 = 0;
  for (float v : out) {
    s += v;
    s2 += static_cast<double>(v) * v;
  }
  EXPECT_NEAR(s, 0.0, 1e-6);
  EXPECT_NEAR(s2 / 6, 1.0, 1e-6);
  std::vector<float> flat(6, 3.0f);
  standardize_frame<float>(flat, out);
  for (float v : out) EXPECT_EQ(v, 0.0f);
}

TEST(Checkpoint, EmbeddingRoundTripIsBitExact) {
  TempDir dir("ck");
  auto net = EmbeddingNet<float>::build(small_config(), 6);
  net.embed(random_batch(4, 20, 1), Mode::train);
  save_embedding_net(net, dir.path, {42, 3, 0.125, 7});
  TrainingMetadata meta;
  auto back = load_embedding_net<float>(dir.path, &meta);
  EXPECT_EQ(back.config(), net.config());
  EXPECT_EQ(meta.seed, 42u);
  EXPECT_EQ(meta.epoch, 3u);
  EXPECT_EQ(meta.loss, 0.125);
  EXPECT_EQ(meta.model_version, 7u);
  auto sa = net.state(), sb = back.state();
  ASSERT_EQ(sa.size(), sb.size());
  for (std::size_t i = 0; i < sa.size(); ++i) {
    EXPECT_EQ(sa[i].name, sb[i].name);
    EXPECT_EQ(sa[i].tensor->values().size(), sb[i].tensor->values().size());
    EXPECT_TRUE(std::equal(sa[i].tensor->values().begin(), sa[i].tensor->values().end(),
                           sb[i].tensor->values().begin()))
        << sa[i].name;
  }
  const Tensor<float> x = random_batch(3, 20, 8);
  const Tensor<float> ea = net.embed(x), eb = back.embed(x);
  EXPECT_TRUE(std::equal(ea.values().begin(), ea.values().end(), eb.values().begin()));
}

TEST(Checkpoint, BaselineRoundTripAndKindCheck) {
  TempDir dir("ckb");
  BaselineConfig bc;
  bc.backbone = small_config().backbone;
  bc.fc_hidden = 8;
  bc.threshold = 0.3;
  auto net = BaselineNet<float>::build(bc, 1);
  save_baseline(net, dir.path);
  const auto back = load_baseline<float>(dir.path);
  EXPECT_EQ(back.config().threshold, 0.3);
  const Tensor<float> x = random_batch(2, 20, 4);
  EXPECT_EQ(net.logits(x), back.logits(x));
  EXPECT_THROW(load_embedding_net<float>(dir.path), CheckpointError);
}

TEST(Checkpoint, TruncatedBlobReported) {
  TempDir dir("cktrunc");
  auto net = EmbeddingNet<float>::build(small_config(), 1);
  save_embedding_net(net, dir.path);
  const auto blob = dir.path / kCheckpointBlob;
  std::filesystem::resize_file(blob, std::filesystem::file_size(blob) - 4);
  try {
    load_embedding_net<float>(dir.path);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("bytes"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, CorruptBlobReported) {
  TempDir dir("ckcorrupt");
  auto net = EmbeddingNet<float>::build(small_config(), 1);
  save_embedding_net(net, dir.path);
  {
    std::fstream f(dir.path / kCheckpointBlob, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(17);
    f.put('\x7f');
  }
  EXPECT_THROW(load_embedding_net<float>(dir.path), CheckpointError);
}

TEST(Checkpoint, VersionAndMissingFilesReported) {
  TempDir dir("ckver");
  auto net = EmbeddingNet<float>::build(small_config(), 1);
  save_embedding_net(net, dir.path);
  std::ifstream in(dir.path / kCheckpointManifest);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();
  const auto pos = text.find("format_version 1");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 16, "format_version 9");
  std::ofstream(dir.path / kCheckpointManifest) << text;
  try {
    load_embedding_net<float>(dir.path);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version 9"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_embedding_net<float>(dir.path / "absent"), CheckpointError);
}

TEST(Checkpoint, ShapeMismatchOnLoadRejected) {
  Checkpoint ck;
  {
    auto net = EmbeddingNet<float>::build(small_config(), 1);
    ck = to_checkpoint(net);
  }
  ck.config["embedding_dim"] = "9";
  EXPECT_THROW(embedding_from_checkpoint<float>(ck), CheckpointError);
}
