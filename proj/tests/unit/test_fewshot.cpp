#include <gtest/gtest.h>

#include <set>

#include "specklenn/eval.hpp"
#include "specklenn/fewshot.hpp"
#include "support/fixtures.hpp"

using namespace specklenn;
using specklenn::testing::toy_dataset;

namespace {

SupportSet two_d_support() {
  // Class a sits near +x, class b near +y.
  Tensor<float> e(Shape{4, 2}, {1, 0, 0.6f, 0.8f, 0, 1, -0.6f, 0.8f});
  std::vector<std::string> labels{"a", "a", "b", "b"};
  return build_support_set(e, labels);
}

// One-hot embeddings per class, so the few-shot classifier is exact.
Tensor<float> class_embeddings(const Dataset& ds, std::size_t dim) {
  Tensor<float> e(Shape{ds.size(), dim});
  for (std::size_t i = 0; i < ds.size(); ++i) e[i * dim + static_cast<std::size_t>(ds.record(i).label)] = 1.0f;
  return e;
}

}  // namespace

TEST(SupportSetTest, GroupsInFirstSeenOrder) {
  Tensor<float> e(Shape{5, 2}, {1, 0, 0, 1, 1, 0, 0, 1, 0, 1});
  std::vector<std::string> labels{"y", "x", "y", "x", "x"}, src{"p", "q", "r", "s", "t"};
  const SupportSet s = build_support_set(e, labels, src);
  ASSERT_EQ(s.labels(), (std::vector<std::string>{"y", "x"}));
  EXPECT_EQ(s.find("x")->embeddings.size(), 3u);
  EXPECT_EQ(s.find("y")->sources, (std::vector<std::string>{"p", "r"}));
  EXPECT_EQ(s.shots(), 0u);
  EXPECT_FALSE(s.balanced());
  EXPECT_EQ(s.find("z"), nullptr);
  EXPECT_EQ(two_d_support().shots(), 2u);
}

TEST(SupportSetTest, RejectsNonUnitAndMismatchedInput) {
  Tensor<float> e(Shape{2, 2}, {1, 0, 0.5f, 0});
  std::vector<std::string> labels{"a", "b"};
  EXPECT_THROW(build_support_set(e, labels), std::invalid_argument);
  std::vector<std::string> one{"a"};
  EXPECT_THROW(build_support_set(Tensor<float>(Shape{2, 2}, {1, 0, 0, 1}), one), std::invalid_argument);
  EXPECT_THROW(build_support_set(Tensor<float>(Shape{0, 2}), std::span<const std::string>{}), std::invalid_argument);
}

TEST(Classify, MeanSquaredDistanceByHand) {
  const SupportSet s = two_d_support();
  const std::vector<float> q{0.8f, 0.6f};
  const ClassificationResult r = classify(q, s);
  // |q-(1,0)|^2 = 0.4, |q-(0.6,0.8)|^2 = 0.08; |q-(0,1)|^2 = 0.8, |q-(-0.6,0.8)|^2 = 2.0.
  EXPECT_NEAR(r.mean_distance[0], 0.24, 1e-6);
  EXPECT_NEAR(r.mean_distance[1], 1.4, 1e-6);
  EXPECT_NEAR(r.distances[1][1], 2.0, 1e-6);
  EXPECT_EQ(r.predicted_label, "a");
  EXPECT_EQ(r.predicted_index, 0u);
  EXPECT_FALSE(r.tie);
}

TEST(Classify, TieGoesToEarliestClassAndIsFlagged) {
  Tensor<float> e(Shape{2, 2}, {1, 0, -1, 0});
  std::vector<std::string> labels{"late", "early"};
  const SupportSet s = build_support_set(e, labels);
  const std::vector<float> q{0, 1};
  const ClassificationResult r = classify(q, s);
  EXPECT_TRUE(r.tie);
  EXPECT_EQ(r.predicted_label, "late");
}

TEST(Classify, MeanNotMinimumDecides) {
  // Nearest single support is class b, but class a is closer on average.
  Tensor<float> e(Shape{4, 2}, {0.8f, 0.6f, 0.6f, 0.8f, 1, 0, -1, 0});
  std::vector<std::string> labels{"a", "a", "b", "b"};
  const SupportSet s = build_support_set(e, labels);
  const std::vector<float> q{1, 0};
  EXPECT_EQ(classify(q, s).predicted_label, "a");
}

TEST(Classify, ErrorsAreSpecific) {
  const SupportSet s = two_d_support();
  const std::vector<float> q3{1, 0, 0};
  EXPECT_THROW(classify(q3, s), ShapeError);
  EXPECT_THROW(classify(q3, SupportSet{}), std::invalid_argument);
  SupportSet hollow = s;
  hollow.classes[1].embeddings.clear();
  const std::vector<float> q{1, 0};
  EXPECT_THROW(classify(q, hollow), std::invalid_argument);
}

TEST(Classify, PatternPathEqualsEmbedThenClassify) {
  EmbeddingNetConfig c;
  c.backbone.input_size = 20;
  c.backbone.conv1_out_channels = 3;
  c.backbone.conv2_out_channels = 4;
  c.fc_hidden = 8;
  c.embedding_dim = 4;
  const auto net = EmbeddingNet<float>::build(c, 5);
  const Dataset ds = toy_dataset(1, {HitLabel::single_hit, HitLabel::multi_hit}, 3, 20);
  std::vector<std::string> labels;
  for (const auto& r : ds.records()) labels.push_back(to_string(r.label));
  const SupportSet s = build_support_set(net, ds.frames(), labels);
  Tensor<float> img(Shape{20, 20});
  for (std::size_t i = 0; i < 400; ++i) img[i] = static_cast<float>(i % 17);
  const ClassificationResult a = classify_pattern(net, img, s);
  const Tensor<float> e = net.embed(img.reshaped(Shape{1, 1, 20, 20}));
  const ClassificationResult b = classify(e.row(0), s);
  EXPECT_EQ(a.predicted_label, b.predicted_label);
  EXPECT_EQ(a.mean_distance, b.mean_distance);
  EXPECT_THROW(classify_pattern(net, Tensor<float>(Shape{19, 19}), s), ShapeError);
}

TEST(Metrics, AllPredictedFirstClass) {
  ConfusionMatrix cm({"single_hit", "non_single_hit"});
  cm.add(0, 0, 50);
  cm.add(1, 0, 50);
  const Metrics m = metrics(cm);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.5);
  EXPECT_NEAR(m.f1[0], 2.0 / 3.0, 1e-12);
  EXPECT_EQ(m.f1[1], 0.0);
  EXPECT_NEAR(m.macro_f1, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(headline_f1(cm, m), 2.0 / 3.0, 1e-12);
}

TEST(Metrics, PerfectAndEmpty) {
  ConfusionMatrix cm({"a", "b", "c"});
  for (std::size_t k = 0; k < 3; ++k) cm.add(k, k, 7);
  const Metrics m = metrics(cm);
  EXPECT_EQ(m.accuracy, 1.0);
  EXPECT_EQ(m.macro_f1, 1.0);
  EXPECT_THROW(metrics(ConfusionMatrix({"a"})), std::invalid_argument);
  ConfusionMatrix other({"x", "y", "z"});
  EXPECT_THROW(cm += other, std::invalid_argument);
  EXPECT_THROW(cm.add("a", "q"), std::invalid_argument);
}

TEST(Metrics, KnownThreeClassMatrix) {
  ConfusionMatrix cm({"a", "b", "c"});
  cm.counts = {{5, 1, 0}, {2, 3, 1}, {0, 0, 4}};
  const Metrics m = metrics(cm);
  EXPECT_NEAR(m.accuracy, 12.0 / 16.0, 1e-12);
  // a: p = 5/7, r = 5/6. b: p = 3/4, r = 3/6. c: p = 4/5, r = 1.
  EXPECT_NEAR(m.f1[0], 2 * (5.0 / 7) * (5.0 / 6) / (5.0 / 7 + 5.0 / 6), 1e-12);
  EXPECT_NEAR(m.f1[1], 0.6, 1e-12);
  EXPECT_NEAR(m.f1[2], 8.0 / 9.0, 1e-12);
}

TEST(FewShotEval, SeparatedClustersScorePerfectly) {
  const Dataset ds = toy_dataset(2, {HitLabel::single_hit, HitLabel::multi_hit, HitLabel::non_sample_hit}, 8);
  const FewShotReport r = run_fewshot_eval(class_embeddings(ds, 4), ds, {5, 6, 3, true});
  EXPECT_EQ(r.mean_accuracy, 1.0);
  EXPECT_EQ(r.std_accuracy, 0.0);
  EXPECT_EQ(r.mean_f1, 1.0);
  EXPECT_EQ(r.per_sample.size(), 2u);
  // Each episode and sample leaves 3 queries per class.
  EXPECT_EQ(r.queries.size(), 6u * 2 * 3 * 3);
  EXPECT_EQ(r.overall.total(), r.queries.size());
}

TEST(FewShotEval, QueriesNeverIncludeEpisodeSupports) {
  const Dataset ds = toy_dataset(1, {HitLabel::single_hit, HitLabel::multi_hit}, 9);
  const FewShotReport r = run_fewshot_eval(class_embeddings(ds, 4), ds, {3, 5, 1, true});
  std::vector<std::set<std::size_t>> seen(5);
  for (const auto& q : r.queries) EXPECT_TRUE(seen[q.episode].insert(q.frame).second);
  for (const auto& s : seen) EXPECT_EQ(s.size(), 2u * (9 - 3));
}

TEST(FewShotEval, DeterministicPerSeedAndEpisodesDiffer) {
  const Dataset ds = toy_dataset(1, {HitLabel::single_hit, HitLabel::multi_hit}, 12, 8, 3);
  Rng rng(1);
  std::normal_distribution<float> n(0, 1);
  Tensor<float> e(Shape{ds.size(), 3});
  for (std::size_t i = 0; i < ds.size(); ++i) {
    double s = 0;
    for (std::size_t k = 0; k < 3; ++k) s += std::pow(e[i * 3 + k] = n(rng), 2);
    for (std::size_t k = 0; k < 3; ++k) e[i * 3 + k] /= static_cast<float>(std::sqrt(s));
  }
  const FewShotReport a = run_fewshot_eval(e, ds, {2, 10, 7, true});
  const FewShotReport b = run_fewshot_eval(e, ds, {2, 10, 7, true});
  const FewShotReport c = run_fewshot_eval(e, ds, {2, 10, 8, true});
  EXPECT_EQ(a.episode_accuracy, b.episode_accuracy);
  EXPECT_NE(a.episode_accuracy, c.episode_accuracy);
  EXPECT_GT(a.std_accuracy, 0.0);
}

TEST(FewShotEval, PooledModeMixesSamples) {
  const Dataset ds = toy_dataset(3, {HitLabel::single_hit, HitLabel::multi_hit}, 2);
  // Two per class per sample cannot support five shots per sample, but six pooled can.
  EXPECT_THROW(run_fewshot_eval(class_embeddings(ds, 4), ds, {5, 1, 0, true}), std::invalid_argument);
  const FewShotReport r = run_fewshot_eval(class_embeddings(ds, 4), ds, {5, 1, 0, false});
  EXPECT_EQ(r.queries.size(), 2u);
}

TEST(FewShotEval, TooFewPatternsNamesClassAndSample) {
  const Dataset ds = toy_dataset(1, {HitLabel::single_hit, HitLabel::multi_hit}, 4);
  try {
    run_fewshot_eval(class_embeddings(ds, 4), ds, {5, 1, 0, true});
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("single_hit of sample 0 has 4 patterns, need at least 6"), std::string::npos)
        << e.what();
  }
}

TEST(SingleHitBinary, CollapsesNonSingleClasses) {
  FewShotReport r;
  r.classes = {"single_hit", "multi_hit", "non_sample_hit"};
  r.queries = {{0, 0, 0, 0, 0, false}, {0, 1, 0, 1, 2, false}, {0, 2, 0, 2, 0, false}, {0, 3, 0, 0, 1, false}};
  const ConfusionMatrix cm = single_hit_binary(r);
  EXPECT_EQ(cm.counts, (std::vector<std::vector<std::size_t>>{{1, 1}, {1, 1}}));
}

TEST(Spearman, KnownValues) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> up{2, 4, 8, 16, 32}, down{5, 4, 3, 2, 1}, flat{1, 1, 1, 1, 1};
  EXPECT_NEAR(spearman(x, up), 1.0, 1e-12);
  EXPECT_NEAR(spearman(x, down), -1.0, 1e-12);
  EXPECT_EQ(spearman(x, flat), 0.0);
  // Ranks {1, 2.5, 2.5, 4}: rho = 0.9486832980505138 against 1..4.
  const std::vector<double> a{1, 2, 3, 4}, tied{10, 20, 20, 30};
  EXPECT_NEAR(spearman(a, tied), 3.0 / std::sqrt(10.0), 1e-12);
  EXPECT_EQ(ranks(tied), (std::vector<double>{1, 2.5, 2.5, 4}));
  EXPECT_THROW(spearman(std::vector<double>{1}, std::vector<double>{1}), std::invalid_argument);
}

TEST(VisibleRegion, QuarterKeepsTopLeftQuadrant) {
  std::vector<float> f(64, 1.0f);
  std::vector<std::uint8_t> m(64, 1);
  apply_visible_region(f, m, 8, 0.25);
  std::size_t kept = 0;
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      const bool in = y < 4 && x < 4;
      EXPECT_EQ(m[y * 8 + x], in ? 1 : 0);
      EXPECT_EQ(f[y * 8 + x], in ? 1.0f : 0.0f);
      kept += in;
    }
  EXPECT_EQ(kept, 16u);
  EXPECT_THROW(apply_visible_region(f, m, 8, 0.0), std::invalid_argument);
  const Dataset ds = toy_dataset(1, {HitLabel::single_hit}, 2, 8);
  EXPECT_EQ(with_visible_region(ds, 1.0), ds);
}

TEST(FluenceFactors, HalfDecadeGrid) {
  const auto f = default_fluence_factors();
  ASSERT_EQ(f.size(), 9u);
  EXPECT_DOUBLE_EQ(f.front(), 0.01);
  EXPECT_DOUBLE_EQ(f[4], 1.0);
  EXPECT_DOUBLE_EQ(f.back(), 100.0);
  EXPECT_NEAR(f[1], 0.031622776601683794, 1e-15);
}
