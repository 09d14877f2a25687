#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "specklenn/checkpoint.hpp"
#include "specklenn/fewshot.hpp"
#include "support/fixtures.hpp"

using namespace specklenn;
using specklenn::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string output;
};

CliRun cli(const std::string& args) {
  const std::string cmd = std::string(SPECKLENN_CLI) + " " + args + " 2>&1";
  CliRun r{0, {}};
  FILE* p = popen(cmd.c_str(), "r");
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, p)) > 0;) r.output.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  return out;
}

}  // namespace

TEST(Cli, SimulateIsByteIdentical) {
  TempDir a("sima"), b("simb");
  const std::string args = " --samples 2 --per-category 3 --seed 7";
  ASSERT_EQ(cli("simulate --out " + (a.path / "d").string() + args + " --threads 1").code, 0);
  ASSERT_EQ(cli("simulate --out " + (b.path / "d").string() + args + " --threads 2").code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a.path / "d")) {
    EXPECT_EQ(slurp(e.path()), slurp(b.path / "d" / e.path().filename())) << e.path().filename();
    ++files;
  }
  EXPECT_GE(files, 2u);
}

TEST(Cli, ConfigFileSuppliesFlags) {
  TempDir a("cfg");
  std::ofstream(a.path / "sim.toml") << "samples = 1\nper_category = 2\nseed = 3\n";
  ASSERT_EQ(cli("simulate --config " + (a.path / "sim.toml").string() + " --out " + (a.path / "x").string()).code, 0);
  ASSERT_EQ(cli("simulate --samples 1 --per-category 2 --seed 3 --out " + (a.path / "y").string()).code, 0);
  EXPECT_EQ(slurp(a.path / "x" / "frames.f32"), slurp(a.path / "y" / "frames.f32"));
}

TEST(Cli, ErrorsNameFieldOrPath) {
  CliRun r = cli("simulate --out /tmp/never --per-category -1");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("--per-category"), std::string::npos) << r.output;
  r = cli("classify --model /nonexistent/model --support /x --input /y");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("/nonexistent/model"), std::string::npos) << r.output;
  r = cli("evaluate --model /m --protocol sideways");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("--protocol"), std::string::npos) << r.output;
  EXPECT_NE(cli("frobnicate").code, 0);
}

TEST(Cli, ClassifyMatchesLibrary) {
  TempDir dir("cls");
  const fs::path model = dir.path / "model", sup = dir.path / "sup", in = dir.path / "in";
  EmbeddingNetConfig c;
  c.backbone.conv1_out_channels = 2;
  c.backbone.conv2_out_channels = 2;
  c.fc_hidden = 8;
  c.embedding_dim = 4;
  auto net = EmbeddingNet<float>::build(c, 4);
  save_embedding_net(net, model);
  ASSERT_EQ(cli("simulate --samples 1 --per-category 4 --seed 1 --out " + sup.string()).code, 0);
  ASSERT_EQ(cli("simulate --samples 1 --first-sample 9 --per-category 3 --seed 2 --out " + in.string()).code, 0);
  const CliRun r = cli("classify --model " + model.string() + " --support " + sup.string() + " --input " + in.string() +
                    " --shots 3 --out " + (dir.path / "out.csv").string());
  ASSERT_EQ(r.code, 0) << r.output;

  const Dataset sd = read_dataset(sup), id = read_dataset(in);
  std::map<HitLabel, std::size_t> taken;
  std::vector<std::size_t> idx;
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < sd.size(); ++i)
    if (taken[sd.record(i).label]++ < 3) {
      idx.push_back(i);
      labels.emplace_back(to_string(sd.record(i).label));
    }
  const SupportSet support = build_support_set(net, sd.frames(idx), labels);
  const auto lines = split(slurp(dir.path / "out.csv"), '\n');
  ASSERT_EQ(lines.size(), id.size() + 1);
  EXPECT_EQ(lines[0].rfind("id,predicted_label,tie,d_", 0), 0u);
  for (std::size_t i = 0; i < id.size(); ++i) {
    Tensor<float> img(Shape{id.frame_size(), id.frame_size()});
    std::copy(id.frame(i).begin(), id.frame(i).end(), img.data());
    const ClassificationResult res = classify_pattern(net, img, support);
    const auto cols = split(lines[i + 1], ',');
    ASSERT_EQ(cols.size(), 3 + res.mean_distance.size());
    EXPECT_EQ(cols[0], id.record(i).id);
    EXPECT_EQ(cols[1], res.predicted_label);
    for (std::size_t k = 0; k < res.mean_distance.size(); ++k) EXPECT_EQ(parse_double(cols[3 + k]), res.mean_distance[k]);
  }
}

TEST(Cli, TrainThenEvaluateWritesReport) {
  TempDir dir("pipe");
  const fs::path data = dir.path / "data", out = dir.path / "run";
  ASSERT_EQ(cli("simulate --samples 1 --per-category 8 --seed 5 --out " + data.string()).code, 0);
  CliRun r = cli("train-offline --data " + data.string() + " --out " + out.string() +
              " --epochs 1 --batch-size 16 --triplets 16 --budget 0");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_TRUE(fs::exists(out / "model" / kCheckpointManifest));
  EXPECT_TRUE(fs::exists(out / "splits"));
  EXPECT_TRUE(fs::exists(out / "training.json"));
  const fs::path report = dir.path / "report.json";
  r = cli("evaluate --protocol fewshot --model " + (out / "model").string() + " --data " + data.string() +
          " --shots 2 --episodes 2 --out " + report.string());
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = nlohmann::json::parse(slurp(report));
  const double acc = j["accuracy_mean"];
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
  EXPECT_EQ(j["shots"], 2);
}
