// Copyright 2026 The qatlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include "qatlab/commands.hpp"

using namespace qatlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("qatlab_test_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void put(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

std::string be32(std::uint32_t v) {
  return {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8), static_cast<char>(v)};
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(QATLAB_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

// Tiny synthetic setup shared by the subprocess tests.
std::string tiny(const fs::path& out) {
  return " --out " + out.string() +
         " --set dataset.train_size=192 --set dataset.val_size=64 --set dataset.image_size=9"
         " --set batch_size=32 --set epochs=1 --set n_sens_batches=2 --set calib_batches=1";
}

}  // namespace

TEST(Idx, ParsesImagesAndLabels) {
  const auto dir = scratch("idx");
  std::string img = be32(kIdxImagesMagic) + be32(4) + be32(28) + be32(28);
  for (int i = 0; i < 4 * 28 * 28; ++i) img.push_back(static_cast<char>(i % 256));
  put(dir / "img", img);
  put(dir / "lab", be32(kIdxLabelsMagic) + be32(4) + std::string{0, 7, 3, 9});
  const auto ds = load_idx(dir / "img", dir / "lab");
  EXPECT_EQ(ds.size(), 4u);
  EXPECT_EQ(ds.sample_shape(), (Shape{1, 28, 28}));
  EXPECT_EQ(ds.labels, (std::vector<int>{0, 7, 3, 9}));
  EXPECT_FLOAT_EQ(ds.pixels[255], 1.0f);
  EXPECT_FLOAT_EQ(ds.pixels[256], 0.0f);
}

TEST(Idx, BadMagicNamesTheOffset) {
  const auto dir = scratch("idx-bad");
  put(dir / "img", be32(0x0803 + 1) + be32(1) + be32(2) + be32(2) + std::string(4, '\0'));
  put(dir / "lab", be32(kIdxLabelsMagic) + be32(1) + std::string(1, '\0'));
  try {
    load_idx(dir / "img", dir / "lab");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset 0"), std::string::npos) << e.what();
  }
  put(dir / "img", be32(kIdxImagesMagic) + be32(2) + be32(2) + be32(2) + std::string(4, '\0'));
  try {
    load_idx(dir / "img", dir / "lab");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset 20"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_idx(dir / "missing", dir / "lab"), MissingArtifactError);
}

TEST(Csv, ParsesAndNamesBadLine) {
  const auto dir = scratch("csv");
  put(dir / "ok.csv", "3,0,255,0,0\n1,255,255,255,255\n");
  const auto ds = load_csv(dir / "ok.csv");
  EXPECT_EQ(ds.sample_shape(), (Shape{1, 2, 2}));
  EXPECT_EQ(ds.labels, (std::vector<int>{3, 1}));
  EXPECT_FLOAT_EQ(ds.pixels[1], 1.0f);
  put(dir / "bad.csv", "3,0,255,0,0\n1,2,3,4,5\n1,2,3\n");
  try {
    load_csv(dir / "bad.csv");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
  put(dir / "nan.csv", "1,2,x,4,5\n");
  EXPECT_THROW(load_csv(dir / "nan.csv"), FormatError);
}

TEST(Synthetic, DeterministicAndSplitsDiffer) {
  SyntheticOptions o;
  o.samples = 50;
  o.image_size = 9;
  const auto a = synthetic_blobs(o, 0), b = synthetic_blobs(o, 0), c = synthetic_blobs(o, 1);
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(a.pixels, c.pixels);
  for (float v : a.pixels) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  ScopedWarningSink quiet([](std::string_view) {});
  const auto dir = scratch("ck");
  SyntheticOptions o;
  o.samples = 64;
  o.image_size = 9;
  const auto train = synthetic_blobs(o);
  ExperimentConfig cfg;
  cfg.batch_size = 32;
  cfg.calib_batches = 1;
  cfg.n_sens_batches = 1;
  auto fp = init_fp_state(make_model_spec("cnn-small", 1, 9, 9, 10), cfg);
  auto q = qat_prepare(fp, cfg, train);
  run_training(q, train, train, 1);

  for (auto* s : {&fp, &q}) {
    const auto fpr = s->fingerprint();
    save_checkpoint(dir / "a", {*s, to_json(cfg), Json{{"val_acc", 1.5}}});
    const auto back = load_checkpoint(dir / "a");
    EXPECT_EQ(back.state.fingerprint(), fpr);
    save_checkpoint(dir / "b", back);
    EXPECT_EQ(read_file(dir / "a.bin"), read_file(dir / "b.bin"));
    auto ja = read_json_file(dir / "a.json"), jb = read_json_file(dir / "b.json");
    EXPECT_EQ(ja["blob"], "a.bin");
    ja.erase("blob");
    jb.erase("blob");
    EXPECT_EQ(ja, jb);
    EXPECT_EQ(evaluate(back.state, train).top1_accuracy, evaluate(*s, train).top1_accuracy);
  }
}

TEST(Checkpoint, RejectsCorruptArtifacts) {
  const auto dir = scratch("ck-bad");
  ExperimentConfig cfg;
  const auto fp = init_fp_state(make_model_spec("mlp-small", 1, 5, 5, 10), cfg);
  save_checkpoint(dir / "c", {fp, to_json(cfg), Json::object()});
  auto blob = read_file(dir / "c.bin");
  put(dir / "c.bin", blob.substr(0, blob.size() - 4));
  EXPECT_THROW(load_checkpoint(dir / "c"), FormatError);
  put(dir / "c.bin", blob);
  auto man = read_json_file(dir / "c.json");
  man["format_version"] = 99;
  put(dir / "c.json", man.dump());
  EXPECT_THROW(load_checkpoint(dir / "c"), FormatError);
  put(dir / "c.json", "{not json");
  EXPECT_THROW(load_checkpoint(dir / "c"), FormatError);
  EXPECT_THROW(load_checkpoint(dir / "nothing"), MissingArtifactError);
}

TEST(Config, UnknownKeysAndBadValuesRejected) {
  const auto dir = scratch("cfg");
  put(dir / "c.json", R"({"epochs": 3, "optimiser": "adam"})");
  EXPECT_THROW(resolve_config("", (dir / "c.json").string(), {}), ConfigError);
  put(dir / "d.json", R"({"epochs": 3, "dataset": {"image_size": 9}})");
  const auto c = resolve_config("", (dir / "d.json").string(), {"lr0=0.2"});
  EXPECT_EQ(c.epochs, 3u);
  EXPECT_EQ(c.dataset.image_size, 9u);
  EXPECT_EQ(c.lr0, 0.2);
  EXPECT_THROW(resolve_config("", "", {"b_avg=9"}), ConfigError);
  EXPECT_THROW(resolve_config("", "", {"epochs=\"many\""}), ConfigError);
  EXPECT_THROW(resolve_config("nope", "", {}), ConfigError);
  EXPECT_THROW(resolve_config("", "", {"noequals"}), ConfigError);
  EXPECT_THROW(resolve_config("", "", {"dataset.bogus=1"}), ConfigError);
  EXPECT_EQ(config_from_json(to_json(c)).lr0, 0.2);
}

TEST(Config, OverridesNestAndParseJson) {
  Json j = Json::object();
  apply_override(j, "a.b.c=3");
  apply_override(j, "s=hello");
  apply_override(j, "v=[2,4]");
  apply_override(j, "f=false");
  EXPECT_EQ(j["a"]["b"]["c"], 3);
  EXPECT_EQ(j["s"], "hello");
  EXPECT_EQ(j["v"], (Json{2, 4}));
  EXPECT_EQ(j["f"], false);
  EXPECT_THROW(apply_override(j, "s.x=1"), ConfigError);
}

TEST(Config, PresetsAreDistinct) {
  std::set<std::string> seen;
  for (const auto& [name, patch] : presets()) {
    const auto c = resolve_config(name, "", {});
    EXPECT_EQ(c.preset, name);
    auto j = to_json(c);
    j.erase("preset");
    EXPECT_TRUE(seen.insert(j.dump()).second) << name;
  }
  EXPECT_EQ(seen.size(), 6u);
  const auto d = resolve_config("tbl44-configD", "", {});
  EXPECT_EQ(d.precision, "fixed");
  EXPECT_EQ(d.fixed_bits, 3);
  EXPECT_FALSE(resolve_config("tbl44-configC", "", {}).codebook_learning);
}

TEST(Histogram, CountsAndSymmetry) {
  std::vector<float> zeros(37, 0.0f);
  const auto z = symmetric_histogram<float>(zeros);
  EXPECT_EQ(z.total(), 37u);
  std::size_t nonempty = 0;
  for (std::size_t b = 0; b < z.counts.size(); ++b)
    if (z.counts[b]) {
      ++nonempty;
      EXPECT_LE(z.left[b], 0.0);
      EXPECT_GE(z.right[b], 0.0);
    }
  EXPECT_EQ(nonempty, 1u);

  std::mt19937_64 rng(5);
  std::normal_distribution<float> nd;
  std::vector<float> v;
  for (int i = 0; i < 2000; ++i) {
    const float x = nd(rng);
    v.push_back(x);
    v.push_back(-x);
  }
  const auto h = symmetric_histogram<float>(v, 40);
  EXPECT_EQ(h.total(), v.size());
  for (std::size_t b = 0; b < 40; ++b) EXPECT_EQ(h.counts[b], h.counts[39 - b]) << b;
  EXPECT_DOUBLE_EQ(h.left.front(), -h.right.back());

  const std::vector<double> levels{-1.0, 0.0, 1.0};
  const auto csv = histogram_csv(h, levels);
  EXPECT_EQ(csv.rfind("bin_left,bin_right,count\n", 0), 0u);
  EXPECT_NE(csv.find("\n\nlevel_index,level\n0,-1\n1,0\n2,1\n"), std::string::npos);
}

TEST(ExitCodes, MapErrorKinds) {
  std::ostringstream sink;
  auto code = [&](auto e) { return exit_code_for(std::make_exception_ptr(e), sink); };
  EXPECT_EQ(code(ConfigError("x")), 2);
  EXPECT_EQ(code(ValidationError("x")), 2);
  EXPECT_EQ(code(DimensionError("x")), 2);
  EXPECT_EQ(code(MissingArtifactError("x")), 3);
  EXPECT_EQ(code(FormatError("x")), 3);
  EXPECT_EQ(code(NumericError("op", "x")), 4);
  EXPECT_EQ(code(std::runtime_error("x")), 1);
}

TEST(Cli, ExitCodesFromSubprocess) {
  const auto dir = scratch("exit");
  EXPECT_EQ(run_cli("pretrain --set nonsense=1 --out " + dir.string(), dir / "log"), 2);
  EXPECT_EQ(run_cli("frobnicate", dir / "log"), 2);
  EXPECT_EQ(run_cli("eval --set checkpoint=" + (dir / "absent").string() + " --out " + dir.string(), dir / "log"), 3);
  EXPECT_EQ(run_cli("pretrain --set lr0=10 --set momentum=0.99" + tiny(dir), dir / "log"), 4);
  std::ifstream log(dir / "log");
  const std::string text((std::istreambuf_iterator<char>(log)), {});
  EXPECT_NE(text.find("non-finite"), std::string::npos) << text;
}

TEST(Cli, AllocateFromSensitivityFile) {
  const auto dir = scratch("alloc");
  const double e = std::exp(1.0);
  SensitivityProfile p;
  p.scores = {e - 1.0, e - 1.0, e * e - 1.0};
  p.layers = {"a", "b", "c"};
  p.n_batches = 1;
  write_json_atomic(dir / "sens.json", to_json(p));
  ASSERT_EQ(run_cli("allocate --set b_avg=4 --set b_set=[2,3,4,5,6,7,8] --set sensitivity=" +
                        (dir / "sens.json").string() + " --out " + dir.string(),
                    dir / "log"),
            0);
  const auto a = assignment_from_json(read_json_file(dir / "assignment.json"));
  ASSERT_EQ(a.b_prime.size(), 3u);
  EXPECT_NEAR(a.b_prime[0], 3.0, 1e-12);
  EXPECT_NEAR(a.b_prime[1], 3.0, 1e-12);
  EXPECT_NEAR(a.b_prime[2], 6.0, 1e-12);
  EXPECT_EQ(a.bits, (std::vector<int>{3, 3, 6}));
}

TEST(Cli, PipelineArtifactsAndEvalReproducesTraining) {
  const auto dir = scratch("pipe");
  const auto fp = dir / "fp", q = dir / "q", ev = dir / "ev", hist = dir / "hist";
  ASSERT_EQ(run_cli("pretrain" + tiny(fp), dir / "log"), 0);
  for (const char* f : {"resolved_config.json", "metrics.csv", "checkpoint.json", "checkpoint.bin"})
    EXPECT_TRUE(fs::exists(fp / f)) << f;

  ASSERT_EQ(run_cli("train --preset tbl44-configD --set checkpoint=" + (fp / "checkpoint").string() + tiny(q), dir / "log"), 0);
  const auto man = read_json_file(q / "checkpoint.json");
  EXPECT_TRUE(man["quantized"].get<bool>());
  for (const auto& l : man["quant_layers"]) EXPECT_EQ(l["bits"], 3);
  EXPECT_DOUBLE_EQ(man["metrics"]["average_bits"].get<double>(), 3.0);

  ASSERT_EQ(run_cli("eval --set checkpoint=" + (q / "checkpoint.json").string() + tiny(ev), dir / "log"), 0);
  const auto r = read_json_file(ev / "eval.json");
  EXPECT_EQ(r["samples"], 64);
  EXPECT_DOUBLE_EQ(r["top1_accuracy"].get<double>(), man["metrics"]["val_acc"].get<double>());

  ASSERT_EQ(run_cli("export-hist --layer conv3 --what codebook --set checkpoint=" + (q / "checkpoint").string() +
                        " --out " + hist.string(),
                    dir / "log"),
            0);
  const auto csv = read_file(hist / "hist_conv3_codebook.csv");
  EXPECT_NE(csv.find("level_index,level\n0,"), std::string::npos);
  EXPECT_NE(csv.find("\n6,"), std::string::npos);
  EXPECT_EQ(run_cli("export-hist --layer conv9 --set checkpoint=" + (q / "checkpoint").string() + " --out " + hist.string(),
                    dir / "log"),
            3);
}
