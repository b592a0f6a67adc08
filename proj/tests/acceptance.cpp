// Copyright 2026 The cftransfer Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "als_oracles.hpp"
#include "cftransfer/audio/mel.hpp"
#include "cftransfer/cf/als.hpp"
#include "cftransfer/core/config.hpp"
#include "cftransfer/nn/layers.hpp"
#include "cftransfer/nn/losses.hpp"
#include "cftransfer/nn/network.hpp"
#include "cftransfer/transfer/distill.hpp"
#include "cftransfer/transfer/task.hpp"
#include "cftransfer/workbench/experiment.hpp"
#include "cftransfer/workbench/results.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

namespace cftransfer {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string Fmt(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

double Seconds(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

fs::path Scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cftransfer_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const fs::path kConfigs = fs::path(CFTRANSFER_SOURCE_DIR) / "configs";

// ---- 1: ALS ------------------------------------------------------------------

Verdict AlsCorrectness() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2026);
  std::uniform_int_distribution<std::size_t> dim(2, 50);
  std::uniform_real_distribution<double> density(0.05, 0.4);
  std::uniform_int_distribution<int> factors(1, 8);
  double worst_rise = 0.0, worst_solve = 0.0;
  std::size_t sweeps = 0;
  for (int instance = 0; instance < 30; ++instance) {
    const std::size_t users = dim(rng), items = dim(rng);
    const auto m = testing::RandomMatrix(users, items, density(rng), rng());
    cf::AlsConfig cfg;
    cfg.n_factors = factors(rng);
    cfg.alpha = 1.0 + 39.0 * std::uniform_real_distribution<double>()(rng);
    cfg.reg_lambda = 0.01 + std::uniform_real_distribution<double>()(rng);
    cfg.scale_reg_by_count = instance % 2 == 0;
    cfg.n_iterations = 8;
    cfg.seed = static_cast<std::uint64_t>(instance);

    double prev = cf::WeightedLoss(m, cf::InitialEmbedding(m, cfg), cfg);
    cf::AlsFit(m, cfg, [&](int, const cf::CfEmbedding& emb) {
      const double loss = cf::WeightedLoss(m, emb, cfg);
      worst_rise = std::max(worst_rise, (loss - prev) / std::abs(prev));
      prev = loss;
      ++sweeps;
    });

    const auto fixed_items = testing::RandomFactors(items, cfg.n_factors, rng());
    const auto fixed_users = testing::RandomFactors(users, cfg.n_factors, rng());
    const auto user_sol = cf::AlsSolveSide(fixed_items, m, cfg, cf::Side::kUser);
    const auto item_sol = cf::AlsSolveSide(fixed_users, m, cfg, cf::Side::kItem);
    for (std::size_t u = 0; u < users; ++u) {
      const auto ref = testing::DenseRowSolve(fixed_items, m, cfg, cf::Side::kUser, u);
      for (int f = 0; f < cfg.n_factors; ++f)
        worst_solve = std::max(worst_solve, std::abs(user_sol(static_cast<Eigen::Index>(u), f) - ref[f]));
    }
    for (std::size_t i = 0; i < items; ++i) {
      const auto ref = testing::DenseRowSolve(fixed_users, m, cfg, cf::Side::kItem, i);
      for (int f = 0; f < cfg.n_factors; ++f)
        worst_solve = std::max(worst_solve, std::abs(item_sol(static_cast<Eigen::Index>(i), f) - ref[f]));
    }
  }
  const double secs = Seconds(start);
  const bool pass = worst_rise <= 1e-9 && worst_solve <= 1e-10 && secs < 30.0;
  return {pass, "30 instances, " + std::to_string(sweeps) + " sweeps, worst relative rise " +
                    Fmt("%.3g", worst_rise) + ", worst solve diff " + Fmt("%.3g", worst_solve) + ", " +
                    Fmt("%.1f", secs) + " s"};
}

// ---- 2: gradients ------------------------------------------------------------

Verdict GradientSuite() {
  const auto start = Clock::now();
  constexpr int kSeeds = 10;
  constexpr double kLayerTol = 1e-4, kLossTol = 1e-6;
  using testing::CheckLayer;
  using testing::RandomTensor;
  std::vector<std::pair<std::string, double>> worst;
  auto record = [&](const std::string& name, double err) {
    auto it = std::find_if(worst.begin(), worst.end(), [&](const auto& w) { return w.first == name; });
    if (it == worst.end()) it = worst.insert(worst.end(), {name, 0.0});
    it->second = std::max(it->second, err);
  };

  for (int seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) + 500);

    nn::Conv2d conv(3, 4);
    conv.Initialize(rng);
    record("conv2d", CheckLayer(conv, RandomTensor({2, 4, 5, 3}, rng), nn::Mode::kTrain, rng).Worst());

    nn::BatchNorm bn(3);
    for (double& g : bn.gamma().value.values()) g = 0.5 + std::uniform_real_distribution<double>()(rng);
    for (double& b : bn.beta().value.values()) b = std::normal_distribution<double>()(rng);
    const nn::Tensor bx = RandomTensor({3, 2, 3, 3}, rng);
    record("batchnorm", CheckLayer(bn, bx, nn::Mode::kTrain, rng).Worst());
    record("batchnorm", CheckLayer(bn, bx, nn::Mode::kEval, rng).Worst());

    // Distinct values spaced far beyond the probe step keep the argmax fixed.
    nn::MaxPool pool(2, 3);
    nn::Tensor px({2, 4, 6, 2});
    std::vector<double> vals(px.size());
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.01 * static_cast<double>(i);
    std::shuffle(vals.begin(), vals.end(), rng);
    px.storage() = vals;
    record("maxpool", CheckLayer(pool, px, nn::Mode::kTrain, rng).Worst());

    nn::SeBlock se(8, 4);
    se.Initialize(rng);
    record("se_block", CheckLayer(se, RandomTensor({2, 3, 2, 8}, rng), nn::Mode::kTrain, rng).Worst());

    nn::GlobalAvgPool gap;
    record("gap", CheckLayer(gap, RandomTensor({2, 3, 4, 5}, rng), nn::Mode::kTrain, rng).Worst());

    nn::FullyConnected fc(6, 4);
    fc.Initialize(rng);
    record("fc", CheckLayer(fc, RandomTensor({3, 6}, rng), nn::Mode::kTrain, rng).Worst());

    const auto p = RandomTensor({40}, rng).storage();
    const auto t = RandomTensor({40}, rng).storage();
    record("loss_mse", testing::CheckLossGradient(
                           [&](const std::vector<double>& x) { return nn::MseLoss(x, t).value; },
                           nn::MseLoss(p, t).grad, p));
    record("loss_cosine", testing::CheckLossGradient(
                              [&](const std::vector<double>& x) { return nn::CosineProximityLoss(x, t).value; },
                              nn::CosineProximityLoss(p, t).grad, p));
    record("loss_distill", testing::CheckLossGradient(
                               [&](const std::vector<double>& x) { return transfer::DistillationLoss(x, t).value; },
                               transfer::DistillationLoss(p, t).grad, p));
    const auto z = RandomTensor({6}, rng, 2.0).storage();
    const std::size_t label = static_cast<std::size_t>(seed) % 6;
    record("loss_cross_entropy",
           testing::CheckLossGradient(
               [&](const std::vector<double>& x) { return nn::SoftmaxCrossEntropy(x, label).value; },
               nn::SoftmaxCrossEntropy(z, label).grad, z));
  }
  const double secs = Seconds(start);
  bool pass = secs < 120.0;
  std::string detail = std::to_string(kSeeds) + " seeds each:";
  for (const auto& [name, err] : worst) {
    const double tol = name.rfind("loss_", 0) == 0 ? kLossTol : kLayerTol;
    pass = pass && err < tol;
    detail += " " + name + "=" + Fmt("%.2g", err);
  }
  return {pass, detail + ", " + Fmt("%.1f", secs) + " s"};
}

// ---- 3: architecture trace -------------------------------------------------

Verdict ArchitectureTrace() {
  const auto start = Clock::now();
  const std::size_t f = 8;
  auto model = nn::NetworkModel::Build(nn::ArchitecturePreset("cf_estimator_table1", f), 0);
  std::mt19937_64 rng(3);
  const nn::Tensor x = testing::RandomTensor({1, 96, 1280, 1}, rng);
  const auto trace = nn::PoolingShapeTrace(model, x);
  const std::vector<nn::Shape> expected = {{24, 256, f}, {8, 64, f}, {4, 16, f}, {2, 4, f}, {f}, {40}};
  std::string got;
  for (const auto& s : trace) {
    got += "(";
    for (std::size_t i = 0; i < s.size(); ++i) got += (i ? "," : "") + std::to_string(s[i]);
    got += ")";
  }
  const double secs = Seconds(start);
  return {trace == expected && secs < 60.0, "F=8 trace " + got + ", " + Fmt("%.1f", secs) + " s"};
}

// ---- 4: features ------------------------------------------------------------

Verdict FeatureFidelity() {
  audio::FeatureConfig cfg;
  cfg.n_fft = 512;
  cfg.hop = 375;
  cfg.n_mels = 96;
  audio::Waveform wave;
  wave.samples.resize(480000);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01(0.0, 0.1);
  for (double& s : wave.samples) s = n01(rng);
  const auto mel = audio::Melspectrogram(wave, cfg);

  const std::size_t t = 640;
  const Grid power = audio::StftPower(wave, cfg);
  auto frame = audio::FrameSamples(wave, cfg, t);
  const auto window = audio::HannWindow(cfg.n_fft);
  for (std::size_t m = 0; m < frame.size(); ++m) frame[m] *= window[m];
  const auto ref = testing::DftPower(frame);
  double peak = 0.0, diff = 0.0;
  for (std::size_t k = 0; k < ref.size(); ++k) {
    peak = std::max(peak, std::abs(ref[k]));
    diff = std::max(diff, std::abs(power(k, t) - ref[k]));
  }
  const double rel = diff / peak;
  const bool pass = mel.n_mels() == 96 && mel.n_frames() == 1280 && rel < 1e-8;
  return {pass, "grid " + std::to_string(mel.n_mels()) + "x" + std::to_string(mel.n_frames()) + ", frame " +
                    std::to_string(t) + " max |fft - dft| / peak " + Fmt("%.2g", rel)};
}

// ---- 5: regime contracts -----------------------------------------------------

nn::ArchitectureSpec TinyArch() {
  nn::ArchitectureSpec spec;
  spec.name = "tiny";
  spec.input_height = 4;
  spec.input_width = 8;
  spec.channels = 4;
  spec.se_ratio = 2;
  spec.pools = {{2, 2}, {2, 2}};
  spec.output_dim = 5;
  return spec;
}

std::vector<nn::Tensor> BodyState(nn::NetworkModel m) {
  std::vector<nn::Tensor> out;
  for (auto& [name, t] : m.net.NamedState()) out.push_back(*t);
  return out;
}

std::vector<nn::Tensor> FullState(const transfer::TaskModel& m) {
  transfer::TaskModel copy = m;
  std::vector<nn::Tensor> out = BodyState(copy.body);
  for (auto& [name, t] : copy.head.NamedState()) out.push_back(*t);
  return out;
}

Verdict RegimeContracts() {
  using transfer::Regime;
  const transfer::TaskSpec spec{"toy", transfer::TaskKind::kClassification, 3};
  transfer::TaskData data;
  data.features = transfer::FeatureSet{{4, 8, 1}, {}};
  transfer::Split split;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n01;
  for (std::size_t i = 0; i < 36; ++i) {
    std::vector<double> s(32);
    for (double& x : s) x = n01(rng);
    s[0] += 2.0 * static_cast<double>(i % 3);
    data.features.samples.push_back(s);
    data.labels.push_back(i % 3);
    (i < 24 ? split.train : i < 30 ? split.validation : split.test).push_back(i);
  }
  const nn::NetworkModel estimator = nn::NetworkModel::Build(TinyArch(), 99);
  auto config = [](Regime r, double w) {
    transfer::TrainConfig c;
    c.epochs = 4;
    c.batch_size = 5;
    c.seed = 11;
    c.adam.learning_rate = 1e-2;
    return transfer::RegimeConfig{r, w, c};
  };

  std::vector<std::vector<nn::Tensor>> base_log, kd_log;
  const auto base = transfer::TrainTask(spec, data, split, config(Regime::kBase, 1.0), TinyArch(), nullptr,
                                        [&](const auto&, const auto& m) { base_log.push_back(FullState(m)); });
  const auto kd0 = transfer::TrainTask(spec, data, split, config(Regime::kKd, 0.0), TinyArch(), &estimator,
                                       [&](const auto&, const auto& m) { kd_log.push_back(FullState(m)); });
  bool kd_equal = base_log == kd_log && FullState(base.model) == FullState(kd0.model) &&
                  base.result.metric == kd0.result.metric;
  for (std::size_t e = 0; kd_equal && e < base.result.curve.size(); ++e)
    kd_equal = base.result.curve[e].train_loss == kd0.result.curve[e].train_loss &&
               base.result.curve[e].val_loss == kd0.result.curve[e].val_loss;

  const auto teacher = BodyState(estimator);
  bool fix_frozen = true;
  const auto fix = transfer::TrainTask(spec, data, split, config(Regime::kFix, 1.0), TinyArch(), &estimator,
                                       [&](const auto&, const auto& m) {
                                         fix_frozen = fix_frozen && BodyState(m.body) == teacher;
                                       });
  fix_frozen = fix_frozen && BodyState(fix.model.body) == teacher;

  std::vector<std::vector<nn::Tensor>> init_bodies;
  transfer::TrainTask(spec, data, split, config(Regime::kInit, 1.0), TinyArch(), &estimator,
                      [&](const auto&, const auto& m) { init_bodies.push_back(BodyState(m.body)); });
  const bool init_start = !init_bodies.empty() && init_bodies.front() == teacher;

  const bool pass = kd_equal && fix_frozen && init_start && BodyState(estimator) == teacher;
  return {pass, std::string("kd(w=0)==base ") + (kd_equal ? "yes" : "no") + ", fix body untouched " +
                    (fix_frozen ? "yes" : "no") + ", init starts at estimator " + (init_start ? "yes" : "no")};
}

// ---- 6: desk-scale replication ---------------------------------------------

Verdict DeskReplication() {
  const auto start = Clock::now();
  auto m = workbench::LoadManifest(kConfigs / "default_manifest.json");
  m.output_dir = Scratch("default");
  const auto run = workbench::RunExperiment(m);
  const double secs = Seconds(start);
  const auto [kd, base] = workbench::PairedMetrics(run.rows, "kd", "base");
  std::set<std::uint64_t> seeds;
  for (const auto& r : run.rows) seeds.insert(r.seed);
  double mean_kd = 0.0, mean_base = 0.0;
  for (double v : kd) mean_kd += v / static_cast<double>(kd.size());
  for (double v : base) mean_base += v / static_cast<double>(base.size());
  const auto test = transfer::PairedImprovementTest(kd, base);
  std::printf("%s", workbench::EvaluateSummary(run.rows).c_str());
  const bool pass = seeds.size() >= 5 && mean_kd - mean_base > 0.0 && std::isfinite(test.t_statistic) &&
                    secs < 1800.0;
  return {pass, std::to_string(seeds.size()) + " seeds, mean kd " + Fmt("%.4f", mean_kd) + " - base " +
                    Fmt("%.4f", mean_base) + " = " + Fmt("%+.4f", mean_kd - mean_base) + ", paired t " +
                    Fmt("%.3f", test.t_statistic) + " p " + Fmt("%.3g", test.p_value) + ", " +
                    Fmt("%.0f", secs) + " s"};
}

// ---- 7: control world ------------------------------------------------------

Verdict ControlWorld() {
  auto m = workbench::LoadManifest(kConfigs / "control_manifest.json");
  m.output_dir = Scratch("control");
  const auto run = workbench::RunExperiment(m);
  // Every fold is a test fold once, so each task item is predicted exactly
  // once per seed; pool the correct counts into one binomial sample.
  double correct = 0.0, n = 0.0;
  for (const auto& r : run.rows) {
    if (r.regime != "fix" || r.seed != m.seeds.front()) continue;
    const auto split = workbench::MakeSplit(run.data.task.labels, m.kfold, r.fold, r.seed,
                                            m.task_validation_fraction);
    const auto size = static_cast<double>(split.test.size());
    correct += std::round(r.metric * size);
    n += size;
  }
  const double chance = 1.0 / static_cast<double>(run.data.dataset.n_classes);
  const double accuracy = correct / n;
  const double sigma = std::sqrt(chance * (1.0 - chance) / n);
  const double z = (accuracy - chance) / sigma;
  const bool covered = n == static_cast<double>(run.data.task.labels.size());
  return {covered && std::abs(z) <= 3.0, "fix accuracy " + Fmt("%.4f", accuracy) + " over " + Fmt("%.0f", n) +
                                             " items, chance " + Fmt("%.4f", chance) + ", z " + Fmt("%+.2f", z)};
}

// ---- 8: determinism ----------------------------------------------------------

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Verdict CliDeterminism() {
  const fs::path dir = Scratch("determinism");
  const fs::path out = dir / "run";
  WriteJsonFile(dir / "patch.json", nlohmann::json{{"output_dir", out.string()}});
  const std::string cmd = std::string(CFTRANSFER_CLI) + " run " + (kConfigs / "smoke_manifest.json").string() +
                          " --config " + (dir / "patch.json").string() + " -q > " + (dir / "log").string() +
                          " 2>&1";
  std::string first;
  for (int pass = 0; pass < 2; ++pass) {
    const int raw = std::system(cmd.c_str());
    if (!WIFEXITED(raw) || WEXITSTATUS(raw) != 0) return {false, "cli run failed: " + Slurp(dir / "log")};
    if (pass == 0) first = Slurp(out / "results.csv");
  }
  const std::string second = Slurp(out / "results.csv");
  const bool pass = !first.empty() && first == second;
  return {pass, "smoke results.csv " + std::to_string(first.size()) + " bytes, identical " + (pass ? "yes" : "no")};
}

}  // namespace
}  // namespace cftransfer

int main(int argc, char** argv) {
  using namespace cftransfer;
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"als correctness", AlsCorrectness},   {"gradient suite", GradientSuite},
      {"architecture trace", ArchitectureTrace}, {"feature fidelity", FeatureFidelity},
      {"regime contracts", RegimeContracts}, {"desk replication kd > base", DeskReplication},
      {"control world fix at chance", ControlWorld}, {"cli determinism", CliDeterminism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %d %s: %s\n", v.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), v.detail.c_str());
    std::fflush(stdout);
    failed += v.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
