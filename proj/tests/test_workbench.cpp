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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "cftransfer/audio/fft.hpp"
#include "cftransfer/cf/als.hpp"
#include "cftransfer/workbench/cca.hpp"
#include "cftransfer/workbench/dataset.hpp"
#include "cftransfer/workbench/experiment.hpp"
#include "cftransfer/workbench/manifest.hpp"
#include "cftransfer/workbench/results.hpp"
#include "cftransfer/workbench/world.hpp"

namespace cftransfer::workbench {
namespace {

namespace fs = std::filesystem;

const fs::path kConfigs = fs::path(CFTRANSFER_SOURCE_DIR) / "configs";

fs::path TempDir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cftransfer_wb_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

WorldConfig SmallWorld() {
  WorldConfig c;
  c.n_users = 30;
  c.n_items = 40;
  c.n_task_items = 40;
  c.seconds = 0.1;
  c.seed = 5;
  return c;
}

// ---- world -----------------------------------------------------------------

TEST(World, IdenticalLatentsGiveIdenticalBandProfiles) {
  WorldConfig c = SmallWorld();
  c.noise_level = 0.0;
  const World w = GenerateWorld(c);
  const Eigen::VectorXd z = w.item_latents.row(0).transpose();
  EXPECT_EQ(BandEnergies(c, w.encoder, z), BandEnergies(c, w.encoder, z));
  // Same seed and latent: the waveform itself repeats exactly.
  const auto e = BandEnergies(c, w.encoder, z);
  EXPECT_EQ(SynthesizeItemAudio(c, e, 9).samples, SynthesizeItemAudio(c, e, 9).samples);
}

TEST(World, SynthesizedAudioCarriesBandEnergies) {
  WorldConfig c;
  c.noise_level = 0.0;
  c.seconds = 2.0;
  const std::vector<double> energies{0.2, 3.0, 1.0, 0.5, 2.0, 0.1, 1.5, 0.8};
  const auto wave = SynthesizeItemAudio(c, energies, 1);
  const std::size_t n = 16384;
  const auto power = audio::RealPowerSpectrum(std::span<const double>(wave.samples.data(), n));
  const auto edges = BandEdges(c);
  std::vector<double> measured(c.n_bands, 0.0), bins(c.n_bands, 0.0);
  for (std::size_t k = 1; k < power.size(); ++k) {
    const double f = static_cast<double>(k) * c.sample_rate / static_cast<double>(n);
    for (std::size_t b = 0; b < c.n_bands; ++b) {
      // Skip bins next to an edge, where leakage mixes bands.
      if (f > edges[b] + 10.0 && f < edges[b + 1] - 10.0) {
        measured[b] += power[k];
        bins[b] += 1.0;
      }
    }
  }
  for (std::size_t b = 0; b < c.n_bands; ++b) measured[b] /= bins[b];
  for (std::size_t b = 1; b < c.n_bands; ++b) {
    const double ratio = (measured[b] / measured[0]) / (energies[b] / energies[0]);
    EXPECT_NEAR(std::log(ratio), 0.0, 0.35) << "band " << b;
  }
}

TEST(World, InfiniteAffinityScaleThresholdsInnerProducts) {
  WorldConfig c = SmallWorld();
  c.affinity_scale = 1e9;
  c.affinity_bias = 0.0;
  const World w = GenerateWorld(c);
  std::map<std::pair<std::string, std::string>, int> counts;
  for (const auto& log : w.dataset.logs) counts[{log.user_id, log.item_id}] = log.count;
  for (std::size_t u = 0; u < c.n_users; ++u) {
    for (std::size_t i = 0; i < c.n_items; ++i) {
      const double dot = w.user_latents.row(static_cast<Eigen::Index>(u)).dot(w.item_latents.row(static_cast<Eigen::Index>(i)));
      char user[16];
      std::snprintf(user, sizeof(user), "user%04zu", u);
      const auto it = counts.find({user, w.item_ids[i]});
      if (dot > 1e-6) {
        ASSERT_NE(it, counts.end());
        EXPECT_EQ(it->second, 1 + c.max_extra_plays);
      } else if (dot < -1e-6) {
        EXPECT_EQ(it, counts.end());
      }
    }
  }
}

TEST(World, LogsSatisfyInvariants) {
  const World w = GenerateWorld(SmallWorld());
  std::set<std::string> items;
  for (const auto& log : w.dataset.logs) {
    EXPECT_GE(log.count, 1);
    items.insert(log.item_id);
  }
  EXPECT_EQ(items.size(), w.item_ids.size());
  EXPECT_TRUE(LabelsBalanced(w.dataset.task_items, 4));
}

TEST(World, LabelsNearUniformOverThousandItems) {
  WorldConfig c = SmallWorld();
  c.n_task_items = 1000;
  c.seconds = 0.02;
  const World w = GenerateWorld(c);
  std::vector<int> hist(4, 0);
  for (const auto& it : w.dataset.task_items) ++hist[it.label];
  for (int h : hist) EXPECT_NEAR(h / 1000.0, 0.25, 0.10);
}

TEST(World, OracleReadingLatentsIsPerfect) {
  const World w = GenerateWorld(SmallWorld());
  for (std::size_t i = 0; i < w.dataset.task_items.size(); ++i)
    EXPECT_EQ(ArgmaxLabel(w.projection, w.task_latents.row(static_cast<Eigen::Index>(i)).transpose()),
              w.dataset.task_items[i].label);
}

TEST(World, RandomLabelRuleIgnoresLatents) {
  WorldConfig c = SmallWorld();
  c.n_task_items = 800;
  c.seconds = 0.02;
  c.label_rule = "random";
  const World w = GenerateWorld(c);
  int agree = 0;
  for (std::size_t i = 0; i < w.dataset.task_items.size(); ++i)
    agree += ArgmaxLabel(w.projection, w.task_latents.row(static_cast<Eigen::Index>(i)).transpose()) ==
             w.dataset.task_items[i].label;
  const double sigma = std::sqrt(0.25 * 0.75 / 800.0);
  EXPECT_NEAR(agree / 800.0, 0.25, 3.0 * sigma);
}

TEST(World, DeterministicGivenSeed) {
  const World a = GenerateWorld(SmallWorld()), b = GenerateWorld(SmallWorld());
  ASSERT_EQ(a.dataset.logs.size(), b.dataset.logs.size());
  for (std::size_t i = 0; i < a.dataset.logs.size(); ++i) {
    EXPECT_EQ(a.dataset.logs[i].user_id, b.dataset.logs[i].user_id);
    EXPECT_EQ(a.dataset.logs[i].count, b.dataset.logs[i].count);
  }
  for (std::size_t i = 0; i < a.dataset.audio.size(); ++i) EXPECT_EQ(a.dataset.audio[i].samples, b.dataset.audio[i].samples);
}

TEST(World, InfeasibleConfigRejected) {
  WorldConfig c = SmallWorld();
  c.affinity_bias = -1e9;
  c.max_resample = 3;
  EXPECT_THROW(GenerateWorld(c), Error);
  c = SmallWorld();
  c.band_high_hz = 9000.0;
  EXPECT_THROW(GenerateWorld(c), Error);
  EXPECT_THROW(WorldConfigFromJson({{"n_user", 3}}), Error);
}

// ---- canonical correlation -------------------------------------------------

TEST(Cca, RotationGivesUnitCorrelations) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01;
  Eigen::MatrixXd x(100, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n01(rng);
  const Eigen::MatrixXd r = Eigen::HouseholderQR<Eigen::MatrixXd>(Eigen::MatrixXd::Random(3, 3)).householderQ();
  const Eigen::MatrixXd y = (x * r * 2.0).rowwise() + Eigen::RowVector3d(1, 2, 3);
  const Eigen::VectorXd cc = CanonicalCorrelations(x, y);
  ASSERT_EQ(cc.size(), 3);
  for (Eigen::Index k = 0; k < 3; ++k) EXPECT_NEAR(cc(k), 1.0, 1e-10);
}

TEST(Cca, IndependentDataHasSmallCorrelations) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n01;
  Eigen::MatrixXd x(2000, 2), y(2000, 2);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    x.data()[i] = n01(rng);
    y.data()[i] = n01(rng);
  }
  const Eigen::VectorXd cc = CanonicalCorrelations(x, y);
  EXPECT_LT(cc.maxCoeff(), 0.1);
  EXPECT_GE(cc.minCoeff(), 0.0);
}

TEST(Cca, DefaultWorldEmbeddingsAlignWithLatents) {
  const RunManifest m = LoadManifest(kConfigs / "default_manifest.json");
  const World w = GenerateWorld(*m.world);
  const auto emb = cf::AlsFit(cf::BuildInteractionMatrix(w.dataset.logs), m.als);
  Eigen::MatrixXd learned(w.item_latents.rows(), emb.n_factors());
  for (Eigen::Index i = 0; i < learned.rows(); ++i)
    learned.row(i) = emb.ItemVector(w.item_ids[static_cast<std::size_t>(i)]).transpose();
  const Eigen::VectorXd cc = CanonicalCorrelations(learned, w.item_latents);
  EXPECT_GT(cc.mean(), 0.8) << cc.transpose();
}

// ---- persistence -----------------------------------------------------------

TEST(Persistence, DatasetRoundTrip) {
  const fs::path dir = TempDir("dataset");
  const World w = GenerateWorld(SmallWorld());
  SaveDataset(dir, w.dataset);
  const Dataset back = LoadDataset(DatasetPaths::Under(dir));
  ASSERT_EQ(back.logs.size(), w.dataset.logs.size());
  for (std::size_t i = 0; i < back.logs.size(); ++i) {
    EXPECT_EQ(back.logs[i].user_id, w.dataset.logs[i].user_id);
    EXPECT_EQ(back.logs[i].item_id, w.dataset.logs[i].item_id);
    EXPECT_EQ(back.logs[i].count, w.dataset.logs[i].count);
  }
  ASSERT_EQ(back.task_items.size(), w.dataset.task_items.size());
  for (std::size_t i = 0; i < back.task_items.size(); ++i) {
    EXPECT_EQ(back.task_items[i].id, w.dataset.task_items[i].id);
    EXPECT_EQ(back.task_items[i].label, w.dataset.task_items[i].label);
    EXPECT_EQ(back.task_items[i].target, w.dataset.task_items[i].target);
  }
  EXPECT_EQ(back.n_classes, 4u);
  ASSERT_EQ(back.audio.size(), w.dataset.audio.size());
  for (std::size_t i = 0; i < w.dataset.audio_ids.size(); ++i) {
    const auto& a = back.Audio(w.dataset.audio_ids[i]).samples;
    const auto& b = w.dataset.audio[i].samples;
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a[k], b[k], 1.0 / 32768.0);
  }
}

TEST(Persistence, LabelsRoundTripRandomInstances) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  const fs::path dir = TempDir("labels");
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<LabeledItem> items;
    const std::size_t width = rng() % 3;
    for (std::size_t i = 0; i < 1 + rng() % 20; ++i) {
      LabeledItem it{"i" + std::to_string(rng() % 1000), rng() % 7, {}};
      for (std::size_t k = 0; k < width; ++k) it.target.push_back(n01(rng) * 1e3);
      items.push_back(it);
    }
    WriteLabels(dir / "l.csv", items);
    const auto back = ReadLabels(dir / "l.csv");
    ASSERT_EQ(back.size(), items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
      EXPECT_EQ(back[i].id, items[i].id);
      EXPECT_EQ(back[i].label, items[i].label);
      EXPECT_EQ(back[i].target, items[i].target);
    }
  }
}

TEST(Persistence, ResultsRoundTrip) {
  const fs::path dir = TempDir("results");
  std::vector<ResultRow> rows{{"genre", "base", 8, 0, 1, 0.625, 30, 0.0}, {"mood", "kd", 16, 3, 0, 0.1, 12, 4.5}};
  WriteResultsCsv(dir / "r.csv", rows);
  const auto back = ReadResultsCsv(dir / "r.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].task, "mood");
  EXPECT_EQ(back[1].channels, 16u);
  EXPECT_EQ(back[1].seed, 3u);
  EXPECT_EQ(back[0].metric, 0.625);
  EXPECT_EQ(back[1].seconds, 4.5);
  std::ofstream(dir / "bad.csv") << "task,regime\n";
  EXPECT_THROW(ReadResultsCsv(dir / "bad.csv"), Error);
}

// ---- evaluation ------------------------------------------------------------

TEST(Evaluate, FourRowFixtureMeans) {
  const std::vector<ResultRow> rows{{"g", "base", 8, 0, 0, 0.50, 5, 0.0},
                                    {"g", "kd", 8, 0, 0, 0.75, 5, 0.0},
                                    {"g", "base", 8, 1, 0, 0.60, 5, 0.0},
                                    {"g", "kd", 8, 1, 0, 0.70, 5, 0.0}};
  const auto means = RegimeMeans(rows);
  ASSERT_EQ(means.size(), 2u);
  EXPECT_NEAR(means[0].mean, 0.55, 1e-15);
  EXPECT_NEAR(means[1].mean, 0.725, 1e-15);
  const std::string text = EvaluateSummary(rows);
  EXPECT_NE(text.find("regime=base n=2 metric=0.550000"), std::string::npos) << text;
  EXPECT_NE(text.find("regime=kd n=2 metric=0.725000"), std::string::npos) << text;
  // Differences 0.25 and 0.10: mean 0.175, sd 0.1061, t = 0.175 / (0.1061 / sqrt 2) = 2.3333.
  EXPECT_NE(text.find("ttest kd-base n=2 mean_diff=0.175000 t=2.3333 df=1"), std::string::npos) << text;
}

TEST(Evaluate, ZeroVarianceIsReportedNotFatal) {
  const std::vector<ResultRow> rows{{"g", "base", 8, 0, 0, 0.5, 5, 0.0},
                                    {"g", "kd", 8, 0, 0, 0.6, 5, 0.0},
                                    {"g", "base", 8, 1, 0, 0.4, 5, 0.0},
                                    {"g", "kd", 8, 1, 0, 0.5, 5, 0.0}};
  const std::string text = EvaluateSummary(rows);
  EXPECT_NE(text.find("unavailable"), std::string::npos) << text;
}

// ---- manifest --------------------------------------------------------------

TEST(Manifest, ShippedManifestsParseAndRoundTrip) {
  for (const char* name : {"default_manifest.json", "smoke_manifest.json", "control_manifest.json"}) {
    const RunManifest m = LoadManifest(kConfigs / name);
    const RunManifest again = ManifestFromJson(ToJson(m));
    EXPECT_EQ(ToJson(again), ToJson(m)) << name;
  }
}

TEST(Manifest, RejectsMalformedInput) {
  nlohmann::json j = ReadJsonFile(kConfigs / "smoke_manifest.json");
  auto broken = j;
  broken["regimez"] = {"base"};
  EXPECT_THROW(ManifestFromJson(broken), Error);
  broken = j;
  broken.erase("schema_version");
  EXPECT_THROW(ManifestFromJson(broken), Error);
  broken = j;
  broken["schema_version"] = 2;
  EXPECT_THROW(ManifestFromJson(broken), Error);
  broken = j;
  broken["regimes"] = {"distill"};
  EXPECT_THROW(ManifestFromJson(broken), Error);
  broken = j;
  broken["dataset"] = {{"logs", "/nonexistent/logs.tsv"}, {"audio_dir", "/nonexistent"}, {"labels", "/x.csv"}};
  EXPECT_THROW(ManifestFromJson(broken), Error);
  broken = j;
  broken["folds"] = {5};
  EXPECT_THROW(ManifestFromJson(broken), Error);
}

TEST(Experiment, SplitsPartitionTheItems) {
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 60; ++i) labels.push_back(i % 3);
  for (std::size_t fold = 0; fold < 5; ++fold) {
    const auto s = MakeSplit(labels, 5, fold, 11, 0.2);
    std::vector<int> seen(60, 0);
    for (auto* part : {&s.train, &s.validation, &s.test})
      for (std::size_t i : *part) ++seen[i];
    for (int c : seen) EXPECT_EQ(c, 1);
    EXPECT_EQ(s.test.size(), 12u);
    // 48 remaining items over round(1 / 0.2) = 5 inner folds.
    EXPECT_GE(s.validation.size(), 9u);
    EXPECT_LE(s.validation.size(), 10u);
  }
}

// ---- end to end ------------------------------------------------------------

RunManifest Smoke(const std::string& out) {
  RunManifest m = LoadManifest(kConfigs / "smoke_manifest.json");
  m.output_dir = TempDir(out);
  return m;
}

TEST(Experiment, RowCountAndArtifacts) {
  RunManifest m = Smoke("rows");
  m.regimes = {transfer::Regime::kBase, transfer::Regime::kKd};
  m.seeds = {0, 1, 2, 3, 4};
  m.folds = {0};
  const auto run = RunExperiment(m);
  EXPECT_EQ(run.rows.size(), 10u);
  EXPECT_EQ(ReadResultsCsv(m.output_dir / "results.csv").size(), 10u);
  const auto emb = cf::LoadItemVectors(m.output_dir / "embeddings" / "item_vectors.cftable");
  EXPECT_EQ(emb.n_factors(), 40);
  const auto arch = m.Architecture(4);
  const auto ckpt = nn::LoadCheckpoint(EstimatorCheckpoint(m.output_dir, 4), &arch);
  EXPECT_EQ(ckpt.spec, arch);
  EXPECT_TRUE(fs::exists(m.output_dir / "curves" / "genre_kd_F4_s3_f0.csv"));
  const auto folds = ReadJsonFile(m.output_dir / "folds.json");
  EXPECT_EQ(folds.at("cells").size(), 5u);
  const auto labels = ReadLabels(m.output_dir / "world" / "labels.csv");
  EXPECT_EQ(labels.size(), m.world->n_task_items);
  const auto manifest = LoadManifest(m.output_dir / "manifest.json");
  EXPECT_EQ(ToJson(manifest), ToJson(m));
  for (const auto& r : run.rows) EXPECT_EQ(r.seconds, 0.0);
}

TEST(Experiment, NormalizedTargetsHaveUnitNorm) {
  RunManifest m = Smoke("normalize");
  const auto raw = PrepareData(m, {});
  m.normalize_targets = true;
  const auto unit = PrepareData(m, {});
  ASSERT_EQ(raw.estimator_train.targets.size(), unit.estimator_train.targets.size());
  bool any_off_unit = false;
  for (std::size_t i = 0; i < unit.estimator_train.targets.size(); ++i) {
    const auto& u = unit.estimator_train.targets[i];
    const auto& r = raw.estimator_train.targets[i];
    double nu = 0.0, nr = 0.0, dot = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
      nu += u[k] * u[k];
      nr += r[k] * r[k];
      dot += u[k] * r[k];
    }
    EXPECT_NEAR(nu, 1.0, 1e-12);
    EXPECT_NEAR(dot, std::sqrt(nr), 1e-12 * std::max(1.0, std::sqrt(nr)));
    any_off_unit = any_off_unit || std::abs(nr - 1.0) > 1e-3;
  }
  EXPECT_TRUE(any_off_unit);
}

TEST(Experiment, IdenticalManifestGivesByteIdenticalResults) {
  RunManifest m = Smoke("det");
  RunExperiment(m);
  const std::string first = Slurp(m.output_dir / "results.csv");
  const std::string curves = Slurp(m.output_dir / "curves" / "genre_init_F4_s1_f1.csv");
  RunExperiment(m);
  EXPECT_EQ(Slurp(m.output_dir / "results.csv"), first);
  EXPECT_EQ(Slurp(m.output_dir / "curves" / "genre_init_F4_s1_f1.csv"), curves);
  EXPECT_EQ(std::count(first.begin(), first.end(), '\n'), 1 + 4 * 2 * 2);
}

TEST(Experiment, SplitStagesMatchSingleRun) {
  RunManifest m = Smoke("split");
  RunExperiment(m);
  const std::string whole = Slurp(m.output_dir / "results.csv");
  fs::remove(m.output_dir / "results.csv");
  RunOptions est;
  est.train_tasks = false;
  RunExperiment(m, est);
  RunOptions task;
  task.reuse_estimators = true;
  RunExperiment(m, task);
  EXPECT_EQ(Slurp(m.output_dir / "results.csv"), whole);
}

TEST(Experiment, FailureNamesStageAndKeepsArtifacts) {
  RunManifest m = Smoke("fail");
  m.architecture["input"] = {8, 32, 1};
  try {
    RunExperiment(m);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("stage estimator"), std::string::npos) << e.what();
  }
  EXPECT_TRUE(fs::exists(m.output_dir / "FAILED"));
  EXPECT_TRUE(fs::exists(m.output_dir / "embeddings" / "item_vectors.cftable"));
  RunOptions task;
  task.reuse_estimators = true;
  m.architecture["input"] = {8, 16, 1};
  EXPECT_THROW(RunExperiment(m, task), Error);
}

TEST(Experiment, RunsFromDatasetDirectory) {
  RunManifest m = Smoke("from_disk");
  const World w = GenerateWorld(*m.world);
  SaveDataset(m.output_dir / "data", w.dataset);
  m.world.reset();
  m.dataset = DatasetPaths::Under(m.output_dir / "data");
  m.regimes = {transfer::Regime::kBase};
  m.seeds = {0};
  const auto run = RunExperiment(m);
  EXPECT_EQ(run.rows.size(), 2u);
  EXPECT_EQ(run.data.canonical_correlations.size(), 0);
}

}  // namespace
}  // namespace cftransfer::workbench
