#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "helpers.hpp"
#include "modrobe/checkpoint.hpp"
#include "modrobe/errors.hpp"
#include "modrobe/rng.hpp"
#include "modrobe/score_matrix.hpp"
#include "modrobe/sweep.hpp"

using namespace modrobe;
using testutil::TempDir;
using testutil::slurp;
using testutil::tiny_bundle;
using testutil::tiny_train;

namespace {

/// Relative paths of every regular file under root, sorted.
std::vector<std::string> file_list(const std::filesystem::path& root) {
  std::vector<std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file())
      out.push_back(e.path().lexically_relative(root).generic_string());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("sweep: serial and parallel schedules produce identical bytes") {
  DatasetBundle b = tiny_bundle();
  TrainConfig cfg = tiny_train();
  cfg.master_seed = 99;
  TempDir serial("sweep_serial"), parallel("sweep_parallel");

  SweepOutcome a = run_sweep(b, cfg, SweepPlan{}, serial.path(), "r1", 1);
  SweepOutcome c = run_sweep(b, cfg, SweepPlan{}, parallel.path(), "r1", 4);

  CHECK(a.all_ok());
  REQUIRE(a.jobs.size() == c.jobs.size());
  for (std::size_t i = 0; i < a.jobs.size(); ++i) {
    CHECK(a.jobs[i].method == c.jobs[i].method);
    CHECK(a.jobs[i].train_set == c.jobs[i].train_set);
    CHECK(a.jobs[i].status == c.jobs[i].status);
    CHECK(a.jobs[i].checkpoint == c.jobs[i].checkpoint);
  }
  CHECK(a.matrices == c.matrices);

  std::vector<std::string> files = file_list(serial.path());
  REQUIRE(files == file_list(parallel.path()));
  for (const std::string& f : files) {
    CAPTURE(f);
    CHECK(slurp(serial.path() / f) == slurp(parallel.path() / f));
  }
}

TEST_CASE("sweep: an empty plan runs everything everywhere") {
  DatasetBundle b = tiny_bundle();
  TrainConfig cfg = tiny_train();
  cfg.master_seed = 7;
  TempDir dir("sweep_full");
  SweepOutcome out = run_sweep(b, cfg, SweepPlan{}, dir.path(), "full", 2);

  // pretraining plus four methods for each of the three training sets
  REQUIRE(out.jobs.size() == 13);
  CHECK(out.jobs[0].method == "pretrain");
  CHECK(out.jobs[0].checkpoint == "pretrain/m0+m1/model.mmrl");
  CHECK(out.all_ok());

  std::vector<std::string> methods;
  for (const auto& [m, matrix] : out.matrices) {
    methods.push_back(m);
    CHECK(matrix.cells.size() == 9);
    CHECK(matrix.kind == ScoreKind::accuracy);
    for (const auto& [key, score] : matrix.cells) {
      CHECK(score >= 0.0);
      CHECK(score <= 1.0);
    }
  }
  CHECK(methods ==
        std::vector<std::string>{"finetune", "masd", "probe", "wiseft"});

  for (const char* m : {"probe", "finetune", "masd", "wiseft"}) {
    for (const char* mt : {"m0", "m1", "m0+m1"})
      CHECK(std::filesystem::exists(dir.path() / m / mt / "model.mmrl"));
    // what the file says matches what the run returned
    ScoreMatrix back =
        load_score_matrix(dir.path() / (std::string("scores_") + m + ".csv"),
                          ScoreKind::accuracy);
    const ScoreMatrix& ours = out.matrices.at(m);
    REQUIRE(back.cells.size() == ours.cells.size());
    for (const auto& [key, score] : ours.cells) {
      double stored = *back.get(key.first, key.second);
      CHECK(stored == doctest::Approx(score).epsilon(1e-6));
    }
  }

  auto manifest = nlohmann::json::parse(slurp(dir.path() / "manifest.json"));
  CHECK(manifest["run_id"] == "full");
  CHECK(manifest["status"] == "complete");
  CHECK(manifest["jobs"].size() == 13);
  CHECK(manifest["plan"]["methods"] ==
        nlohmann::json({"probe", "finetune", "masd", "wiseft"}));
  CHECK(manifest["train_config"]["master_seed"] == 7);
}

TEST_CASE("sweep: a restricted plan trains and writes less") {
  DatasetBundle b = tiny_bundle();
  TrainConfig cfg = tiny_train();
  TempDir dir("sweep_small");
  SweepPlan plan;
  plan.methods = {"masd", "probe"};
  plan.train_sets = {"m0"};
  plan.eval_sets = {"m0", "m0+m1"};
  SweepOutcome out = run_sweep(b, cfg, plan, dir.path(), "small", 1);

  REQUIRE(out.jobs.size() == 3);  // pretrain, probe, masd — canonical order
  CHECK(out.jobs[1].method == "probe");
  CHECK(out.jobs[2].method == "masd");
  CHECK(out.matrices.size() == 2);
  CHECK(out.matrices.at("probe").cells.size() == 2);
  CHECK(out.matrices.at("masd").cells.size() == 2);
  CHECK(std::filesystem::exists(dir.path() / "scores_probe.csv"));
  CHECK_FALSE(std::filesystem::exists(dir.path() / "scores_finetune.csv"));
  CHECK_FALSE(std::filesystem::exists(dir.path() / "finetune"));
  CHECK_FALSE(std::filesystem::exists(dir.path() / "wiseft"));
}

TEST_CASE("sweep: weight interpolation pulls in its parent silently") {
  DatasetBundle b = tiny_bundle();
  TrainConfig cfg = tiny_train();
  TempDir dir("sweep_wise");
  SweepPlan plan;
  plan.methods = {"wiseft"};
  plan.train_sets = {"m0"};
  SweepOutcome out = run_sweep(b, cfg, plan, dir.path(), "wise", 1);

  REQUIRE(out.jobs.size() == 2);
  CHECK(out.jobs[1].method == "wiseft");
  CHECK(out.all_ok());
  CHECK(out.matrices.size() == 1);
  CHECK(out.matrices.count("wiseft") == 1);
  // the distilled parent is trained as a dependency but never published
  CHECK(std::filesystem::exists(dir.path() / "wiseft" / "m0" / "model.mmrl"));
  CHECK_FALSE(std::filesystem::exists(dir.path() / "masd"));
  CHECK_FALSE(std::filesystem::exists(dir.path() / "scores_masd.csv"));
}

TEST_CASE("sweep: any job can be rebuilt in isolation from its seed") {
  DatasetBundle b = tiny_bundle();
  TrainConfig cfg = tiny_train();
  cfg.master_seed = 123;
  TempDir dir("sweep_repro");
  SweepPlan plan;
  plan.train_sets = {"m0"};
  run_sweep(b, cfg, plan, dir.path(), "repro", 1);

  ModelCheckpoint backbone =
      load_checkpoint(dir.path() / "pretrain" / "m0+m1" / "model.mmrl");
  CHECK(backbone.params ==
        pretrain(b, cfg, mix_seed(123, "pretrain/m0+m1")).params);

  ModalitySet m0 = ModalitySet::single(0);
  ModelCheckpoint probe =
      load_checkpoint(dir.path() / "probe" / "m0" / "model.mmrl");
  CHECK(probe.params ==
        linear_probe(backbone, b.train, m0, cfg, mix_seed(123, "probe/m0"))
            .params);
  ModelCheckpoint ft =
      load_checkpoint(dir.path() / "finetune" / "m0" / "model.mmrl");
  CHECK(ft.params == finetune(backbone, probe, b.train, m0, cfg,
                              mix_seed(123, "finetune/m0"))
                         .params);
}

TEST_CASE("sweep: downstream failures are recorded, not fatal") {
  DatasetBundle b = tiny_bundle();
  for (auto& x : b.train.examples) x.label.reset();  // nothing to probe on
  TrainConfig cfg = tiny_train();
  TempDir dir("sweep_fail");
  SweepPlan plan;
  plan.train_sets = {"m0", "m0+m1"};
  SweepOutcome out = run_sweep(b, cfg, plan, dir.path(), "fail", 2);

  CHECK_FALSE(out.all_ok());
  REQUIRE(out.jobs.size() == 9);
  CHECK(out.jobs[0].status == "ok");  // pretraining never reads labels
  for (std::size_t i = 1; i < out.jobs.size(); ++i) {
    const JobResult& j = out.jobs[i];
    CAPTURE(j.method);
    CHECK(j.status == "failed");
    CHECK_FALSE(j.error.empty());
    if (j.method != "probe")
      CHECK(j.error.find("probe dependency failed") == 0);
  }
  for (const auto& [m, matrix] : out.matrices) CHECK(matrix.cells.empty());

  auto manifest = nlohmann::json::parse(slurp(dir.path() / "manifest.json"));
  CHECK(manifest["status"] == "complete");
  CHECK(manifest["jobs"][1]["status"] == "failed");
  CHECK(manifest["jobs"][1].contains("error"));
}

TEST_CASE("sweep: a broken pretraining pass fails every job") {
  GenConfig gc = tiny_bundle().config;
  gc.modalities = {"solo"};
  gc.tokens_per_modality = {3};
  gc.sigma = {0.1};
  DatasetBundle b = generate(gc, 5);
  TrainConfig cfg = tiny_train();  // contrastive needs two modalities
  TempDir dir("sweep_prefail");
  SweepOutcome out = run_sweep(b, cfg, SweepPlan{}, dir.path(), "pf", 1);

  CHECK_FALSE(out.all_ok());
  REQUIRE(out.jobs.size() == 5);  // pretrain + 4 methods for the single set
  CHECK(out.jobs[0].status == "failed");
  CHECK(out.jobs[0].error ==
        "contrastive pretraining needs at least 2 modalities");
  for (std::size_t i = 1; i < out.jobs.size(); ++i)
    CHECK(out.jobs[i].error.find("pretraining failed: ") == 0);
}

TEST_CASE("sweep: malformed plans and worker counts are refused") {
  DatasetBundle b = tiny_bundle();
  TrainConfig cfg = tiny_train();
  TempDir dir("sweep_bad");
  SweepPlan plan;
  plan.methods = {"dream"};
  CHECK_THROWS_WITH_AS(run_sweep(b, cfg, plan, dir.path(), "x", 1),
                       "unknown sweep method 'dream'", config_error);
  plan.methods.clear();
  plan.train_sets = {"m0", "m0"};
  CHECK_THROWS_WITH_AS(run_sweep(b, cfg, plan, dir.path(), "x", 1),
                       "duplicate modality set 'm0'", config_error);
  CHECK_THROWS_WITH_AS(run_sweep(b, cfg, SweepPlan{}, dir.path(), "x", 0),
                       "--parallel must be at least 1", config_error);
}
