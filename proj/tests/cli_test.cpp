#include <filesystem>
#include <string>

#include "doctest.h"
#include "helpers.hpp"
#include "modrobe/config_io.hpp"

using namespace modrobe;
using testutil::CliResult;
using testutil::TempDir;
using testutil::run_cli;
using testutil::slurp;

namespace {

const std::string kFinetuneFixture =
    std::string(MODROBE_FIXTURES_DIR) + "/audioset/finetune.csv";

/// A small two-modality generator config the gen-data tests share.
std::string write_gen_config(const TempDir& dir) {
  std::string path = (dir / "gen.json").string();
  write_text_file(path, R"({
  "modalities": ["m0", "m1"],
  "latent_dim": 4,
  "token_dim": 6,
  "tokens_per_modality": [3, 3],
  "sigma": [0.1, 0.4],
  "num_classes": 4,
  "sizes": {"pretrain": 96, "train": 64, "eval": 64, "selfdist": 32},
  "seed": 7
}
)");
  return path;
}

std::string hash_line(const std::string& output) {
  std::size_t at = output.find("hash: ");
  REQUIRE(at != std::string::npos);
  return output.substr(at, output.find('\n', at) - at);
}

}  // namespace

TEST_CASE("cli: help succeeds, bad usage exits two") {
  CliResult help = run_cli("--help");
  CHECK(help.exit_code == 0);
  CHECK(help.output.find("multimodal robustness laboratory") !=
        std::string::npos);
  CHECK(run_cli("gen-data --help").exit_code == 0);

  CHECK(run_cli("").exit_code == 2);                  // subcommand required
  CHECK(run_cli("frobnicate").exit_code == 2);        // unknown subcommand
  CHECK(run_cli("metrics").exit_code == 2);           // missing --matrix
  CHECK(run_cli("metrics --matrix x --bogus").exit_code == 2);
  CHECK(run_cli("sweep --bundle x").exit_code == 2);  // missing --run
}

TEST_CASE("cli: gen-data is reproducible and refuses to clobber") {
  TempDir dir("cli_gen");
  std::string cfg = write_gen_config(dir);
  std::string out_a = (dir / "a").string(), out_b = (dir / "b").string();

  CliResult a = run_cli("gen-data --config " + cfg + " --out " + out_a);
  REQUIRE(a.exit_code == 0);
  CHECK(a.output.find("bundle: " + out_a) != std::string::npos);
  CliResult b = run_cli("gen-data --config " + cfg + " --out " + out_b);
  REQUIRE(b.exit_code == 0);
  CHECK(hash_line(a.output) == hash_line(b.output));
  CHECK(std::filesystem::exists(dir / "a" / "config.json"));
  CHECK(std::filesystem::exists(dir / "a" / "hash.txt"));

  CliResult again = run_cli("gen-data --config " + cfg + " --out " + out_a);
  CHECK(again.exit_code == 2);
  CHECK(again.output.find("use --force to overwrite") != std::string::npos);
  CHECK(run_cli("gen-data --config " + cfg + " --out " + out_a + " --force")
            .exit_code == 0);
}

TEST_CASE("cli: gen-data names the offending config field") {
  TempDir dir("cli_genbad");
  std::string cfg = write_gen_config(dir);
  std::string out = (dir / "x").string();

  CliResult bad_key = run_cli("gen-data --config " + cfg +
                              " --set frobs=3 --out " + out);
  CHECK(bad_key.exit_code == 2);
  CHECK(bad_key.output.find("frobs") != std::string::npos);

  CliResult bad_size = run_cli("gen-data --config " + cfg +
                               " --set sizes.train=-5 --out " + out);
  CHECK(bad_size.exit_code == 2);
  CHECK(bad_size.output.find("sizes.train") != std::string::npos);

  CliResult mixed = run_cli("gen-data --from-features m.json --config " + cfg +
                            " --out " + out);
  CHECK(mixed.exit_code == 2);
  CHECK(mixed.output.find("drop --config/--set") != std::string::npos);
}

TEST_CASE("cli: metrics reproduces the reference summary line byte for byte") {
  CliResult r =
      run_cli("metrics --matrix " + kFinetuneFixture + " --kind map --percent");
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("# Robustness metrics (mAP, percent)") !=
        std::string::npos);
  CHECK(r.output.find("summary: 36.5 | 20.8 | 29.9 | 13.8 | 31.2 | 23.6 | "
                      "38.1 | 37.4 | 15.1 | 13.0") != std::string::npos);
}

TEST_CASE("cli: metrics validates its flags and inputs") {
  CHECK(run_cli("metrics --matrix " + kFinetuneFixture + " --kind auc")
            .exit_code == 2);
  CHECK(run_cli("metrics --matrix " + kFinetuneFixture + " --strata bogus")
            .exit_code == 2);
  // a missing file is a runtime failure, not a usage error
  CHECK(run_cli("metrics --matrix /nonexistent/scores.csv").exit_code == 1);

  TempDir dir("cli_badcsv");
  std::string bad = (dir / "bad.csv").string();
  write_text_file(bad, "train_set,eval_set,score\naudio,audio,1.7\n");
  CliResult r = run_cli("metrics --matrix " + bad);
  CHECK(r.exit_code == 2);
  CHECK(r.output.find(bad + ":2:") != std::string::npos);
}

TEST_CASE("cli: strata selection narrows the report") {
  TempDir dir("cli_strata");
  std::string md = (dir / "out.md").string(), csv = (dir / "out.csv").string();
  CliResult r = run_cli("metrics --matrix " + kFinetuneFixture +
                        " --strata transfer --percent --out-md " + md +
                        " --out-csv " + csv);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("| transfer |") != std::string::npos);
  CHECK(r.output.find("| overall |") == std::string::npos);
  CHECK(r.output.find("overlap") == std::string::npos);
  CHECK(slurp(md) == r.output);
  std::string csv_text = slurp(csv);
  CHECK(csv_text.find("scope,stratum,P_best,R_best,P,R\n") == 0);
  CHECK(csv_text.find("aggregate,transfer,20.8,20.8,15.1,13.0\n") !=
        std::string::npos);
  CHECK(csv_text.find("overall") == std::string::npos);
}

TEST_CASE("cli: pretrain drops its checkpoint where the sweep looks for it") {
  TempDir dir("cli_pre");
  std::string cfg = write_gen_config(dir);
  std::string bundle = (dir / "bundle").string();
  REQUIRE(run_cli("gen-data --config " + cfg + " --out " + bundle).exit_code ==
          0);
  std::string env = "MODROBE_RUNS_DIR=" + (dir / "runs").string() + " ";

  CliResult r = run_cli("pretrain --bundle " + bundle +
                            " --run p1 --set pretrain_epochs=1",
                        env);
  REQUIRE(r.exit_code == 0);
  std::filesystem::path ckpt =
      dir / "runs" / "p1" / "pretrain" / "m0+m1" / "model.mmrl";
  CHECK(r.output.find("checkpoint: " + ckpt.string()) != std::string::npos);
  CHECK(std::filesystem::exists(ckpt));

  CliResult again = run_cli("pretrain --bundle " + bundle +
                                " --run p1 --set pretrain_epochs=1",
                            env);
  CHECK(again.exit_code == 2);
  CHECK(again.output.find("use --force to overwrite") != std::string::npos);
  CHECK(run_cli("pretrain --bundle " + bundle +
                    " --run p1 --set pretrain_epochs=1 --force",
                env)
            .exit_code == 0);
}

TEST_CASE("cli: a small sweep and its report round-trip through the runs "
          "root") {
  TempDir dir("cli_sweep");
  std::string cfg = write_gen_config(dir);
  std::string bundle = (dir / "bundle").string();
  REQUIRE(run_cli("gen-data --config " + cfg + " --out " + bundle).exit_code ==
          0);
  std::string env = "MODROBE_RUNS_DIR=" + (dir / "runs").string() + " ";
  std::string sweep_cmd = "sweep --bundle " + bundle +
                          " --run r1 --methods probe,finetune --parallel 2"
                          " --set pretrain_epochs=1 --set downstream_epochs=1";

  CliResult r = run_cli(sweep_cmd, env);
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("scores_probe.csv: 9 cells") != std::string::npos);
  CHECK(r.output.find("scores_finetune.csv: 9 cells") != std::string::npos);
  std::filesystem::path run_dir = dir / "runs" / "r1";
  CHECK(r.output.find("manifest: " + (run_dir / "manifest.json").string()) !=
        std::string::npos);
  CHECK(std::filesystem::exists(run_dir / "finetune" / "m1" / "model.mmrl"));
  std::string scores = slurp(run_dir / "scores_probe.csv");
  CHECK(scores.find("train_set,eval_set,score\n") == 0);

  CHECK(run_cli(sweep_cmd, env).exit_code == 2);  // refuses to redo
  CHECK(run_cli(sweep_cmd + " --force", env).exit_code == 0);

  CliResult rep = run_cli("report --run r1 --percent", env);
  REQUIRE(rep.exit_code == 0);
  for (const char* f : {"report_probe.md", "report_probe.csv",
                        "scatter_probe.csv", "report_finetune.md"})
    CHECK(std::filesystem::exists(run_dir / f));
  std::string scatter = slurp(run_dir / "scatter_probe.csv");
  CHECK(scatter.find("train_set,R,P\n") == 0);
  CHECK(std::count(scatter.begin(), scatter.end(), '\n') == 4);  // 3 sets
  CHECK(slurp(run_dir / "report_probe.md")
            .find("# Robustness metrics (accuracy, percent)") == 0);

  CHECK(run_cli("report --run nope", env).exit_code == 2);
}

TEST_CASE("cli: --strict turns sweep failures into a nonzero exit") {
  TempDir dir("cli_strict");
  write_text_file((dir / "solo.json").string(), R"({
  "modalities": ["solo"],
  "latent_dim": 4,
  "token_dim": 6,
  "tokens_per_modality": [3],
  "sigma": [0.1],
  "num_classes": 4,
  "sizes": {"pretrain": 32, "train": 16, "eval": 16, "selfdist": 8},
  "seed": 3
}
)");
  std::string bundle = (dir / "bundle").string();
  REQUIRE(run_cli("gen-data --config " + (dir / "solo.json").string() +
                  " --out " + bundle)
              .exit_code == 0);
  std::string env = "MODROBE_RUNS_DIR=" + (dir / "runs").string() + " ";

  // contrastive pretraining cannot work on one modality; the sweep records
  // the failures and, politely, still exits zero unless asked not to
  CliResult soft = run_cli("sweep --bundle " + bundle + " --run s1", env);
  CHECK(soft.exit_code == 0);
  CHECK(soft.output.find("warning: pretrain/solo") != std::string::npos);
  CliResult hard =
      run_cli("sweep --bundle " + bundle + " --run s2 --strict", env);
  CHECK(hard.exit_code == 1);
}

TEST_CASE("cli: report complains about a run with nothing to report") {
  TempDir dir("cli_repempty");
  std::filesystem::create_directories(dir / "runs" / "empty");
  write_text_file((dir / "runs" / "empty" / "manifest.json").string(), "{}\n");
  std::string env = "MODROBE_RUNS_DIR=" + (dir / "runs").string() + " ";
  CliResult r = run_cli("report --run empty", env);
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("has no score matrices") != std::string::npos);
}
