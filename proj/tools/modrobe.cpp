// modrobe — desk-scale multimodal robustness laboratory.
//
// Subcommands:
//   gen-data   synthesize (or ingest) a dataset bundle
//   pretrain   train a self-supervised backbone from a bundle
//   sweep      train every requested (method, training set) pair and score
//              each checkpoint on every evaluation set
//   metrics    performance/robustness report for a score matrix CSV
//   report     metrics + scatter points for every matrix of a finished run
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
// MODROBE_RUNS_DIR overrides the default ./runs output root.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include <nlohmann/json.hpp>

#include "modrobe/bundle_io.hpp"
#include "modrobe/config_io.hpp"
#include "modrobe/errors.hpp"
#include "modrobe/features_io.hpp"
#include "modrobe/metrics.hpp"
#include "modrobe/rng.hpp"
#include "modrobe/sweep.hpp"
#include "modrobe/train.hpp"

namespace fs = std::filesystem;
using namespace modrobe;

namespace {

fs::path runs_root() {
  if (const char* env = std::getenv("MODROBE_RUNS_DIR"); env && *env)
    return fs::path(env);
  return fs::path("runs");
}

std::string load_config_json(const std::string& path,
                             const std::vector<std::string>& overrides) {
  std::string text = path.empty() ? "{}" : read_text_file(path);
  return apply_overrides(text, overrides);
}

// ---- gen-data -------------------------------------------------------------

struct GenDataArgs {
  std::string config;
  std::string from_features;
  std::vector<std::string> overrides;
  std::string out;
  bool force = false;
};

void cmd_gen_data(const GenDataArgs& a) {
  fs::path out(a.out);
  if (fs::exists(out / "config.json") && !a.force)
    throw config_error("bundle already exists at " + out.string() +
                       "; use --force to overwrite");
  DatasetBundle bundle;
  if (!a.from_features.empty()) {
    if (!a.config.empty() || !a.overrides.empty())
      throw config_error(
          "--from-features takes its settings from the manifest; drop "
          "--config/--set");
    bundle = ingest_features(a.from_features);
  } else {
    GenSpec spec = parse_gen_spec(load_config_json(a.config, a.overrides),
                                  a.config.empty() ? "defaults" : a.config);
    spec.config.validate();
    bundle = generate(spec.config, spec.seed);
  }
  save_bundle(bundle, out);
  std::cout << "bundle: " << out.string() << "\n"
            << "hash: " << bundle_hash(out) << "\n";
}

// ---- pretrain -------------------------------------------------------------

struct PretrainArgs {
  std::string bundle;
  std::string config;
  std::vector<std::string> overrides;
  std::string run_id;
  bool force = false;
};

void cmd_pretrain(const PretrainArgs& a) {
  DatasetBundle bundle = load_bundle(a.bundle);
  TrainConfig cfg =
      parse_train_config(load_config_json(a.config, a.overrides),
                         a.config.empty() ? "defaults" : a.config);
  ModalityUniverse universe = bundle.config.universe();
  std::string full_name = universe.to_string(universe.full());
  fs::path dir = runs_root() / a.run_id / "pretrain" / full_name;
  fs::path path = dir / "model.mmrl";
  if (fs::exists(path) && !a.force)
    throw config_error("checkpoint already exists at " + path.string() +
                       "; use --force to overwrite");
  ModelCheckpoint ckpt = pretrain(
      bundle, cfg, mix_seed(cfg.master_seed, "pretrain/" + full_name));
  fs::create_directories(dir);
  save_checkpoint(ckpt, path);
  std::cout << "checkpoint: " << path.string() << "\n";
}

// ---- sweep ----------------------------------------------------------------

struct SweepArgs {
  std::string bundle;
  std::string config;
  std::vector<std::string> overrides;
  std::string run_id;
  std::string methods;
  int parallel = 1;
  bool force = false;
  bool strict = false;
};

int cmd_sweep(const SweepArgs& a) {
  DatasetBundle bundle = load_bundle(a.bundle);
  SweepSpec spec =
      parse_sweep_spec(load_config_json(a.config, a.overrides),
                       a.config.empty() ? "defaults" : a.config);
  if (!a.methods.empty()) {
    spec.plan.methods.clear();
    std::stringstream ss(a.methods);
    std::string item;
    while (std::getline(ss, item, ','))
      if (!item.empty()) spec.plan.methods.push_back(item);
  }
  fs::path run_dir = runs_root() / a.run_id;
  if (fs::exists(run_dir / "manifest.json")) {
    if (!a.force)
      throw config_error("run '" + a.run_id +
                         "' already exists; use --force to redo it");
    fs::remove_all(run_dir);
  }
  SweepOutcome outcome = run_sweep(bundle, spec.train, spec.plan, run_dir,
                                   a.run_id, a.parallel);
  for (const JobResult& job : outcome.jobs)
    if (job.status != "ok")
      std::cerr << "warning: " << job.method << "/" << job.train_set << ": "
                << job.error << "\n";
  for (const auto& [method, matrix] : outcome.matrices)
    std::cout << "scores_" << method << ".csv: " << matrix.cells.size()
              << " cells\n";
  std::cout << "manifest: " << (run_dir / "manifest.json").string() << "\n";
  if (!outcome.all_ok() && a.strict) return 1;
  return 0;
}

// ---- metrics --------------------------------------------------------------

struct MetricsArgs {
  std::string matrix;
  std::string kind = "map";
  std::string strata = "all";
  bool percent = false;
  std::string out_md;
  std::string out_csv;
};

std::string fmt_cell(std::optional<double> v, bool percent) {
  if (!v) return "-";
  char buf[32];
  if (percent)
    std::snprintf(buf, sizeof(buf), "%.1f", *v * 100.0);
  else
    std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

std::set<Stratum::Kind> parse_strata_selector(const std::string& text) {
  std::set<Stratum::Kind> kinds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "all") return {};  // empty set = everything
    if (item == "overall")
      kinds.insert(Stratum::Kind::overall);
    else if (item == "missing")
      kinds.insert(Stratum::Kind::missing);
    else if (item == "added")
      kinds.insert(Stratum::Kind::added);
    else if (item == "transfer")
      kinds.insert(Stratum::Kind::transfer);
    else if (item == "overlap")
      kinds.insert(Stratum::Kind::overlap);
    else if (item == "matched")
      kinds.insert(Stratum::Kind::matched);
    else
      throw config_error("unknown stratum '" + item +
                         "' (expected overall, missing, added, transfer, "
                         "overlap, matched or all)");
  }
  return kinds;
}

/// Focused view for a `--strata` selection: only the chosen strata, as an
/// aggregate table plus per-training-set rows.
std::string render_selected_markdown(const MetricsReport& r,
                                     const std::set<Stratum::Kind>& kinds,
                                     bool percent) {
  std::ostringstream os;
  os << "| stratum | P_best | R_best | P | R |\n|---|---|---|---|---|\n";
  for (const auto& [s, row] : r.aggregates) {
    if (!kinds.contains(s.kind)) continue;
    os << "| " << s.name() << " | " << fmt_cell(row.p_best, percent) << " | "
       << fmt_cell(row.r_best, percent) << " | " << fmt_cell(row.p, percent)
       << " | " << fmt_cell(row.r, percent) << " |\n";
  }
  os << "\n| train_set | stratum | P | R |\n|---|---|---|---|\n";
  for (const auto& [mt, by_stratum] : r.per_train)
    for (const auto& [s, row] : by_stratum) {
      if (!kinds.contains(s.kind)) continue;
      os << "| " << r.universe.to_string(mt) << " | " << s.name() << " | "
         << fmt_cell(row.p, percent) << " | " << fmt_cell(row.r, percent)
         << " |\n";
    }
  return os.str();
}

std::string render_selected_csv(const MetricsReport& r,
                                const std::set<Stratum::Kind>& kinds,
                                bool percent) {
  std::ostringstream os;
  os << "scope,stratum,P_best,R_best,P,R\n";
  for (const auto& [s, row] : r.aggregates) {
    if (!kinds.contains(s.kind)) continue;
    os << "aggregate," << s.name() << ',' << fmt_cell(row.p_best, percent)
       << ',' << fmt_cell(row.r_best, percent) << ','
       << fmt_cell(row.p, percent) << ',' << fmt_cell(row.r, percent) << '\n';
  }
  for (const auto& [mt, by_stratum] : r.per_train)
    for (const auto& [s, row] : by_stratum) {
      if (!kinds.contains(s.kind)) continue;
      os << r.universe.to_string(mt) << ',' << s.name() << ','
         << fmt_cell(row.p_best, percent) << ','
         << fmt_cell(row.r_best, percent) << ',' << fmt_cell(row.p, percent)
         << ',' << fmt_cell(row.r, percent) << '\n';
    }
  return os.str();
}

void cmd_metrics(const MetricsArgs& a) {
  ScoreKind kind;
  if (a.kind == "map")
    kind = ScoreKind::map;
  else if (a.kind == "accuracy")
    kind = ScoreKind::accuracy;
  else
    throw config_error("--kind must be 'map' or 'accuracy'");
  std::set<Stratum::Kind> kinds = parse_strata_selector(a.strata);
  ScoreMatrix m = load_score_matrix(a.matrix, kind);
  MetricsReport report = compute_metrics(m);
  std::string md = kinds.empty()
                       ? render_markdown(report, a.percent)
                       : render_selected_markdown(report, kinds, a.percent);
  std::string csv = kinds.empty()
                        ? render_csv(report, a.percent)
                        : render_selected_csv(report, kinds, a.percent);
  std::cout << md;
  if (!a.out_md.empty()) write_text_file(a.out_md, md);
  if (!a.out_csv.empty()) write_text_file(a.out_csv, csv);
}

// ---- report ---------------------------------------------------------------

struct ReportArgs {
  std::string run_id;
  bool percent = false;
};

void cmd_report(const ReportArgs& a) {
  fs::path run_dir = runs_root() / a.run_id;
  if (!fs::exists(run_dir / "manifest.json"))
    throw config_error("no run '" + a.run_id + "' under " +
                       runs_root().string());
  // the sweep records what its scores measure; default to mAP for manifests
  // that predate the field
  ScoreKind kind = ScoreKind::map;
  auto manifest =
      nlohmann::json::parse(read_text_file(run_dir / "manifest.json"),
                            nullptr, /*allow_exceptions=*/false);
  if (manifest.is_object() && manifest.value("score_kind", "map") == "accuracy")
    kind = ScoreKind::accuracy;
  bool any = false;
  std::vector<fs::path> matrices;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    std::string name = entry.path().filename().string();
    if (name.rfind("scores_", 0) == 0 && entry.path().extension() == ".csv")
      matrices.push_back(entry.path());
  }
  std::sort(matrices.begin(), matrices.end());
  for (const fs::path& path : matrices) {
    std::string stem = path.stem().string();  // scores_<method>
    std::string method = stem.substr(std::string("scores_").size());
    ScoreMatrix m = load_score_matrix(path, kind);
    MetricsReport report = compute_metrics(m);
    write_text_file(run_dir / ("report_" + method + ".md"),
                    render_markdown(report, a.percent));
    write_text_file(run_dir / ("report_" + method + ".csv"),
                    render_csv(report, a.percent));
    // raw robustness-vs-performance points, one per training set
    std::ostringstream scatter;
    scatter << "train_set,R,P\n";
    for (const auto& [mt, by_stratum] : report.per_train) {
      auto it = by_stratum.find(Stratum::overall());
      if (it == by_stratum.end()) continue;
      scatter << report.universe.to_string(mt) << ','
              << fmt_cell(it->second.r, a.percent) << ','
              << fmt_cell(it->second.p, a.percent) << '\n';
    }
    write_text_file(run_dir / ("scatter_" + method + ".csv"), scatter.str());
    std::cout << "report_" << method << ".md report_" << method
              << ".csv scatter_" << method << ".csv\n";
    any = true;
  }
  if (!any)
    throw std::runtime_error("run '" + a.run_id + "' has no score matrices");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale multimodal robustness laboratory"};
  app.require_subcommand(1);
  int rc = 0;

  GenDataArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen-data", "synthesize a dataset bundle");
  gen->add_option("--config", gen_args.config, "generator config JSON");
  gen->add_option("--from-features", gen_args.from_features,
                  "ingest external features via a manifest JSON");
  gen->add_option("--set", gen_args.overrides, "override config key=value");
  gen->add_option("--out", gen_args.out, "bundle output directory")
      ->required();
  gen->add_flag("--force", gen_args.force, "overwrite an existing bundle");
  gen->callback([&] { cmd_gen_data(gen_args); });

  PretrainArgs pre_args;
  CLI::App* pre = app.add_subcommand("pretrain", "train a backbone");
  pre->add_option("--bundle", pre_args.bundle, "bundle directory")->required();
  pre->add_option("--config", pre_args.config, "training config JSON");
  pre->add_option("--set", pre_args.overrides, "override config key=value");
  pre->add_option("--run", pre_args.run_id, "run id under the runs root")
      ->required();
  pre->add_flag("--force", pre_args.force, "overwrite an existing checkpoint");
  pre->callback([&] { cmd_pretrain(pre_args); });

  SweepArgs sweep_args;
  CLI::App* sweep = app.add_subcommand(
      "sweep", "train and score all (method, training set) pairs");
  sweep->add_option("--bundle", sweep_args.bundle, "bundle directory")
      ->required();
  sweep->add_option("--config", sweep_args.config, "sweep config JSON");
  sweep->add_option("--set", sweep_args.overrides, "override config key=value");
  sweep->add_option("--run", sweep_args.run_id, "run id under the runs root")
      ->required();
  sweep->add_option("--methods", sweep_args.methods,
                    "comma-separated subset of probe,finetune,masd,wiseft");
  sweep->add_option("--parallel", sweep_args.parallel,
                    "worker threads over training sets");
  sweep->add_flag("--force", sweep_args.force, "redo an existing run");
  sweep->add_flag("--strict", sweep_args.strict,
                  "exit nonzero if any job failed");
  sweep->callback([&] { rc = cmd_sweep(sweep_args); });

  MetricsArgs met_args;
  CLI::App* met =
      app.add_subcommand("metrics", "analyze a score matrix CSV");
  met->add_option("--matrix", met_args.matrix, "score matrix CSV")->required();
  met->add_option("--kind", met_args.kind, "score kind: map or accuracy");
  met->add_option("--strata", met_args.strata,
                  "comma-separated strata, or 'all'");
  met->add_flag("--percent", met_args.percent, "render percentages");
  met->add_option("--out-md", met_args.out_md, "write markdown report here");
  met->add_option("--out-csv", met_args.out_csv, "write CSV report here");
  met->callback([&] { cmd_metrics(met_args); });

  ReportArgs rep_args;
  CLI::App* rep =
      app.add_subcommand("report", "emit reports for a finished run");
  rep->add_option("--run", rep_args.run_id, "run id under the runs root")
      ->required();
  rep->add_flag("--percent", rep_args.percent, "render percentages");
  rep->callback([&] { cmd_report(rep_args); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;  // --help is a success; bad usage is not
  } catch (const config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
