#include "modrobe/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <optional>
#include <thread>

#include <nlohmann/json.hpp>

#include "modrobe/bundle_io.hpp"
#include "modrobe/checkpoint.hpp"
#include "modrobe/errors.hpp"
#include "modrobe/rng.hpp"
#include "modrobe/scores.hpp"

namespace modrobe {

namespace {

using nlohmann::json;

struct ResolvedPlan {
  std::vector<std::string> methods;      // canonical order, deduplicated
  std::vector<ModalitySet> train_sets;
  std::vector<ModalitySet> eval_sets;
  bool need_probe = false;               // dependency closure
  bool need_masd = false;
};

ResolvedPlan resolve_plan(const SweepPlan& plan,
                          const ModalityUniverse& universe) {
  ResolvedPlan r;
  std::vector<std::string> wanted =
      plan.methods.empty() ? all_sweep_methods() : plan.methods;
  for (const std::string& m : wanted)
    if (std::find(all_sweep_methods().begin(), all_sweep_methods().end(), m) ==
        all_sweep_methods().end())
      throw config_error("unknown sweep method '" + m + "'");
  for (const std::string& m : all_sweep_methods())
    if (std::find(wanted.begin(), wanted.end(), m) != wanted.end())
      r.methods.push_back(m);

  auto resolve_sets = [&](const std::vector<std::string>& names) {
    if (names.empty()) return universe.nonempty_subsets();
    std::vector<ModalitySet> out;
    for (const std::string& n : names) {
      ModalitySet s = universe.parse(n);
      if (s.empty()) throw config_error("empty modality set '" + n + "'");
      if (std::find(out.begin(), out.end(), s) != out.end())
        throw config_error("duplicate modality set '" + n + "'");
      out.push_back(s);
    }
    return out;
  };
  r.train_sets = resolve_sets(plan.train_sets);
  r.eval_sets = resolve_sets(plan.eval_sets);

  auto has = [&](const char* m) {
    return std::find(r.methods.begin(), r.methods.end(), m) != r.methods.end();
  };
  r.need_masd = has("masd") || has("wiseft");
  r.need_probe = true;  // every downstream method builds on the probe head
  return r;
}

std::uint64_t job_seed(const TrainConfig& cfg, const std::string& method,
                       const std::string& mt_name) {
  return mix_seed(cfg.master_seed, method + "/" + mt_name);
}

/// Everything one training set produces: checkpoints per method (or an
/// error) plus the evaluated cells.
struct ChainResult {
  std::map<std::string, std::string> errors;  // method → reason
  std::map<std::string, std::vector<std::pair<ModalitySet, double>>> cells;
  std::map<std::string, std::string> ckpt_paths;  // run-relative
};

void save_job_checkpoint(const ModelCheckpoint& ckpt,
                         const std::filesystem::path& run_dir,
                         const std::string& method, const std::string& mt_name,
                         ChainResult& out) {
  std::filesystem::path dir = run_dir / method / mt_name;
  std::filesystem::create_directories(dir);
  save_checkpoint(ckpt, dir / "model.mmrl");
  out.ckpt_paths[method] = method + "/" + mt_name + "/model.mmrl";
}

ChainResult run_chain(const DatasetBundle& bundle, const TrainConfig& cfg,
                      const ResolvedPlan& plan,
                      const std::filesystem::path& run_dir,
                      const ModelCheckpoint& backbone,
                      const ModalityUniverse& universe, ModalitySet mt) {
  std::string mt_name = universe.to_string(mt);
  ChainResult out;
  auto requested = [&](const char* m) {
    return std::find(plan.methods.begin(), plan.methods.end(), m) !=
           plan.methods.end();
  };
  auto evaluate_all = [&](const char* method, const ModelCheckpoint& ckpt) {
    auto& cells = out.cells[method];
    for (ModalitySet me : plan.eval_sets)
      cells.emplace_back(me, evaluate(ckpt, bundle.eval, me));
  };

  std::optional<ModelCheckpoint> probe_ckpt;
  try {
    probe_ckpt = linear_probe(backbone, bundle.train, mt, cfg,
                              job_seed(cfg, "probe", mt_name));
    if (requested("probe")) {
      save_job_checkpoint(*probe_ckpt, run_dir, "probe", mt_name, out);
      evaluate_all("probe", *probe_ckpt);
    }
  } catch (const std::exception& e) {
    for (const std::string& m : plan.methods)
      out.errors[m] = m == "probe" ? e.what()
                                   : "probe dependency failed: " +
                                         std::string(e.what());
    return out;
  }

  if (requested("finetune")) {
    try {
      ModelCheckpoint ft = finetune(backbone, *probe_ckpt, bundle.train, mt,
                                    cfg, job_seed(cfg, "finetune", mt_name));
      save_job_checkpoint(ft, run_dir, "finetune", mt_name, out);
      evaluate_all("finetune", ft);
    } catch (const std::exception& e) {
      out.errors["finetune"] = e.what();
    }
  }

  std::optional<ModelCheckpoint> masd_ckpt;
  if (plan.need_masd) {
    try {
      masd_ckpt = masd_train(backbone, *probe_ckpt, bundle.train, mt,
                             bundle.selfdist, cfg,
                             job_seed(cfg, "masd", mt_name));
      if (requested("masd")) {
        save_job_checkpoint(*masd_ckpt, run_dir, "masd", mt_name, out);
        evaluate_all("masd", *masd_ckpt);
      }
    } catch (const std::exception& e) {
      if (requested("masd")) out.errors["masd"] = e.what();
      if (requested("wiseft"))
        out.errors["wiseft"] =
            "masd dependency failed: " + std::string(e.what());
    }
  }

  if (requested("wiseft") && masd_ckpt.has_value()) {
    try {
      ModelCheckpoint wise =
          wiseft_assemble(*masd_ckpt, *probe_ckpt, cfg.wiseft_alpha);
      save_job_checkpoint(wise, run_dir, "wiseft", mt_name, out);
      evaluate_all("wiseft", wise);
    } catch (const std::exception& e) {
      out.errors["wiseft"] = e.what();
    }
  }
  return out;
}

json manifest_json(const std::string& run_id, const std::string& hash,
                   ScoreKind kind, const TrainConfig& cfg,
                   const ResolvedPlan& plan, const ModalityUniverse& universe,
                   const std::vector<JobResult>& jobs, bool complete) {
  json j;
  j["run_id"] = run_id;
  j["bundle_hash"] = hash;
  j["score_kind"] = kind == ScoreKind::map ? "map" : "accuracy";
  j["status"] = complete ? "complete" : "running";
  j["train_config"] = json::parse(render_train_config(cfg));
  json plan_j;
  plan_j["methods"] = plan.methods;
  json ts = json::array(), es = json::array();
  for (ModalitySet s : plan.train_sets) ts.push_back(universe.to_string(s));
  for (ModalitySet s : plan.eval_sets) es.push_back(universe.to_string(s));
  plan_j["train_sets"] = ts;
  plan_j["eval_sets"] = es;
  j["plan"] = plan_j;
  json outputs;
  for (const std::string& m : plan.methods)
    outputs[m] = "scores_" + m + ".csv";
  j["outputs"] = outputs;
  json jobs_j = json::array();
  for (const JobResult& job : jobs) {
    json row;
    row["method"] = job.method;
    row["train_set"] = job.train_set;
    row["status"] = job.status;
    if (!job.error.empty()) row["error"] = job.error;
    if (!job.checkpoint.empty()) row["checkpoint"] = job.checkpoint;
    jobs_j.push_back(row);
  }
  j["jobs"] = jobs_j;
  return j;
}

void write_manifest(const std::filesystem::path& run_dir, const json& j) {
  write_text_file(run_dir / "manifest.json", j.dump(2) + "\n");
}

}  // namespace

bool SweepOutcome::all_ok() const {
  return std::all_of(jobs.begin(), jobs.end(),
                     [](const JobResult& j) { return j.status == "ok"; });
}

SweepOutcome run_sweep(const DatasetBundle& bundle, const TrainConfig& cfg,
                       const SweepPlan& plan,
                       const std::filesystem::path& run_dir,
                       const std::string& run_id, int parallel) {
  if (parallel < 1) throw config_error("--parallel must be at least 1");
  cfg.validate(bundle.config.modalities.size());
  ModalityUniverse universe = bundle.config.universe();
  ResolvedPlan resolved = resolve_plan(plan, universe);

  std::filesystem::create_directories(run_dir);
  std::string hash = bundle_content_hash(bundle);
  ScoreKind kind = bundle.config.task == TaskKind::multi_label
                       ? ScoreKind::map
                       : ScoreKind::accuracy;

  // Pending manifest before any work starts.
  std::vector<JobResult> jobs;
  std::string full_name = universe.to_string(universe.full());
  jobs.push_back({"pretrain", full_name, "pending", "", ""});
  for (ModalitySet mt : resolved.train_sets)
    for (const std::string& m : resolved.methods)
      jobs.push_back({m, universe.to_string(mt), "pending", "", ""});
  write_manifest(run_dir, manifest_json(run_id, hash, kind, cfg, resolved,
                                        universe, jobs, false));

  SweepOutcome outcome;
  ModelCheckpoint backbone;
  std::string pretrain_error;
  try {
    backbone = pretrain(bundle, cfg, job_seed(cfg, "pretrain", full_name));
    std::filesystem::path dir = run_dir / "pretrain" / full_name;
    std::filesystem::create_directories(dir);
    save_checkpoint(backbone, dir / "model.mmrl");
    jobs[0] = {"pretrain", full_name, "ok", "",
               "pretrain/" + full_name + "/model.mmrl"};
  } catch (const std::exception& e) {
    pretrain_error = e.what();
    jobs[0] = {"pretrain", full_name, "failed", pretrain_error, ""};
  }

  std::vector<ChainResult> results(resolved.train_sets.size());
  if (pretrain_error.empty()) {
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
      while (true) {
        std::size_t i = next.fetch_add(1);
        if (i >= resolved.train_sets.size()) return;
        results[i] = run_chain(bundle, cfg, resolved, run_dir, backbone,
                               universe, resolved.train_sets[i]);
      }
    };
    std::size_t n_threads = std::min<std::size_t>(
        static_cast<std::size_t>(parallel), resolved.train_sets.size());
    if (n_threads <= 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
      for (auto& t : pool) t.join();
    }
  }

  // Assemble matrices and job rows in plan order, independent of scheduling.
  for (const std::string& m : resolved.methods) {
    ScoreMatrix matrix;
    matrix.universe = universe;
    matrix.kind = kind;
    outcome.matrices.emplace(m, std::move(matrix));
  }
  std::size_t row = 1;
  for (std::size_t i = 0; i < resolved.train_sets.size(); ++i) {
    ModalitySet mt = resolved.train_sets[i];
    const ChainResult& r = results[i];
    for (const std::string& m : resolved.methods) {
      JobResult& job = jobs[row++];
      if (!pretrain_error.empty()) {
        job.status = "failed";
        job.error = "pretraining failed: " + pretrain_error;
        continue;
      }
      auto err = r.errors.find(m);
      if (err != r.errors.end()) {
        job.status = "failed";
        job.error = err->second;
        continue;
      }
      job.status = "ok";
      auto path = r.ckpt_paths.find(m);
      if (path != r.ckpt_paths.end()) job.checkpoint = path->second;
      auto cells = r.cells.find(m);
      if (cells != r.cells.end())
        for (const auto& [me, score] : cells->second)
          outcome.matrices.at(m).set(mt, me, score);
    }
  }
  outcome.jobs = jobs;

  for (const auto& [m, matrix] : outcome.matrices)
    save_score_matrix(matrix, run_dir / ("scores_" + m + ".csv"));
  write_manifest(run_dir, manifest_json(run_id, hash, kind, cfg, resolved,
                                        universe, jobs, true));
  return outcome;
}

}  // namespace modrobe
