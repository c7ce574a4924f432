#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "modrobe/config_io.hpp"
#include "modrobe/score_matrix.hpp"
#include "modrobe/train.hpp"

namespace modrobe {

/// One (method, training set) unit of work. The leading pretraining pass is
/// recorded as a job of its own.
struct JobResult {
  std::string method;
  std::string train_set;
  std::string status;  // "ok" | "failed"
  std::string error;   // failure reason when failed
  std::string checkpoint;  // run-relative path when ok
};

struct SweepOutcome {
  std::map<std::string, ScoreMatrix> matrices;  // per requested method
  std::vector<JobResult> jobs;  // fixed order, independent of scheduling
  bool all_ok() const;
};

/// Trains the backbone, then for every training set in the plan runs the
/// requested downstream methods and scores each resulting checkpoint on
/// every evaluation set. Everything lands under `run_dir`:
///
///   manifest.json            written before the first job, finalized after
///   pretrain/<M>/model.mmrl  the shared backbone
///   <method>/<M_T>/model.mmrl
///   scores_<method>.csv
///
/// Per-job randomness comes from streams derived from (master seed, method,
/// M_T), so any scheduling — serial or `parallel` worker threads — produces
/// identical bytes. Job failures are recorded and leave their matrix cells
/// absent; the sweep itself keeps going.
SweepOutcome run_sweep(const DatasetBundle& bundle, const TrainConfig& cfg,
                       const SweepPlan& plan,
                       const std::filesystem::path& run_dir,
                       const std::string& run_id, int parallel);

}  // namespace modrobe
