#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "modrobe/data.hpp"
#include "modrobe/train.hpp"

namespace modrobe {

/// Downstream sweep plan: which training sets, methods and evaluation sets
/// to run. Set names are serialized (`+`-joined) and resolved against the
/// bundle's universe when the sweep starts; empty lists mean "all nonempty
/// subsets" (sets) or "all four methods".
struct SweepPlan {
  std::vector<std::string> methods;
  std::vector<std::string> train_sets;
  std::vector<std::string> eval_sets;
};

inline const std::vector<std::string>& all_sweep_methods() {
  static const std::vector<std::string> m = {"probe", "finetune", "masd",
                                             "wiseft"};
  return m;
}

/// JSON round trips. Parsers reject unknown keys so a typo in a config file
/// fails loudly instead of silently using a default; all violations are
/// config errors (usage exit code).
struct GenSpec {
  GenConfig config;
  std::uint64_t seed = 0;
};

GenSpec parse_gen_spec(const std::string& json_text, const std::string& origin);
std::string render_gen_spec(const GenSpec& spec);

TrainConfig parse_train_config(const std::string& json_text,
                               const std::string& origin);
std::string render_train_config(const TrainConfig& cfg);

SweepPlan parse_sweep_plan(const std::string& json_text,
                           const std::string& origin);

/// Full sweep config file: TrainConfig fields at the top level plus an
/// optional "plan" object.
struct SweepSpec {
  TrainConfig train;
  SweepPlan plan;
};
SweepSpec parse_sweep_spec(const std::string& json_text,
                           const std::string& origin);

/// `--set key=value` overrides applied to the raw JSON before parsing; keys
/// are dotted paths (`sizes.train`, `adamw.eps`), values parsed as JSON when
/// possible and taken as strings otherwise.
std::string apply_overrides(const std::string& json_text,
                            const std::vector<std::string>& overrides);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path,
                     const std::string& text);

}  // namespace modrobe
