#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "modrobe/modality.hpp"

namespace modrobe {

enum class ScoreKind { map, accuracy };

/// p(M_E; M_T) over nonempty subset pairs. Cells may be absent (failed or
/// unplanned jobs); scores are fractions in [0, 1].
struct ScoreMatrix {
  ModalityUniverse universe;
  ScoreKind kind = ScoreKind::accuracy;
  std::map<std::pair<ModalitySet, ModalitySet>, double> cells;

  void set(ModalitySet mt, ModalitySet me, double score);
  std::optional<double> get(ModalitySet mt, ModalitySet me) const;

  /// Distinct training sets present, ascending by bitmask.
  std::vector<ModalitySet> train_sets() const;
  /// Distinct evaluation sets present for one training set.
  std::vector<ModalitySet> eval_sets(ModalitySet mt) const;

  bool operator==(const ScoreMatrix&) const = default;
};

/// CSV form: header `train_set,eval_set,score`; sets as '+'-joined sorted
/// modality names; score printed as a 6-decimal fraction. '#' lines and blank
/// lines are ignored on read; the universe is the union of the names seen.
void save_score_matrix(const ScoreMatrix& m, const std::filesystem::path& path);
ScoreMatrix load_score_matrix(const std::filesystem::path& path,
                              ScoreKind kind = ScoreKind::map);

std::string format_score(double fraction);

}  // namespace modrobe
