#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "modrobe/modality.hpp"
#include "modrobe/score_matrix.hpp"

namespace modrobe {

/// Evaluation-set stratum relative to a training set M_T:
///   overall      — every nonempty M_E
///   missing      — M_E a strict subset of M_T
///   added        — M_T a strict subset of M_E
///   transfer     — M_T and M_E disjoint
///   overlap-k    — |M_T ∩ M_E| = k
///   matched-k    — M_E = M_T and |M_T| = k
struct Stratum {
  enum class Kind { overall, missing, added, transfer, overlap, matched };
  Kind kind = Kind::overall;
  std::size_t k = 0;  // overlap / matched only

  static Stratum overall() { return {Kind::overall, 0}; }
  static Stratum missing() { return {Kind::missing, 0}; }
  static Stratum added() { return {Kind::added, 0}; }
  static Stratum transfer() { return {Kind::transfer, 0}; }
  static Stratum overlap(std::size_t k) { return {Kind::overlap, k}; }
  static Stratum matched(std::size_t k) { return {Kind::matched, k}; }

  bool admits(ModalitySet mt, ModalitySet me) const;
  std::string name() const;
  auto operator<=>(const Stratum&) const = default;
};

/// Evaluation sets of the stratum that actually have a score in the matrix,
/// ascending by bitmask.
std::vector<ModalitySet> stratum_eval_sets(const ScoreMatrix& m, ModalitySet mt,
                                           Stratum s);

/// P(M_T) — mean of p over the stratum; R(M_T) — min over the same sets.
/// Absent (never zero) when the stratum holds no scored evaluation set.
std::optional<double> performance(const ScoreMatrix& m, ModalitySet mt,
                                  Stratum s);
std::optional<double> robustness(const ScoreMatrix& m, ModalitySet mt,
                                 Stratum s);

/// P_best/R_best = max over training sets of P(M_T)/R(M_T); P/R = mean over
/// training sets. Only training sets whose stratum is nonempty participate.
struct AggregateRow {
  std::optional<double> p_best, r_best, p, r;
  bool operator==(const AggregateRow&) const = default;
};
AggregateRow aggregate(const ScoreMatrix& m, Stratum s);

/// M_T -> the evaluation set with the highest score; ties break to the
/// smallest cardinality, then lexicographic serialized name.
std::map<ModalitySet, ModalitySet> best_eval_sets(const ScoreMatrix& m);

/// All (M_T, M_E) nonempty subset pairs of the universe in a stratum,
/// ascending by (M_T, M_E) bitmask. Ignores which cells the matrix holds.
std::vector<std::pair<ModalitySet, ModalitySet>> enumerate_pairs(
    const ModalityUniverse& u, Stratum s);

/// The whole suite over one matrix.
struct MetricsReport {
  ModalityUniverse universe;
  ScoreKind kind = ScoreKind::map;
  // per training set: stratum -> (P, R)
  std::map<ModalitySet, std::map<Stratum, AggregateRow>> per_train;
  std::map<Stratum, AggregateRow> aggregates;
  std::map<ModalitySet, ModalitySet> best_eval;
};

MetricsReport compute_metrics(const ScoreMatrix& m);

/// The strata compute_metrics covers: overall, missing, added, transfer,
/// overlap-k for k in 0..|M|, matched-k for k in 1..|M|.
std::vector<Stratum> default_strata(std::size_t universe_size);

/// Renderers. Scores are fractions; `percent` renders value*100 with one
/// decimal (the usual table style), otherwise 4-decimal fractions.
std::string render_markdown(const MetricsReport& r, bool percent);
std::string render_csv(const MetricsReport& r, bool percent);

}  // namespace modrobe
