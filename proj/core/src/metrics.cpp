#include "modrobe/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace modrobe {

bool Stratum::admits(ModalitySet mt, ModalitySet me) const {
  switch (kind) {
    case Kind::overall: return true;
    case Kind::missing: return me.strict_subset_of(mt);
    case Kind::added: return mt.strict_subset_of(me);
    case Kind::transfer: return mt.disjoint_with(me);
    case Kind::overlap: return mt.intersect(me).count() == k;
    case Kind::matched: return me == mt && mt.count() == k;
  }
  return false;
}

std::string Stratum::name() const {
  switch (kind) {
    case Kind::overall: return "overall";
    case Kind::missing: return "missing";
    case Kind::added: return "added";
    case Kind::transfer: return "transfer";
    case Kind::overlap: return "overlap-" + std::to_string(k);
    case Kind::matched: return "matched-" + std::to_string(k);
  }
  return "?";
}

std::vector<ModalitySet> stratum_eval_sets(const ScoreMatrix& m, ModalitySet mt,
                                           Stratum s) {
  std::vector<ModalitySet> out;
  for (ModalitySet me : m.universe.nonempty_subsets())
    if (s.admits(mt, me) && m.get(mt, me)) out.push_back(me);
  return out;
}

std::optional<double> performance(const ScoreMatrix& m, ModalitySet mt,
                                  Stratum s) {
  auto sets = stratum_eval_sets(m, mt, s);
  if (sets.empty()) return std::nullopt;
  double sum = 0.0;
  for (ModalitySet me : sets) sum += *m.get(mt, me);
  return sum / static_cast<double>(sets.size());
}

std::optional<double> robustness(const ScoreMatrix& m, ModalitySet mt,
                                 Stratum s) {
  auto sets = stratum_eval_sets(m, mt, s);
  if (sets.empty()) return std::nullopt;
  double worst = *m.get(mt, sets.front());
  for (ModalitySet me : sets) worst = std::min(worst, *m.get(mt, me));
  return worst;
}

AggregateRow aggregate(const ScoreMatrix& m, Stratum s) {
  AggregateRow row;
  double p_sum = 0.0, r_sum = 0.0;
  std::size_t count = 0;
  for (ModalitySet mt : m.train_sets()) {
    auto p = performance(m, mt, s);
    auto r = robustness(m, mt, s);
    if (!p) continue;  // stratum empty for this training set: excluded
    ++count;
    p_sum += *p;
    r_sum += *r;
    row.p_best = row.p_best ? std::max(*row.p_best, *p) : *p;
    row.r_best = row.r_best ? std::max(*row.r_best, *r) : *r;
  }
  if (count > 0) {
    row.p = p_sum / static_cast<double>(count);
    row.r = r_sum / static_cast<double>(count);
  }
  return row;
}

std::map<ModalitySet, ModalitySet> best_eval_sets(const ScoreMatrix& m) {
  std::map<ModalitySet, ModalitySet> out;
  for (ModalitySet mt : m.train_sets()) {
    std::optional<ModalitySet> best;
    double best_score = 0.0;
    for (ModalitySet me : m.universe.nonempty_subsets()) {
      auto score = m.get(mt, me);
      if (!score) continue;
      bool better = false;
      if (!best) {
        better = true;
      } else if (*score > best_score) {
        better = true;
      } else if (*score == best_score) {
        // tie: smaller set first, then lexicographic serialized name
        if (me.count() < best->count())
          better = true;
        else if (me.count() == best->count() &&
                 m.universe.to_string(me) < m.universe.to_string(*best))
          better = true;
      }
      if (better) {
        best = me;
        best_score = *score;
      }
    }
    if (best) out[mt] = *best;
  }
  return out;
}

std::vector<std::pair<ModalitySet, ModalitySet>> enumerate_pairs(
    const ModalityUniverse& u, Stratum s) {
  std::vector<std::pair<ModalitySet, ModalitySet>> out;
  for (ModalitySet mt : u.nonempty_subsets())
    for (ModalitySet me : u.nonempty_subsets())
      if (s.admits(mt, me)) out.emplace_back(mt, me);
  return out;
}

std::vector<Stratum> default_strata(std::size_t universe_size) {
  std::vector<Stratum> out = {Stratum::overall(), Stratum::missing(),
                              Stratum::added(), Stratum::transfer()};
  for (std::size_t k = 0; k <= universe_size; ++k)
    out.push_back(Stratum::overlap(k));
  for (std::size_t k = 1; k <= universe_size; ++k)
    out.push_back(Stratum::matched(k));
  return out;
}

MetricsReport compute_metrics(const ScoreMatrix& m) {
  MetricsReport rep;
  rep.universe = m.universe;
  rep.kind = m.kind;
  std::vector<Stratum> strata = default_strata(m.universe.size());
  for (ModalitySet mt : m.train_sets()) {
    for (Stratum s : strata) {
      AggregateRow row;
      row.p = performance(m, mt, s);
      row.r = robustness(m, mt, s);
      if (row.p) {
        row.p_best = row.p;
        row.r_best = row.r;
        rep.per_train[mt][s] = row;
      }
    }
  }
  for (Stratum s : strata) rep.aggregates[s] = aggregate(m, s);
  rep.best_eval = best_eval_sets(m);
  return rep;
}

namespace {

std::string fmt(std::optional<double> v, bool percent) {
  if (!v) return "-";
  char buf[32];
  if (percent)
    std::snprintf(buf, sizeof(buf), "%.1f", *v * 100.0);
  else
    std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

const std::vector<Stratum> kTableStrata = {
    Stratum::overall(), Stratum::missing(), Stratum::added(),
    Stratum::transfer()};

}  // namespace

std::string render_markdown(const MetricsReport& r, bool percent) {
  std::ostringstream os;
  const char* unit = r.kind == ScoreKind::map ? "mAP" : "accuracy";
  os << "# Robustness metrics (" << unit << (percent ? ", percent" : ", fraction")
     << ")\n\n";

  os << "## Aggregate\n\n";
  os << "| stratum | P_best | R_best | P | R |\n";
  os << "|---|---|---|---|---|\n";
  for (const auto& [s, row] : r.aggregates) {
    bool core = std::find(kTableStrata.begin(), kTableStrata.end(), s) !=
                kTableStrata.end();
    if (!core) continue;
    os << "| " << s.name() << " | " << fmt(row.p_best, percent) << " | "
       << fmt(row.r_best, percent) << " | " << fmt(row.p, percent) << " | "
       << fmt(row.r, percent) << " |\n";
  }
  // the classic single-row view: overall then (P, R) per named stratum
  const AggregateRow& ov = r.aggregates.at(Stratum::overall());
  const AggregateRow& mi = r.aggregates.at(Stratum::missing());
  const AggregateRow& ad = r.aggregates.at(Stratum::added());
  const AggregateRow& tr = r.aggregates.at(Stratum::transfer());
  os << "\nsummary: " << fmt(ov.p_best, percent) << " | "
     << fmt(ov.r_best, percent) << " | " << fmt(ov.p, percent) << " | "
     << fmt(ov.r, percent) << " | " << fmt(mi.p, percent) << " | "
     << fmt(mi.r, percent) << " | " << fmt(ad.p, percent) << " | "
     << fmt(ad.r, percent) << " | " << fmt(tr.p, percent) << " | "
     << fmt(tr.r, percent) << "\n";

  os << "\n## Overlap curve\n\n| k | P | R |\n|---|---|---|\n";
  for (const auto& [s, row] : r.aggregates)
    if (s.kind == Stratum::Kind::overlap)
      os << "| " << s.k << " | " << fmt(row.p, percent) << " | "
         << fmt(row.r, percent) << " |\n";

  os << "\n## Matched size curve\n\n| k | P | R |\n|---|---|---|\n";
  for (const auto& [s, row] : r.aggregates)
    if (s.kind == Stratum::Kind::matched)
      os << "| " << s.k << " | " << fmt(row.p, percent) << " | "
         << fmt(row.r, percent) << " |\n";

  os << "\n## Per training set (overall)\n\n";
  os << "| train_set | P | R | best_eval_set |\n|---|---|---|---|\n";
  for (const auto& [mt, by_stratum] : r.per_train) {
    auto it = by_stratum.find(Stratum::overall());
    if (it == by_stratum.end()) continue;
    std::string best;
    auto bit = r.best_eval.find(mt);
    if (bit != r.best_eval.end()) best = r.universe.to_string(bit->second);
    os << "| " << r.universe.to_string(mt) << " | " << fmt(it->second.p, percent)
       << " | " << fmt(it->second.r, percent) << " | " << best << " |\n";
  }
  return os.str();
}

std::string render_csv(const MetricsReport& r, bool percent) {
  std::ostringstream os;
  os << "scope,stratum,P_best,R_best,P,R\n";
  for (const auto& [s, row] : r.aggregates)
    os << "aggregate," << s.name() << ',' << fmt(row.p_best, percent) << ','
       << fmt(row.r_best, percent) << ',' << fmt(row.p, percent) << ','
       << fmt(row.r, percent) << '\n';
  for (const auto& [mt, by_stratum] : r.per_train)
    for (const auto& [s, row] : by_stratum)
      os << r.universe.to_string(mt) << ',' << s.name() << ','
         << fmt(row.p_best, percent) << ',' << fmt(row.r_best, percent) << ','
         << fmt(row.p, percent) << ',' << fmt(row.r, percent) << '\n';
  return os.str();
}

}  // namespace modrobe
