#include "modrobe/score_matrix.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "modrobe/errors.hpp"

namespace modrobe {

void ScoreMatrix::set(ModalitySet mt, ModalitySet me, double score) {
  if (mt.empty() || me.empty())
    throw std::invalid_argument("score matrix: empty modality set");
  if (!mt.subset_of(universe.full()) || !me.subset_of(universe.full()))
    throw std::invalid_argument("score matrix: set outside the universe");
  if (!(score >= 0.0 && score <= 1.0))
    throw std::invalid_argument("score matrix: score " +
                                std::to_string(score) + " outside [0, 1]");
  cells[{mt, me}] = score;
}

std::optional<double> ScoreMatrix::get(ModalitySet mt, ModalitySet me) const {
  auto it = cells.find({mt, me});
  if (it == cells.end()) return std::nullopt;
  return it->second;
}

std::vector<ModalitySet> ScoreMatrix::train_sets() const {
  std::set<ModalitySet> seen;
  for (const auto& [key, _] : cells) seen.insert(key.first);
  return {seen.begin(), seen.end()};
}

std::vector<ModalitySet> ScoreMatrix::eval_sets(ModalitySet mt) const {
  std::vector<ModalitySet> out;
  for (const auto& [key, _] : cells)
    if (key.first == mt) out.push_back(key.second);
  return out;
}

std::string format_score(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", fraction);
  return buf;
}

void save_score_matrix(const ScoreMatrix& m, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << "train_set,eval_set,score\n";
  for (const auto& [key, score] : m.cells)
    f << m.universe.to_string(key.first) << ','
      << m.universe.to_string(key.second) << ',' << format_score(score) << '\n';
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

ScoreMatrix load_score_matrix(const std::filesystem::path& path,
                              ScoreKind kind) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());

  struct Row {
    std::size_t line;
    std::string train, eval;
    double score;
  };
  std::vector<Row> rows;
  std::set<std::string> names;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  auto fail = [&](const std::string& why) {
    throw config_error(path.string() + ":" + std::to_string(line_no) + ": " +
                       why);
  };
  auto split_names = [&](const std::string& text) {
    std::vector<std::string> parts;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t next = text.find('+', pos);
      if (next == std::string::npos) next = text.size();
      std::string part = text.substr(pos, next - pos);
      if (part.empty()) fail("empty modality name in '" + text + "'");
      parts.push_back(part);
      pos = next + 1;
    }
    return parts;
  };
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != "train_set,eval_set,score")
        fail("expected header 'train_set,eval_set,score', got '" + line + "'");
      header_seen = true;
      continue;
    }
    std::size_t c1 = line.find(',');
    std::size_t c2 = c1 == std::string::npos ? std::string::npos
                                             : line.find(',', c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos ||
        line.find(',', c2 + 1) != std::string::npos)
      fail("expected 3 comma-separated fields");
    Row r;
    r.line = line_no;
    r.train = line.substr(0, c1);
    r.eval = line.substr(c1 + 1, c2 - c1 - 1);
    std::string score_text = line.substr(c2 + 1);
    try {
      std::size_t used = 0;
      r.score = std::stod(score_text, &used);
      if (used != score_text.size()) throw std::invalid_argument("");
    } catch (const std::exception&) {
      fail("bad score '" + score_text + "'");
    }
    if (!(r.score >= 0.0 && r.score <= 1.0))
      fail("score " + score_text + " outside [0, 1]");
    for (const auto& n : split_names(r.train)) names.insert(n);
    for (const auto& n : split_names(r.eval)) names.insert(n);
    rows.push_back(std::move(r));
  }
  if (!header_seen)
    throw config_error(path.string() + ": missing header row");
  if (rows.empty())
    throw config_error(path.string() + ": no data rows");

  ScoreMatrix m;
  m.kind = kind;
  m.universe = ModalityUniverse({names.begin(), names.end()});
  for (const auto& r : rows) {
    line_no = r.line;
    ModalitySet mt, me;
    try {
      mt = m.universe.parse(r.train);
      me = m.universe.parse(r.eval);
    } catch (const std::exception& e) {
      fail(e.what());
    }
    if (m.get(mt, me)) fail("duplicate cell (" + r.train + ", " + r.eval + ")");
    m.set(mt, me, r.score);
  }
  return m;
}

}  // namespace modrobe
