#include "modrobe/scores.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "modrobe/model.hpp"

namespace modrobe {

double mean_average_precision(
    const Tensor<double>& scores,
    const std::vector<std::vector<std::uint8_t>>& labels) {
  if (scores.rank() != 2)
    throw std::invalid_argument("mean_average_precision: scores must be NxC");
  std::size_t n = scores.rows(), c = scores.cols();
  if (labels.size() != n)
    throw std::invalid_argument("mean_average_precision: " +
                                std::to_string(labels.size()) +
                                " label rows for " + std::to_string(n) +
                                " score rows");
  for (const auto& row : labels)
    if (row.size() != c)
      throw std::invalid_argument("mean_average_precision: label width "
                                  "mismatch");
  double ap_sum = 0.0;
  std::size_t classes_with_positives = 0;
  std::vector<std::size_t> order(n);
  for (std::size_t cls = 0; cls < c; ++cls) {
    std::size_t positives = 0;
    for (std::size_t i = 0; i < n; ++i) positives += labels[i][cls];
    if (positives == 0) continue;  // excluded from the mean
    ++classes_with_positives;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) {
                       return scores.at(a, cls) > scores.at(b, cls);
                     });
    double ap = 0.0;
    std::size_t hits = 0;
    for (std::size_t rank = 0; rank < n; ++rank) {
      if (labels[order[rank]][cls]) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
      }
    }
    ap_sum += ap / static_cast<double>(positives);
  }
  if (classes_with_positives == 0)
    throw std::invalid_argument(
        "mean_average_precision: no positive labels in any class");
  return ap_sum / static_cast<double>(classes_with_positives);
}

double top1_accuracy(const Tensor<double>& scores,
                     const std::vector<int>& labels) {
  if (scores.rank() != 2 || scores.rows() != labels.size())
    throw std::invalid_argument("top1_accuracy: shape mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < scores.cols(); ++j)
      if (scores.at(i, j) > scores.at(i, best)) best = j;
    if (static_cast<int>(best) == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(scores.rows());
}

Tensor<double> eval_scores(const ModelCheckpoint& ckpt, const Dataset& eval_set,
                           ModalitySet me) {
  if (eval_set.size() == 0)
    throw std::invalid_argument("evaluate: empty evaluation set");
  ModelDims dims = ModelDims::from_meta(ckpt.meta);
  if (me.empty() || !me.subset_of(dims.universe.full()))
    throw std::invalid_argument("evaluate: bad evaluation modality set");
  auto params = cast_params<double>(ckpt.params);
  Tensor<double> out({eval_set.size(), dims.num_classes});
  const std::size_t chunk = 256;  // fixed so results never depend on callers
  for (std::size_t begin = 0; begin < eval_set.size(); begin += chunk) {
    std::size_t end = std::min(begin + chunk, eval_set.size());
    std::vector<MultimodalExample> restricted;
    restricted.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i)
      restricted.push_back(restrict_example(eval_set.examples[i], me));
    std::vector<const MultimodalExample*> batch;
    for (const auto& x : restricted) batch.push_back(&x);
    Graph<double> g;
    ModelGraph<double> mg = register_params(g, dims, params, {}, {});
    NodeId logits = build_forward(mg, batch, me);
    const Tensor<double>& L = g.value(logits);
    for (std::size_t i = 0; i < L.rows(); ++i)
      for (std::size_t j = 0; j < L.cols(); ++j)
        out.at(begin + i, j) = L.at(i, j);
  }
  return out;
}

double evaluate(const ModelCheckpoint& ckpt, const Dataset& eval_set,
                ModalitySet me) {
  Tensor<double> scores = eval_scores(ckpt, eval_set, me);
  TaskKind task = parse_task_kind(ckpt.meta.task);
  if (task == TaskKind::single_label) {
    std::vector<int> labels(eval_set.size());
    for (std::size_t i = 0; i < eval_set.size(); ++i) {
      const auto& lab = eval_set.examples[i].label;
      if (!lab || lab->cls < 0)
        throw std::runtime_error("evaluate: missing label at example " +
                                 std::to_string(i));
      labels[i] = lab->cls;
    }
    return top1_accuracy(scores, labels);
  }
  std::vector<std::vector<std::uint8_t>> labels(eval_set.size());
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    const auto& lab = eval_set.examples[i].label;
    if (!lab || lab->flags.size() != ckpt.meta.num_classes)
      throw std::runtime_error("evaluate: missing label at example " +
                               std::to_string(i));
    labels[i] = lab->flags;
  }
  return mean_average_precision(scores, labels);
}

}  // namespace modrobe
