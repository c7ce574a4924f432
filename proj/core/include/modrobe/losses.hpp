#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "modrobe/data.hpp"
#include "modrobe/graph.hpp"
#include "modrobe/model.hpp"

namespace modrobe {

struct ContrastiveConfig {
  double temperature = 0.07;
  bool normalize = true;
};

struct MasdConfig {
  double lambda = 0.5;
  // soft-target temperature; 1 leaves teacher logits untouched
  double distill_temperature = 1.0;
};

/// Symmetric batch-contrastive loss between two aligned embedding batches:
/// cross-entropy of row-softmax(Za Zb^T / tau) against the diagonal, averaged
/// over rows and over both directions.
template <typename T>
NodeId infonce_pair(Graph<T>& g, NodeId za, NodeId zb,
                    const ContrastiveConfig& cfg) {
  const Tensor<T>&Za = g.value(za), &Zb = g.value(zb);
  if (Za.rank() != 2 || !Za.same_shape(Zb))
    throw std::invalid_argument("infonce_pair: embeddings must share a BxD "
                                "shape, got " + shape_str(Za.shape()) + " and " +
                                shape_str(Zb.shape()));
  std::size_t B = Za.rows();
  if (B == 0) throw std::invalid_argument("infonce_pair: empty batch");
  if (!(cfg.temperature > 0.0))
    throw std::invalid_argument("infonce_pair: temperature must be positive");
  NodeId a = za, b = zb;
  if (cfg.normalize) {
    a = g.l2_normalize_rows(a);
    b = g.l2_normalize_rows(b);
  }
  NodeId logits = g.scale(g.matmul(a, g.transpose(b)),
                          static_cast<T>(1.0 / cfg.temperature));
  std::vector<std::size_t> diag(B);
  for (std::size_t i = 0; i < B; ++i) diag[i] = i;
  NodeId ce_ab = g.scale(
      g.sum_all(g.take_per_row(g.log_softmax_rows(logits), diag)),
      static_cast<T>(-1.0 / static_cast<double>(B)));
  NodeId ce_ba = g.scale(
      g.sum_all(g.take_per_row(g.log_softmax_rows(g.transpose(logits)), diag)),
      static_cast<T>(-1.0 / static_cast<double>(B)));
  return g.scale(g.add(ce_ab, ce_ba), static_cast<T>(0.5));
}

/// Sum of infonce_pair over all unordered modality pairs, in ascending
/// (i, j) order.
template <typename T>
NodeId contrastive_total(Graph<T>& g, const std::vector<NodeId>& embeddings,
                         const ContrastiveConfig& cfg) {
  if (embeddings.size() < 2)
    throw std::invalid_argument(
        "contrastive_total: need at least 2 modalities, got " +
        std::to_string(embeddings.size()));
  NodeId total = 0;
  bool first = true;
  for (std::size_t i = 0; i < embeddings.size(); ++i)
    for (std::size_t j = i + 1; j < embeddings.size(); ++j) {
      NodeId term = infonce_pair(g, embeddings[i], embeddings[j], cfg);
      total = first ? term : g.add(total, term);
      first = false;
    }
  return total;
}

/// Mean squared error over the masked token rows only. `recon` and `target`
/// are stacked token rows; `masked_rows` indexes into that stacking.
template <typename T>
NodeId mae_term(Graph<T>& g, NodeId recon, NodeId target,
                const std::vector<std::size_t>& masked_rows) {
  if (masked_rows.empty())
    throw std::invalid_argument("mae_term: empty mask");
  NodeId diff = g.sub(g.gather_rows(recon, masked_rows),
                      g.gather_rows(target, masked_rows));
  return g.mean_all(g.mul(diff, diff));
}

/// Masked-reconstruction loss summed over modalities. Each entry pairs a
/// reconstruction node with its target node and mask; modalities with empty
/// masks contribute nothing, but at least one mask must be nonempty.
template <typename T>
struct MaeModalityTerm {
  NodeId recon;
  NodeId target;
  std::vector<std::size_t> masked_rows;
};

template <typename T>
NodeId mae_loss(Graph<T>& g, const std::vector<MaeModalityTerm<T>>& terms) {
  NodeId total = 0;
  bool first = true;
  for (const auto& t : terms) {
    if (t.masked_rows.empty()) continue;
    NodeId term = mae_term(g, t.recon, t.target, t.masked_rows);
    total = first ? term : g.add(total, term);
    first = false;
  }
  if (first)
    throw std::invalid_argument("mae_loss: no masked tokens in any modality");
  return total;
}

/// Single-label softmax cross-entropy against hard class indices.
template <typename T>
NodeId task_loss_single(Graph<T>& g, NodeId logits,
                        const std::vector<int>& labels) {
  const Tensor<T>& L = g.value(logits);
  if (L.rank() != 2 || L.rows() != labels.size())
    throw std::invalid_argument("task_loss: logits " + shape_str(L.shape()) +
                                " do not match " +
                                std::to_string(labels.size()) + " labels");
  std::vector<std::size_t> idx(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= L.cols())
      throw std::invalid_argument("task_loss: label " +
                                  std::to_string(labels[i]) +
                                  " out of range for " +
                                  std::to_string(L.cols()) + " classes");
    idx[i] = static_cast<std::size_t>(labels[i]);
  }
  return g.scale(g.sum_all(g.take_per_row(g.log_softmax_rows(logits), idx)),
                 static_cast<T>(-1.0 / static_cast<double>(labels.size())));
}

/// Per-class binary cross-entropy with logits, averaged over batch*classes.
/// Targets may be hard 0/1 flags or soft probabilities (distillation); both
/// work through the same softplus identity: bce(x, y) = softplus(x) - x*y.
template <typename T>
NodeId task_loss_multi(Graph<T>& g, NodeId logits, NodeId targets) {
  const Tensor<T>&L = g.value(logits), &Y = g.value(targets);
  if (!L.same_shape(Y) || L.rank() != 2)
    throw std::invalid_argument("task_loss: logits " + shape_str(L.shape()) +
                                " do not match targets " +
                                shape_str(Y.shape()));
  return g.mean_all(g.sub(g.softplus(logits), g.mul(logits, targets)));
}

/// Convenience: hard multi-label targets as a constant node.
template <typename T>
Tensor<T> multilabel_targets(const std::vector<const MultimodalExample*>& batch,
                             std::size_t num_classes) {
  Tensor<T> y({batch.size(), num_classes});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!batch[i]->label || batch[i]->label->flags.size() != num_classes)
      throw std::runtime_error("multilabel_targets: bad label at row " +
                               std::to_string(i));
    for (std::size_t c = 0; c < num_classes; ++c)
      y.at(i, c) = static_cast<T>(batch[i]->label->flags[c]);
  }
  return y;
}

/// Dispatch on task kind for labeled batches.
template <typename T>
NodeId task_loss(Graph<T>& g, NodeId logits,
                 const std::vector<const MultimodalExample*>& batch,
                 TaskKind task, std::size_t num_classes) {
  if (task == TaskKind::single_label) {
    std::vector<int> labels(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (!batch[i]->label || batch[i]->label->cls < 0)
        throw std::runtime_error("task_loss: missing label at row " +
                                 std::to_string(i));
      labels[i] = batch[i]->label->cls;
    }
    return task_loss_single(g, logits, labels);
  }
  return task_loss_multi(g, logits,
                         g.constant(multilabel_targets<T>(batch, num_classes)));
}

/// Distillation terms. The teacher node must already be behind a
/// stop_gradient (callers own that), so only the student side backpropagates.
template <typename T>
NodeId distill_single(Graph<T>& g, NodeId student_logits, NodeId teacher_probs) {
  const Tensor<T>& P = g.value(teacher_probs);
  std::size_t B = P.rows();
  return g.scale(
      g.sum_all(g.mul(teacher_probs, g.log_softmax_rows(student_logits))),
      static_cast<T>(-1.0 / static_cast<double>(B)));
}

template <typename T>
NodeId distill_multi(Graph<T>& g, NodeId student_logits, NodeId teacher_probs) {
  // same softplus identity as task_loss_multi, soft targets
  return g.mean_all(g.sub(g.softplus(student_logits),
                          g.mul(student_logits, teacher_probs)));
}

/// The combined objective: task loss on the labeled batch (restricted to
/// M_T) plus lambda times distillation of the teacher f(x|_{M_T}) — behind a
/// stop-gradient — into the student f(x|_{M \ M_T}) on the unlabeled batch.
/// Teacher and student share every parameter. When M_T = M or lambda = 0 the
/// student is undefined/weightless and the term is dropped entirely, which
/// makes the objective coincide with plain fine-tuning.
///
/// The teacher subgraph is built before the task and student subgraphs, so
/// its gradient-free nodes sit in a contiguous id range; replacing them with
/// constants (the stop-gradient oracle) leaves every remaining backward
/// accumulation in the same order — bitwise identical gradients.
template <typename T>
struct MasdLossNodes {
  NodeId total = 0;
  NodeId task = 0;
  NodeId distill = 0;      // only when has_distill
  bool has_distill = false;
};

template <typename T>
MasdLossNodes<T> masd_loss(const ModelGraph<T>& mg,
                           const std::vector<const MultimodalExample*>& batch_t,
                           const std::vector<const MultimodalExample*>& batch_sd,
                           ModalitySet mt, const MasdConfig& cfg,
                           const Tensor<T>* teacher_probs_override = nullptr) {
  Graph<T>& g = *mg.g;
  const ModelDims& dims = *mg.dims;
  ModalitySet full = dims.universe.full();
  if (!mt.subset_of(full) || mt.empty())
    throw std::invalid_argument("masd_loss: bad training modality set");
  ModalitySet rest = full.minus(mt);
  bool with_distill = cfg.lambda > 0.0 && !rest.empty();

  MasdLossNodes<T> out;
  NodeId teacher_ref = 0;
  if (with_distill) {
    if (batch_sd.empty())
      throw std::invalid_argument("masd_loss: empty self-distillation batch");
    for (const auto* x : batch_sd)
      if (!full.subset_of(x->present))
        throw std::runtime_error(
            "masd_loss: self-distillation example missing a modality");
    // teacher first (see header comment)
    NodeId t_logits = build_forward(mg, batch_sd, mt);
    if (cfg.distill_temperature != 1.0)
      t_logits = g.scale(t_logits,
                         static_cast<T>(1.0 / cfg.distill_temperature));
    NodeId t_probs = dims.task == TaskKind::single_label
                         ? g.softmax_rows(t_logits)
                         : g.sigmoid(t_logits);
    teacher_ref = teacher_probs_override != nullptr
                      ? g.constant(*teacher_probs_override)
                      : g.stop_gradient(t_probs);
  }
  out.task = task_loss(g, build_forward(mg, batch_t, mt), batch_t, dims.task,
                       dims.num_classes);
  if (!with_distill) {
    out.total = out.task;
    return out;
  }
  NodeId s_logits = build_forward(mg, batch_sd, rest);
  if (cfg.distill_temperature != 1.0)
    s_logits = g.scale(s_logits, static_cast<T>(1.0 / cfg.distill_temperature));
  out.distill = dims.task == TaskKind::single_label
                    ? distill_single(g, s_logits, teacher_ref)
                    : distill_multi(g, s_logits, teacher_ref);
  out.has_distill = true;
  out.total = g.add(out.task, g.scale(out.distill, static_cast<T>(cfg.lambda)));
  return out;
}

/// Teacher probabilities exactly as masd_loss computes them, for the
/// stop-gradient oracle: run the same kernels in a throwaway graph and hand
/// the values back as a plain tensor.
template <typename T>
Tensor<T> masd_teacher_probs(const ModelDims& dims,
                             const std::map<std::string, Tensor<T>>& params,
                             const std::vector<const MultimodalExample*>& batch_sd,
                             ModalitySet mt, const MasdConfig& cfg) {
  Graph<T> g;
  ModelGraph<T> mg = register_params(g, dims, params, {}, {});
  NodeId logits = build_forward(mg, batch_sd, mt);
  if (cfg.distill_temperature != 1.0)
    logits = g.scale(logits, static_cast<T>(1.0 / cfg.distill_temperature));
  NodeId probs = dims.task == TaskKind::single_label ? g.softmax_rows(logits)
                                                     : g.sigmoid(logits);
  return g.value(probs);
}

}  // namespace modrobe
