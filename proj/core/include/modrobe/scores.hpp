#pragma once

#include <cstdint>
#include <vector>

#include "modrobe/checkpoint.hpp"
#include "modrobe/data.hpp"
#include "modrobe/modality.hpp"
#include "modrobe/tensor.hpp"

namespace modrobe {

/// Mean average precision for multi-label rankings. Per class: rank by
/// descending score (stable, original index breaks ties), AP = mean of
/// precision-at-rank over the positive ranks. Classes without any positive
/// are excluded from the mean; a matrix with no positives at all is an error.
double mean_average_precision(const Tensor<double>& scores,
                              const std::vector<std::vector<std::uint8_t>>& labels);

/// Top-1 accuracy; argmax ties resolve to the lowest index.
double top1_accuracy(const Tensor<double>& scores,
                     const std::vector<int>& labels);

/// Restrict every example to M_E, forward through the checkpoint, score with
/// mAP (multi-label) or accuracy (single-label). Pure function — no RNG.
double evaluate(const ModelCheckpoint& ckpt, const Dataset& eval_set,
                ModalitySet me);

/// Raw per-example scores for the eval set (class scores row per example),
/// exposed for calibration and debugging.
Tensor<double> eval_scores(const ModelCheckpoint& ckpt, const Dataset& eval_set,
                           ModalitySet me);

}  // namespace modrobe
