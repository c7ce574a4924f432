#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "modrobe/modality.hpp"
#include "modrobe/tensor.hpp"

namespace modrobe {

enum class TaskKind { single_label, multi_label };

inline const char* task_kind_name(TaskKind k) {
  return k == TaskKind::single_label ? "single_label" : "multi_label";
}
TaskKind parse_task_kind(const std::string& s);

/// Either a class index (single-label) or a 0/1 flag per class (multi-label).
struct Label {
  int cls = -1;
  std::vector<std::uint8_t> flags;

  bool operator==(const Label&) const = default;
};

/// One aligned example: a token matrix (T_m x token_dim_m) for each modality
/// it carries. Token matrices exist exactly for `present`.
struct MultimodalExample {
  ModalitySet present;
  std::vector<Tensor<float>> tokens;  // indexed by universe index
  std::optional<Label> label;

  const Tensor<float>& tokens_for(std::size_t modality) const;
  bool operator==(const MultimodalExample&) const = default;
};

/// x|_m — keep exactly the token matrices for m, label intact.
MultimodalExample restrict_example(const MultimodalExample& x, ModalitySet m);

struct Dataset {
  std::vector<MultimodalExample> examples;

  std::size_t size() const { return examples.size(); }
  bool operator==(const Dataset&) const = default;
};

Dataset restrict_dataset(const Dataset& d, ModalitySet m);

struct SplitSizes {
  std::int64_t pretrain = 8000;
  std::int64_t train = 1000;
  std::int64_t eval = 2000;
  std::int64_t selfdist = 800;  // drawn from the pretrain split
};

struct GenConfig {
  std::vector<std::string> modalities = {"m0", "m1", "m2"};
  std::int64_t latent_dim = 8;
  std::int64_t token_dim = 16;
  std::vector<std::int64_t> tokens_per_modality = {4, 4, 4};
  std::vector<double> sigma = {0.1, 0.3, 0.5};
  std::int64_t num_classes = 10;
  TaskKind task = TaskKind::single_label;
  bool nonlinear = true;
  SplitSizes sizes;

  ModalityUniverse universe() const { return ModalityUniverse(modalities); }
  void validate() const;  // throws config_error naming the offending field
};

struct DatasetBundle {
  GenConfig config;
  std::uint64_t seed = 0;
  Dataset pretrain;  // unlabeled in spirit; labels kept for convenience
  Dataset train;
  Dataset eval;
  Dataset selfdist;  // subset of pretrain, drawn without replacement

  /// Per-modality token geometry, read from the data itself (ingested
  /// feature bundles may differ from the synthetic config's uniform dims).
  std::vector<std::size_t> token_dims() const;
  std::vector<std::size_t> token_counts() const;
};

/// Synthetic aligned-multimodal data. Every example owns a latent
/// z ~ N(0, I_k); the label is a function of z alone, and token t of
/// modality m is tanh(B_{m,t} z) + noise (tanh skipped when nonlinear=false).
/// The projections B and the label map are fixed per (config, seed), so the
/// whole bundle is a pure function of its arguments.
DatasetBundle generate(const GenConfig& config, std::uint64_t seed);

/// Masked view for reconstruction training: ceil(ratio * T) token rows are
/// chosen uniformly without replacement. Returns the visible tokens in their
/// original order plus the sorted masked index set.
struct MaskedView {
  Tensor<float> visible;
  std::vector<std::size_t> masked;
};
MaskedView mask_view(const Tensor<float>& tokens, double ratio,
                     std::uint64_t seed);

/// How many rows mask_view will mask for a given ratio and row count.
std::size_t mask_count(double ratio, std::size_t rows);

}  // namespace modrobe
