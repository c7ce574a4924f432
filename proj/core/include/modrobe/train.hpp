#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "modrobe/checkpoint.hpp"
#include "modrobe/data.hpp"
#include "modrobe/losses.hpp"
#include "modrobe/optim.hpp"

namespace modrobe {

/// Everything a training phase needs to know. Hyperparameters are split per
/// phase because pretraining, probing and fine-tuning want very different
/// learning rates. Seeds: `master_seed` is the run-level seed; the sweep
/// derives one stream per (method, training set) from it, and the trainer
/// functions take that job seed explicitly so callers can share or isolate
/// streams at will.
struct TrainConfig {
  std::string pretrain_method = "contrastive";  // contrastive | mae
  std::int64_t pretrain_epochs = 30;
  std::int64_t downstream_epochs = 20;
  std::int64_t batch = 64;
  double lr_pretrain = 8e-4;
  double lr_probe = 1e-2;
  double lr_finetune = 1e-4;
  double warmup_frac = 0.1;  // fraction of total steps spent warming up
  AdamWHyper adamw;
  ContrastiveConfig contrastive;
  MasdConfig masd;
  double wiseft_alpha = 0.75;
  std::vector<double> mask_ratios;  // per modality; MAE only; default 0.5
  std::uint64_t master_seed = 0;
  std::string precision = "f32";  // f32 | f64

  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;

  void validate(std::size_t n_modalities) const;
  std::vector<double> effective_mask_ratios(std::size_t n_modalities) const;
};

/// Self-supervised pretraining over the bundle's D split: contrastive
/// (pairwise batch InfoNCE summed over modality pairs) or MAE (reconstruct
/// masked token rows from the fused visible views). Deterministic in
/// (bundle, cfg, seed); zero epochs returns the seeded initialization.
ModelCheckpoint pretrain(const DatasetBundle& bundle, const TrainConfig& cfg,
                         std::uint64_t seed);

/// Head-only training on frozen features. Features E(x) over M_T are
/// precomputed once, batch-norm statistics (no affine) are frozen from them,
/// and only head.{w,b} learn. Encoders come through bitwise untouched.
ModelCheckpoint linear_probe(const ModelCheckpoint& backbone, const Dataset& dt,
                             ModalitySet mt, const TrainConfig& cfg,
                             std::uint64_t seed);

/// Fine-tuning: head starts from the probe's weights (and keeps its frozen
/// batch-norm statistics); encoders for M_T and the head update, everything
/// else stays bitwise at its pretrained value.
ModelCheckpoint finetune(const ModelCheckpoint& backbone,
                         const ModelCheckpoint& probe, const Dataset& dt,
                         ModalitySet mt, const TrainConfig& cfg,
                         std::uint64_t seed);

/// MASD: every step combines the task loss on a labeled batch (restricted to
/// M_T) with distillation of the stop-gradient teacher f(x|_{M_T}) into the
/// student f(x|_{M \ M_T}) on an unlabeled batch from D_SD. All encoders may
/// update. With lambda = 0 or M_T = M the distillation term vanishes and the
/// trajectory is bit-identical to finetune under the same seed.
ModelCheckpoint masd_train(const ModelCheckpoint& backbone,
                           const ModelCheckpoint& probe, const Dataset& dt,
                           ModalitySet mt, const Dataset& dsd,
                           const TrainConfig& cfg, std::uint64_t seed);

/// theta_wise = alpha * theta_masd + (1 - alpha) * theta_lp.
ModelCheckpoint wiseft_assemble(const ModelCheckpoint& masd,
                                const ModelCheckpoint& probe, double alpha);

/// Frozen-backbone features E(x) over M_T for every example, in dataset
/// order; the probe trains on exactly these.
Tensor<double> precompute_features(const ModelCheckpoint& backbone,
                                   const Dataset& d, ModalitySet mt);

/// Per-step loss history of the most recent call to any trainer function in
/// this thread — exposed for convergence checks.
const std::vector<double>& last_loss_history();

}  // namespace modrobe
