#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "modrobe/tensor.hpp"

namespace modrobe {

/// Descriptive metadata carried inside every checkpoint file as JSON.
struct CheckpointMeta {
  std::vector<std::string> modalities;
  std::size_t token_dim = 0;              // 0 when per-modality dims differ
  std::vector<std::size_t> token_dims;    // per modality
  std::vector<std::size_t> tokens_per_modality;
  std::size_t embed_dim = 0;   // d
  std::size_t hidden_dim = 0;  // h
  std::size_t num_classes = 0;
  std::string task = "single_label";
  std::string pretrain_method = "none";   // none | contrastive | mae
  std::string downstream = "none";        // none | probe | finetune | masd | wiseft
  std::string train_set;                  // serialized M_T ("" before downstream)
  std::uint64_t seed = 0;
  std::string precision = "f32";          // dtype of the stored payload
  std::map<std::string, std::string> extra;

  bool operator==(const CheckpointMeta&) const = default;
};

/// Named parameter tensors for the WHOLE model — every modality encoder is
/// always present, whatever subset the checkpoint was trained on, so any
/// evaluation set stays well-defined. Values are held in 64-bit and written
/// back in the precision recorded in meta.
struct ModelCheckpoint {
  CheckpointMeta meta;
  std::map<std::string, Tensor<double>> params;

  bool has_param(const std::string& name) const {
    return params.find(name) != params.end();
  }
  const Tensor<double>& param(const std::string& name) const;

  bool same_params(const ModelCheckpoint& o) const {
    return params == o.params;
  }
};

/// File format "MMRL" v1: magic, u32 version, u32 metadata length + UTF-8
/// JSON metadata, then per-parameter records (u16 name length, name, u8 dtype
/// [0=f32, 1=f64], u8 rank, u32 extents..., little-endian payload) until EOF.
void save_checkpoint(const ModelCheckpoint& ckpt,
                     const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Element-wise alpha*a + (1-alpha)*b over every parameter. Endpoints return
/// the corresponding parent verbatim. Parameter names, shapes and pretrain
/// lineage must agree.
ModelCheckpoint interpolate(const ModelCheckpoint& a, const ModelCheckpoint& b,
                            double alpha);

}  // namespace modrobe
