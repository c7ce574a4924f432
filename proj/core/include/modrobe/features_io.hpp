#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "modrobe/data.hpp"

namespace modrobe {

/// Declares what a feature file must contain: one pre-pooled vector per
/// modality per example, plus the task the labels encode.
struct FeatureManifest {
  std::vector<std::string> modalities;
  std::vector<std::size_t> dims;  // per modality
  TaskKind task = TaskKind::single_label;
  std::size_t num_classes = 0;

  void validate() const;
};

/// CSV feature file: header `example_id,label,<modality>_<dim_index>...`
/// with modalities in manifest order. Single-label rows carry the class
/// index; multi-label rows a ';'-joined list of positive class indices
/// (possibly empty). Ingested examples carry one token row per modality.
Dataset ingest_feature_csv(const std::filesystem::path& path,
                           const FeatureManifest& manifest);
void export_feature_csv(const Dataset& d, const FeatureManifest& manifest,
                        const std::filesystem::path& path);

/// Binary alternative: magic "MMFD", u32 version=1, manifest echo, then
/// length-prefixed example records with little-endian 32-bit floats.
Dataset ingest_feature_mmfd(const std::filesystem::path& path,
                            const FeatureManifest& manifest);
void export_feature_mmfd(const Dataset& d, const FeatureManifest& manifest,
                         const std::filesystem::path& path);

/// Mean over token rows, per modality — the pooling used when exporting
/// token datasets as feature files.
MultimodalExample pool_example(const MultimodalExample& x);
Dataset pool_dataset(const Dataset& d);

/// Manifest JSON file with a "files" map (pretrain/train/eval/selfdist ->
/// feature file path, each optional); builds a bundle whose examples carry
/// one token per modality. Format chosen by extension: .csv or .mmfd.
DatasetBundle ingest_features(const std::filesystem::path& manifest_path);

}  // namespace modrobe
