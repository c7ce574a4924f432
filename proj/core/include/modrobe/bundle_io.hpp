#pragma once

#include <filesystem>
#include <string>

#include "modrobe/data.hpp"

namespace modrobe {

/// On-disk bundle layout:
///   <dir>/config.json   generator config + seed
///   <dir>/D.mmtb        pretraining split
///   <dir>/D_T.mmtb      downstream training split
///   <dir>/D_E.mmtb      evaluation split
///   <dir>/D_SD.mmtb     self-distillation pool
///   <dir>/hash.txt      content hash of the four split files
///
/// MMTB is a little-endian token container: magic "MMTB", u32 version (1),
/// u32 modality count, per modality a u16-length name plus u32 token count
/// and u32 token dim, u8 task kind, u32 class count, u64 example count, then
/// per example a u32 presence bitmask, a labeled flag with its payload, and
/// the f32 token rows of each present modality in ascending modality order.

std::string serialize_split(const Dataset& d, const GenConfig& config);
void save_split(const Dataset& d, const GenConfig& config,
                const std::filesystem::path& path);
Dataset load_split(const std::filesystem::path& path, const GenConfig& config);

void save_bundle(const DatasetBundle& bundle, const std::filesystem::path& dir);
DatasetBundle load_bundle(const std::filesystem::path& dir);

/// FNV-1a 64 over the bytes of D.mmtb, D_T.mmtb, D_E.mmtb, D_SD.mmtb in that
/// order, rendered as 16 hex digits. The content variant serializes the
/// in-memory splits instead of reading files back and yields the same digest
/// for a bundle that has just been saved.
std::string bundle_hash(const std::filesystem::path& dir);
std::string bundle_content_hash(const DatasetBundle& bundle);

}  // namespace modrobe
