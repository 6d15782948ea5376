#pragma once

// Binary checkpoint and feature-file formats. All integers and floats are
// little-endian.
//
// Checkpoint: "ALOC", u32 version, u32 metadata length + UTF-8 key=value
// lines, u32 tensor count, then per tensor: u16 name length + name, u8 rank,
// u32 dims, u8 dtype (0 = f32), raw payload.
//
// Feature file: "ALFT", u32 version, u32 width, u32 height, u32 N, u32 D,
// N x 2 f32 positions, N f32 confidences, N x D f32 descriptors.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "asymloc/features.hpp"

namespace asymloc {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kFeatureFileVersion = 1;

struct Checkpoint {
  Model<float> model;
  std::map<std::string, std::string> metadata;  ///< model.* keys are filled from the spec on save
  std::vector<NamedTensor> extra;               ///< optimizer state and the like
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_features(const KeypointSet& ks);
KeypointSet decode_features(std::span<const std::uint8_t> bytes);
void save_features(const KeypointSet& ks, const std::filesystem::path& path);
KeypointSet load_features(const std::filesystem::path& path);

struct MapEntry {
  std::string id;
  std::string feature_path;  ///< relative to the manifest's directory
  int width = 0;
  int height = 0;
  friend bool operator==(const MapEntry&, const MapEntry&) = default;
};

/// One line per image: id, relative path, width, height; tab-separated.
void save_map_manifest(const std::vector<MapEntry>& entries, const std::filesystem::path& path);
std::vector<MapEntry> load_map_manifest(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames into place.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace asymloc
