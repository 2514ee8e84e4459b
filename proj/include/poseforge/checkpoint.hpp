#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "poseforge/nn.hpp"

namespace poseforge {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named tensors plus free-form metadata.
///
/// On disk: "PFCK", u32 version, u32 metadata count, metadata entries
/// (u32 length + bytes for key and value), u32 block count, blocks
/// (u32 name length, name, u32 rank, u64 dims, f64 values), then a u32
/// CRC-32 of everything before it. All integers and reals little-endian.
struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, Tensor>> blocks;

  void add(const std::string& name, const Tensor& t) { blocks.emplace_back(name, t.detach()); }
  void add_all(const ParamList& params);
  [[nodiscard]] const Tensor* find(const std::string& name) const;
  /// Metadata value; throws StateError naming the key when absent.
  [[nodiscard]] const std::string& meta(const std::string& key) const;
};

/// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws StateError when the file is missing, DataError when it is
/// truncated, has the wrong magic or version, or fails the checksum.
[[nodiscard]] Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies every block whose name appears in `params` into that tensor.
/// Missing blocks or shape differences throw StateError.
void restore(const Checkpoint& ckpt, const ParamList& params);

}  // namespace poseforge
