#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "hemf/data.hpp"
#include "hemf/online.hpp"

namespace hemf {

inline constexpr std::uint32_t kCheckpointSchema = 1;

/// Container layout: "HEMFCKPT", u32 schema version, then sections of
/// [u32 tag][u64 byte length][payload], then a u32 CRC-32 of everything before it.
/// Numbers are stored little-endian with doubles as raw IEEE-754 bits.
struct Checkpoint {
  ModelState model;
  CounterRng rng;
  std::uint64_t cursor = 0;  // sweeps or chunks consumed

  struct Online {
    SparseRatings absorbed;
    std::vector<std::uint8_t> user_seen;
    std::vector<std::uint8_t> item_seen;
    std::vector<SufficientStats> user_stats;
    std::vector<SufficientStats> item_stats;
  };
  std::optional<Online> online;

  struct Ids {
    IdMap users;
    IdMap items;
  };
  std::optional<Ids> ids;
};

Checkpoint checkpoint_of(const OnlineState& state);
/// Throws DataError when the checkpoint holds no streaming section.
OnlineState online_state_of(const Checkpoint& ckpt);

/// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws DataError on a bad magic, checksum mismatch, truncation or an unsupported
/// schema version. Nothing is returned unless the whole file validates.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

}  // namespace hemf
