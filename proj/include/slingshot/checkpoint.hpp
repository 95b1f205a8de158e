#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "slingshot/params.hpp"

namespace slingshot {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Minibatch order position: generator state as text plus the current epoch's
// permutation and cursor.
struct DataOrderState {
  std::string rng;
  std::vector<std::uint64_t> permutation;
  std::uint64_t cursor = 0;
  std::uint64_t epoch = 0;
  friend bool operator==(const DataOrderState&, const DataOrderState&) = default;
};

struct Checkpoint {
  std::uint64_t step = 0;
  nlohmann::ordered_json config;  // resolved run settings
  std::string precision;
  FlatView view;
  std::vector<double> params;
  std::vector<double> initial_params;
  std::uint64_t optimizer_t = 0;
  std::vector<double> m;
  std::vector<double> v;
  DataOrderState order;
};

// Layout: "SLNG", u32 version, u32 section count, then per section a 4-byte
// tag, a u64 byte length and the payload. Tags: MANI (manifest JSON), PARM and
// INIT (little-endian f64), OPTM (optimizer state), RNGS (data order).
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError with the byte offset of the first inconsistency.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

// Written to a sibling temporary and renamed into place.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace slingshot
