#pragma once

// Binary model and checkpoint files.
//
// Model file (all integers and floats little-endian):
//   "EMASAMMD" | u32 version | u64 n + n bytes of JSON model config |
//   u64 tensor count | per tensor: u32 n + name, u64 element count, f64 data
// The occlusion embedding is stored as the final tensor.
//
// Checkpoint file: "EMASAMCK" | u32 version | model fingerprint | model path |
//   mode | frames seen | track centre | bank config | occlusion embedding |
//   spatial entries | pointer entries | prototype | evictions.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "emasam/toy_model.hpp"
#include "emasam/toy_train.hpp"

namespace emasam {

inline constexpr std::uint32_t kModelFormatVersion = 1;
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;
inline constexpr std::uint32_t kTrainStateFormatVersion = 1;

std::vector<std::uint8_t> serialize_model(const ToyModel& m);
ToyModel deserialize_model(std::span<const std::uint8_t> bytes);

void save_model(const ToyModel& m, const std::filesystem::path& path);
/// Throws FormatError when the file is missing or does not parse.
ToyModel load_model(const std::filesystem::path& path);

/// FNV-1a 64 of the serialized model.
std::uint64_t model_fingerprint(const ToyModel& m);

struct Checkpoint {
  std::string model_path;
  std::uint64_t model_fingerprint = 0;
  PrototypeMode mode = PrototypeMode::kFull;
  StreamState state;

  bool operator==(const Checkpoint&) const = default;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& c);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws ConfigError when the checkpoint was written against another model.
void check_checkpoint_model(const Checkpoint& c, const ToyModel& m);

/// Training resume file: "EMASAMTS" | u32 version | fingerprint of the model
/// saved with it | epochs done | loss curve | Adam step | Adam moments.
std::vector<std::uint8_t> serialize_train_state(const TrainState& s, std::uint64_t model_fingerprint);
/// Throws ConfigError when the state does not belong to `m`.
TrainState deserialize_train_state(std::span<const std::uint8_t> bytes, const ToyModel& m);

void save_train_state(const TrainState& s, const ToyModel& m, const std::filesystem::path& path);
TrainState load_train_state(const std::filesystem::path& path, const ToyModel& m);

}  // namespace emasam
