#pragma once

// Binary checkpoint of a continual run.
//
// Layout (all integers and reals little-endian; matrices row-major, each
// preceded by u64 rows and u64 cols):
//
//   "ANYSSRCK"  u32 version  u32 reserved
//   u64 dim  u64 task_count  f64 lambda
//   u64 encoder_seed  u64 pipeline_seed  u64 stream_seed  u64 adapter_seed
//   u64 config_bytes  <config JSON>
//   R  Q  W
//   u64 columns  i32 column_task[columns]
//   u64 phases  u64 phases_done  i32 phase_task[phases]
//   accuracy: u64 k, then k*k cells of (u8 present, f64 value)
//   routing:  u64 phases, then per phase u64 n and f64[n]
//   bank:     u64 adapters, then per adapter
//             i32 task  u64 rank  u64 first_layer  u64 layers
//             and per layer B_in A_in B_out A_out
//   "CKPTEND!"

#include <cstdint>
#include <filesystem>
#include <stdexcept>

#include "anyssr/config.hpp"
#include "anyssr/harness.hpp"

namespace anyssr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
  enum class Kind { kIo, kCorruptHeader, kVersionMismatch, kShapeMismatch };

  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

private:
  Kind kind_;
};

struct Checkpoint {
  RunConfig config;
  ContinualRun run;
};

/// Writes to a temporary sibling and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const RunConfig& config, const ContinualRun& run);

/// Validates magic, version and every shape field before building any state.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace anyssr

namespace anyssr {

/// Task stream artifact (JSON): spec, seed, and every split of every task.
void save_stream(const std::filesystem::path& path, const TaskStream& stream);
TaskStream load_stream(const std::filesystem::path& path);

}  // namespace anyssr
