#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

namespace hetseg {

/// Single-file model archive:
///   8 bytes   magic "HSCKPT01"
///   8 bytes   little-endian u64 length L of the JSON header
///   L bytes   UTF-8 JSON {"kind", "iteration", "config", "tensors": [{"name","shape"}...]}
///   payload   each tensor in header order as little-endian float32, row-major
/// Parameters and buffers are both stored; the layout per tensor matches the sample format.
struct CheckpointHeader {
  std::string kind;
  std::int64_t iteration = 0;
  nlohmann::json config;
};

void save_checkpoint(const std::filesystem::path& path, const torch::nn::Module& module,
                     const CheckpointHeader& header);

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path);

/// Copies stored tensors into `module`, which must have exactly the stored names and shapes.
/// Returns the header. Throws DataError on any mismatch, MissingStageError if absent.
CheckpointHeader load_checkpoint(const std::filesystem::path& path, torch::nn::Module& module);

/// Order-sensitive hash over every parameter and buffer value.
std::uint64_t parameter_checksum(const torch::nn::Module& module);

/// Deep copy of parameter and buffer values from `from` into `to` (same architecture).
void copy_state(const torch::nn::Module& from, torch::nn::Module& to);

}  // namespace hetseg
