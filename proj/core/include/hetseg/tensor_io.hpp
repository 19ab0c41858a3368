#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace hetseg {

/// Writes `tensor` as contiguous little-endian IEEE-754 float32 values in row-major order.
void write_f32_le(std::ostream& out, const torch::Tensor& tensor);

/// Reads exactly `shape` worth of little-endian float32 values. Throws DataError on a short read.
torch::Tensor read_f32_le(std::istream& in, const std::vector<std::int64_t>& shape);

void write_tensor_file(const std::filesystem::path& path, const torch::Tensor& tensor);

/// Throws DataError naming `path` when its size disagrees with `shape`.
torch::Tensor read_tensor_file(const std::filesystem::path& path, const std::vector<std::int64_t>& shape);

/// FNV-1a over the float32 bytes of `tensor`.
std::uint64_t tensor_hash(const torch::Tensor& tensor, std::uint64_t seed = 1469598103934665603ULL);

}  // namespace hetseg
