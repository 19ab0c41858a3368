#include "hetseg/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "hetseg/error.hpp"

namespace hetseg {

namespace {

std::int64_t element_count(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void swap_words_if_big_endian(std::vector<char>& bytes) {
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i + 4 <= bytes.size(); i += 4) {
      std::swap(bytes[i], bytes[i + 3]);
      std::swap(bytes[i + 1], bytes[i + 2]);
    }
  }
}

}  // namespace

void write_f32_le(std::ostream& out, const torch::Tensor& tensor) {
  auto flat = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  std::vector<char> bytes(static_cast<std::size_t>(flat.numel()) * sizeof(float));
  std::memcpy(bytes.data(), flat.data_ptr<float>(), bytes.size());
  swap_words_if_big_endian(bytes);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

torch::Tensor read_f32_le(std::istream& in, const std::vector<std::int64_t>& shape) {
  const auto count = element_count(shape);
  std::vector<char> bytes(static_cast<std::size_t>(count) * sizeof(float));
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw DataError("short read: expected " + std::to_string(count) + " float32 values");
  }
  swap_words_if_big_endian(bytes);
  auto tensor = torch::empty(shape, torch::kFloat32);
  std::memcpy(tensor.data_ptr<float>(), bytes.data(), bytes.size());
  return tensor;
}

void write_tensor_file(const std::filesystem::path& path, const torch::Tensor& tensor) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  write_f32_le(out, tensor);
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

torch::Tensor read_tensor_file(const std::filesystem::path& path, const std::vector<std::int64_t>& shape) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw DataError("cannot stat '" + path.string() + "': " + ec.message());
  const auto expected = static_cast<std::uintmax_t>(element_count(shape)) * sizeof(float);
  if (size != expected) {
    throw DataError("'" + path.string() + "' holds " + std::to_string(size) + " bytes but its sidecar declares " +
                    std::to_string(element_count(shape)) + " float32 values (" + std::to_string(expected) + " bytes)");
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return read_f32_le(in, shape);
}

std::uint64_t tensor_hash(const torch::Tensor& tensor, std::uint64_t seed) {
  auto flat = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  const auto* bytes = reinterpret_cast<const unsigned char*>(flat.data_ptr<float>());
  std::uint64_t h = seed;
  for (std::int64_t i = 0; i < flat.numel() * static_cast<std::int64_t>(sizeof(float)); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace hetseg
