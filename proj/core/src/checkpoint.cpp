#include "hetseg/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "hetseg/error.hpp"
#include "hetseg/tensor_io.hpp"

namespace fs = std::filesystem;

namespace hetseg {

namespace {

constexpr std::array<char, 8> kMagic{'H', 'S', 'C', 'K', 'P', 'T', '0', '1'};

std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : module.named_parameters(true)) out.emplace_back(item.key(), item.value());
  for (const auto& item : module.named_buffers(true)) out.emplace_back(item.key(), item.value());
  return out;
}

void write_u64_le(std::ostream& out, std::uint64_t v) {
  std::array<char, 8> bytes{};
  for (int i = 0; i < 8; ++i) bytes[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), 8);
}

std::uint64_t read_u64_le(std::istream& in) {
  std::array<unsigned char, 8> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | bytes[static_cast<std::size_t>(i)];
  return v;
}

nlohmann::json read_header_json(std::istream& in, const fs::path& path) {
  std::array<char, 8> magic{};
  in.read(magic.data(), 8);
  if (!in || magic != kMagic) throw DataError("'" + path.string() + "' is not a checkpoint archive");
  const auto length = read_u64_le(in);
  if (!in || length > (std::uint64_t{1} << 30)) throw DataError("'" + path.string() + "': corrupt header length");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw DataError("'" + path.string() + "': truncated header");
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("'" + path.string() + "': " + e.what());
  }
}

CheckpointHeader header_from_json(const nlohmann::json& j) {
  CheckpointHeader h;
  h.kind = j.value("kind", std::string{});
  h.iteration = j.value("iteration", std::int64_t{0});
  h.config = j.value("config", nlohmann::json::object());
  return h;
}

}  // namespace

void save_checkpoint(const fs::path& path, const torch::nn::Module& module, const CheckpointHeader& header) {
  const auto state = named_state(module);
  nlohmann::json j;
  j["kind"] = header.kind;
  j["iteration"] = header.iteration;
  j["config"] = header.config;
  j["tensors"] = nlohmann::json::array();
  for (const auto& [name, tensor] : state) j["tensors"].push_back({{"name", name}, {"shape", tensor.sizes().vec()}});
  const auto text = j.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(kMagic.data(), kMagic.size());
  write_u64_le(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, tensor] : state) write_f32_le(out, tensor);
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

CheckpointHeader read_checkpoint_header(const fs::path& path) {
  if (!fs::exists(path)) throw MissingStageError("checkpoint '" + path.string() + "' missing");
  std::ifstream in(path, std::ios::binary);
  return header_from_json(read_header_json(in, path));
}

CheckpointHeader load_checkpoint(const fs::path& path, torch::nn::Module& module) {
  if (!fs::exists(path)) throw MissingStageError("checkpoint '" + path.string() + "' missing");
  std::ifstream in(path, std::ios::binary);
  const auto j = read_header_json(in, path);
  auto state = named_state(module);
  const auto& tensors = j.at("tensors");
  if (tensors.size() != state.size()) {
    throw DataError("'" + path.string() + "' stores " + std::to_string(tensors.size()) + " tensors, model has " +
                    std::to_string(state.size()));
  }
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < state.size(); ++i) {
    auto& [name, target] = state[i];
    const auto stored_name = tensors[i].at("name").get<std::string>();
    const auto shape = tensors[i].at("shape").get<std::vector<std::int64_t>>();
    if (stored_name != name || c10::IntArrayRef(shape) != target.sizes()) {
      throw DataError("'" + path.string() + "': tensor '" + stored_name + "' does not match model tensor '" + name + "'");
    }
    auto values = read_f32_le(in, shape);
    target.copy_(values.to(target.dtype()));
  }
  return header_from_json(j);
}

std::uint64_t parameter_checksum(const torch::nn::Module& module) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, tensor] : named_state(module)) h = tensor_hash(tensor, h);
  return h;
}

void copy_state(const torch::nn::Module& from, torch::nn::Module& to) {
  auto src = named_state(from);
  auto dst = named_state(to);
  TORCH_CHECK(src.size() == dst.size(), "copy_state: architectures differ");
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].second.copy_(src[i].second);
}

}  // namespace hetseg
