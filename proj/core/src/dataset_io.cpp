#include "hetseg/dataset_io.hpp"

#include <algorithm>
#include <fstream>

#include "hetseg/error.hpp"
#include "hetseg/tensor_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace hetseg {

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kMaskSuffix = ".mask.bin";

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("'" + path.string() + "': " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
}

std::vector<std::int64_t> shape_field(const json& sidecar, const char* key, const fs::path& where) {
  if (!sidecar.contains(key) || !sidecar[key].is_array()) {
    throw DataError("'" + where.string() + "': missing array '" + key + "'");
  }
  auto shape = sidecar[key].get<std::vector<std::int64_t>>();
  if (shape.size() != 3 || std::any_of(shape.begin(), shape.end(), [](auto d) { return d < 1; })) {
    throw DataError("'" + where.string() + "': '" + key + "' must be three positive extents");
  }
  return shape;
}

}  // namespace

json to_json(const DomainSpec& spec) {
  return {{"name", spec.name},
          {"channels", spec.channels},
          {"height", spec.height},
          {"width", spec.width},
          {"num_classes", spec.num_classes}};
}

DomainSpec domain_spec_from_json(const json& j) {
  DomainSpec spec;
  spec.name = j.at("name").get<std::string>();
  spec.channels = j.at("channels").get<std::int64_t>();
  spec.height = j.at("height").get<std::int64_t>();
  spec.width = j.at("width").get<std::int64_t>();
  spec.num_classes = j.value("num_classes", std::int64_t{2});
  return spec;
}

std::pair<fs::path, fs::path> save_sample(const Sample& sample, const fs::path& root) {
  if (sample.name.empty()) throw DataError("sample without a name cannot be saved");
  if (!sample.image.defined() || sample.image.dim() != 3) {
    throw DataError("sample '" + sample.name + "': image must be a [C,H,W] tensor");
  }
  fs::create_directories(root);
  const auto bin = root / (sample.name + ".bin");
  const auto sidecar_path = root / (sample.name + ".json");
  write_tensor_file(bin, sample.image);

  json sidecar;
  sidecar["shape"] = sample.image.sizes().vec();
  sidecar["patient_id"] = sample.patient_id;
  sidecar["domain"] = sample.domain;
  if (sample.mask) {
    const auto mask_name = sample.name + kMaskSuffix;
    write_tensor_file(root / mask_name, *sample.mask);
    sidecar["mask"] = mask_name;
    sidecar["mask_shape"] = sample.mask->sizes().vec();
  } else {
    sidecar["mask"] = nullptr;
  }
  sidecar["pseudo"] = sample.pseudo.has_value();
  if (sample.pseudo) {
    sidecar["threshold"] = sample.pseudo->threshold;
    sidecar["coverage"] = sample.pseudo->coverage;
  }
  write_json_file(sidecar_path, sidecar);
  return {bin, sidecar_path};
}

Sample load_sample(const fs::path& sidecar_path) {
  const auto sidecar = read_json_file(sidecar_path);
  const auto root = sidecar_path.parent_path();
  Sample sample;
  sample.name = sidecar_path.stem().string();
  try {
    sample.patient_id = sidecar.at("patient_id").get<std::string>();
    sample.domain = sidecar.at("domain").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError("'" + sidecar_path.string() + "': " + e.what());
  }
  sample.image = read_tensor_file(root / (sample.name + ".bin"), shape_field(sidecar, "shape", sidecar_path));
  if (sidecar.contains("mask") && !sidecar["mask"].is_null()) {
    std::vector<std::int64_t> mask_shape;
    if (sidecar.contains("mask_shape")) {
      mask_shape = shape_field(sidecar, "mask_shape", sidecar_path);
    } else {
      const auto& s = sample.image.sizes();
      mask_shape = {2, s[1], s[2]};
    }
    sample.mask = read_tensor_file(root / sidecar["mask"].get<std::string>(), mask_shape);
  }
  if (sidecar.value("pseudo", false)) {
    sample.pseudo = PseudoLabelInfo{sidecar.value("threshold", 0.0), sidecar.value("coverage", 0.0)};
  }
  return sample;
}

void save_dataset(const Dataset& dataset, const fs::path& root) {
  fs::create_directories(root);
  json names = json::array();
  for (const auto& sample : dataset) {
    save_sample(sample, root);
    names.push_back(sample.name);
  }
  json manifest{{"format_version", kDatasetFormatVersion},
                {"domain", to_json(dataset.spec())},
                {"samples", names}};
  write_json_file(root / kManifest, manifest);
}

Dataset load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("dataset root '" + root.string() + "' is not a directory");
  std::vector<fs::path> sidecars;
  for (const auto& entry : fs::directory_iterator(root)) {
    const auto& p = entry.path();
    if (entry.is_regular_file() && p.extension() == ".json" && p.filename() != kManifest) {
      sidecars.push_back(p);
    }
  }
  std::sort(sidecars.begin(), sidecars.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });

  std::vector<Sample> samples;
  samples.reserve(sidecars.size());
  for (const auto& p : sidecars) samples.push_back(load_sample(p));

  DomainSpec spec;
  const auto manifest_path = root / kManifest;
  if (fs::exists(manifest_path)) {
    const auto manifest = read_json_file(manifest_path);
    try {
      spec = domain_spec_from_json(manifest.at("domain"));
    } catch (const json::exception& e) {
      throw DataError("'" + manifest_path.string() + "': " + e.what());
    }
  } else if (!samples.empty()) {
    const auto& first = samples.front();
    spec.name = first.domain;
    spec.channels = first.image.size(0);
    spec.height = first.image.size(1);
    spec.width = first.image.size(2);
    spec.num_classes = first.mask ? first.mask->size(0) : 2;
  } else {
    throw DataError("dataset root '" + root.string() + "' has neither samples nor a manifest");
  }
  return Dataset(std::move(spec), std::move(samples));
}

}  // namespace hetseg
