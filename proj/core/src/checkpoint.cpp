#include "herdkit/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace herdkit {

namespace {

constexpr char kMagic[4] = {'H', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void write_checkpoint(Model<float>& model, const std::string& path) {
  std::vector<NamedTensor<float>> tensors = all_tensors(model);
  nlohmann::json manifest;
  manifest["format"] = "herdkit-checkpoint";
  manifest["arch_id"] = to_string(model.arch_id);
  manifest["init_seed"] = model.init_seed;
  {
    std::vector<long> counts;
    for (const BnLayer<float>& bn : model.bns) counts.push_back(bn.update_count);
    manifest["bn_update_counts"] = counts;
  }
  uint64_t offset = 0;  // in elements, from the start of the payload
  nlohmann::json tensor_list = nlohmann::json::array();
  for (const NamedTensor<float>& t : tensors) {
    tensor_list.push_back({{"name", t.name},
                           {"shape", t.shape},
                           {"dtype", "float32"},
                           {"offset", offset},
                           {"count", t.data->size()}});
    offset += t.data->size();
  }
  manifest["tensors"] = std::move(tensor_list);
  const std::string manifest_text = manifest.dump();

  // Write to a temp file and rename so an interrupted save never leaves a
  // plausible-looking partial checkpoint behind.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open '" + tmp + "'");
    out.write(kMagic, 4);
    const uint32_t version = kVersion;
    out.write(reinterpret_cast<const char*>(&version), 4);
    const uint64_t manifest_len = manifest_text.size();
    out.write(reinterpret_cast<const char*>(&manifest_len), 8);
    out.write(manifest_text.data(), std::streamsize(manifest_text.size()));
    for (const NamedTensor<float>& t : tensors) {
      out.write(reinterpret_cast<const char*>(t.data->data()),
                std::streamsize(t.data->size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("save_checkpoint: cannot rename '" + tmp + "' to '" + path + "'");
  }
}

}  // namespace

void save_checkpoint(const Model<float>& model, const std::string& path) {
  Model<float> copy = model;  // all_tensors needs mutable access
  write_checkpoint(copy, path);
}

void save_checkpoint(const Model<double>& model, const std::string& path) {
  Model<float> copy = cast_model<float>(model);
  write_checkpoint(copy, path);
}

Model<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open '" + path + "'");
  const uint64_t file_size = static_cast<uint64_t>(in.tellg());
  in.seekg(0);

  char magic[4];
  uint32_t version = 0;
  uint64_t manifest_len = 0;
  if (file_size < 16 || !in.read(magic, 4) ||
      !in.read(reinterpret_cast<char*>(&version), 4) ||
      !in.read(reinterpret_cast<char*>(&manifest_len), 8)) {
    throw std::runtime_error("load_checkpoint: '" + path + "' is truncated");
  }
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("load_checkpoint: '" + path + "' is not a herdkit checkpoint");
  }
  if (version != kVersion) {
    throw std::runtime_error("load_checkpoint: unsupported format version " +
                             std::to_string(version));
  }
  if (16 + manifest_len > file_size) {
    throw std::runtime_error("load_checkpoint: '" + path + "' is truncated (manifest)");
  }
  std::string manifest_text(manifest_len, '\0');
  if (!in.read(manifest_text.data(), std::streamsize(manifest_len))) {
    throw std::runtime_error("load_checkpoint: '" + path + "' is truncated (manifest)");
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_checkpoint: bad manifest in '" + path + "': " + e.what());
  }

  Model<float> model;
  try {
    model.arch_id = arch_id_from_string(manifest.at("arch_id").get<std::string>());
    model.init_seed = manifest.at("init_seed").get<uint64_t>();
    // Build parameter storage with architecture shapes, then fill below.
    Model<float> fresh = init_model<float>(model.arch_id, 0);
    model.convs = std::move(fresh.convs);
    model.bns = std::move(fresh.bns);
    const std::vector<long> counts = manifest.at("bn_update_counts").get<std::vector<long>>();
    if (counts.size() != model.bns.size()) {
      throw std::runtime_error("bn_update_counts length mismatch");
    }
    for (size_t k = 0; k < counts.size(); ++k) model.bns[k].update_count = counts[k];
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_checkpoint: bad manifest in '" + path + "': " + e.what());
  }

  std::vector<NamedTensor<float>> tensors = all_tensors(model);
  const nlohmann::json& tensor_list = manifest.at("tensors");
  if (tensor_list.size() != tensors.size()) {
    throw std::runtime_error("load_checkpoint: manifest lists " +
                             std::to_string(tensor_list.size()) + " tensors, expected " +
                             std::to_string(tensors.size()));
  }
  uint64_t payload_elems = 0;
  for (size_t k = 0; k < tensors.size(); ++k) {
    const nlohmann::json& entry = tensor_list[k];
    if (entry.at("name").get<std::string>() != tensors[k].name ||
        entry.at("dtype").get<std::string>() != "float32" ||
        entry.at("offset").get<uint64_t>() != payload_elems ||
        entry.at("count").get<uint64_t>() != tensors[k].data->size()) {
      throw std::runtime_error("load_checkpoint: manifest entry '" + tensors[k].name +
                               "' disagrees with the architecture");
    }
    payload_elems += tensors[k].data->size();
  }
  const uint64_t expected = 16 + manifest_len + payload_elems * sizeof(float);
  if (file_size != expected) {
    throw std::runtime_error("load_checkpoint: '" + path + "' payload length " +
                             std::to_string(file_size - 16 - manifest_len) + " bytes, manifest promises " +
                             std::to_string(payload_elems * sizeof(float)));
  }
  for (NamedTensor<float>& t : tensors) {
    if (!in.read(reinterpret_cast<char*>(t.data->data()),
                 std::streamsize(t.data->size() * sizeof(float)))) {
      throw std::runtime_error("load_checkpoint: '" + path + "' is truncated (payload)");
    }
  }
  return model;
}

}  // namespace herdkit
