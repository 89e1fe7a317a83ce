#include "msaunet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "msaunet/errors.hpp"

namespace msaunet {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are written in host order");

constexpr const char* kFormat = "msaunet-f64-v1";

std::vector<std::pair<std::string, const Tensor*>> named_tensors(const nn::ParameterTable& table) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (const auto& [name, var] : table.params) out.emplace_back(name, &var.value());
  for (const auto& [name, buffer] : table.buffers) out.emplace_back(name, buffer);
  return out;
}

[[noreturn]] void corrupt(const std::filesystem::path& path, const std::string& why) {
  throw CheckpointError("corrupt checkpoint header in " + path.string() + ": " + why);
}

}  // namespace

const Tensor* CheckpointData::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const MsauNetState& model, const std::string& config_text, std::size_t epoch,
                     const std::filesystem::path& path) {
  const auto tensors = named_tensors(model.parameters());
  nlohmann::ordered_json header;
  header["__metadata__"] = {{"format", kFormat}, {"config", config_text}, {"epoch", std::to_string(epoch)}};
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    const std::size_t bytes = t->size() * sizeof(double);
    header[name] = {{"dtype", "F64"}, {"shape", t->shape()}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  const std::string text = header.dump();
  const std::uint64_t length = text.size();

  if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(&length), sizeof length);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : tensors) {
    out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(double)));
  }
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string bytes = buf.str();

  std::uint64_t length = 0;
  if (bytes.size() < sizeof length) corrupt(path, "file shorter than the length prefix");
  std::memcpy(&length, bytes.data(), sizeof length);
  if (length > bytes.size() - sizeof length) corrupt(path, "header length exceeds file size");
  const std::size_t payload_start = sizeof length + length;

  nlohmann::ordered_json header;
  try {
    header = nlohmann::ordered_json::parse(bytes.begin() + sizeof length, bytes.begin() + payload_start);
  } catch (const nlohmann::json::exception& e) {
    corrupt(path, e.what());
  }
  if (!header.is_object()) corrupt(path, "header is not an object");

  CheckpointData data;
  try {
    for (const auto& [name, entry] : header.items()) {
      if (name == "__metadata__") {
        if (entry.value("format", "") != kFormat) corrupt(path, "unknown format tag");
        data.config_text = entry.at("config").get<std::string>();
        data.epoch = std::stoull(entry.at("epoch").get<std::string>());
        continue;
      }
      if (entry.at("dtype").get<std::string>() != "F64") corrupt(path, "tensor '" + name + "' is not F64");
      const auto shape = entry.at("shape").get<Tensor::Shape>();
      const auto offsets = entry.at("data_offsets").get<std::vector<std::size_t>>();
      const std::size_t count = element_count(shape);
      if (offsets.size() != 2 || offsets[1] < offsets[0] || offsets[1] - offsets[0] != count * sizeof(double) ||
          offsets[1] > bytes.size() - payload_start) {
        corrupt(path, "tensor '" + name + "' has inconsistent offsets");
      }
      Tensor t(shape);
      std::memcpy(t.data(), bytes.data() + payload_start + offsets[0], count * sizeof(double));
      data.tensors.emplace_back(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    corrupt(path, e.what());
  } catch (const std::logic_error& e) {
    corrupt(path, e.what());
  }
  return data;
}

void load_weights(MsauNetState& model, const CheckpointData& data) {
  const nn::ParameterTable table = model.parameters();
  // Check everything before touching the model.
  std::vector<std::pair<Tensor*, const Tensor*>> copies;
  auto stage = [&](const std::string& name, Tensor& dst) {
    const Tensor* src = data.find(name);
    if (!src) throw CheckpointError("checkpoint has no tensor '" + name + "'");
    if (src->shape() != dst.shape()) {
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_string(src->shape()) +
                       ", model expects " + shape_string(dst.shape()));
    }
    copies.emplace_back(&dst, src);
  };
  for (const auto& [name, var] : table.params) {
    ag::Var handle = var;
    stage(name, handle.value());
  }
  for (const auto& [name, buffer] : table.buffers) stage(name, *buffer);
  for (auto [dst, src] : copies) *dst = *src;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  CheckpointData data = read_checkpoint(path);
  LoadedCheckpoint loaded;
  try {
    loaded.config = parse_run_config(data.config_text);
  } catch (const ConfigError& e) {
    throw CheckpointError("checkpoint " + path.string() + " embeds an invalid config: " + e.what());
  }
  loaded.model = build_network(loaded.config.train.model, loaded.config.train.seed);
  load_weights(loaded.model, data);
  loaded.epoch = data.epoch;
  return loaded;
}

}  // namespace msaunet
