#include "hptk/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace hptk {

namespace {

using ordered_json = nlohmann::ordered_json;

void append_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t read_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

ordered_json config_json(const ModelConfig& c) {
  ordered_json j;
  j["layer_pattern"] = pattern_to_string(c.layer_pattern);
  j["d_e"] = c.d_e;
  j["d_ffn"] = c.d_ffn;
  j["m_h"] = c.m_h;
  j["m_d"] = c.m_d;
  j["g"] = c.g;
  j["d_s"] = c.d_s;
  j["n_att_heads"] = c.n_att_heads;
  j["vocab"] = c.vocab;
  j["conv_k"] = c.conv_k;
  j["d_att"] = c.d_att;  // 0 means "same as d_e"
  return j;
}

ModelConfig config_from(const ordered_json& j) {
  ModelConfig c;
  c.layer_pattern = pattern_from_string(j.at("layer_pattern").get<std::string>());
  c.d_e = j.at("d_e").get<Index>();
  c.d_ffn = j.at("d_ffn").get<Index>();
  c.m_h = j.at("m_h").get<Index>();
  c.m_d = j.at("m_d").get<Index>();
  c.g = j.at("g").get<Index>();
  c.d_s = j.at("d_s").get<Index>();
  c.n_att_heads = j.at("n_att_heads").get<Index>();
  c.vocab = j.at("vocab").get<Index>();
  c.conv_k = j.at("conv_k").get<Index>();
  c.d_att = j.value("d_att", Index{0});
  c.validate();
  return c;
}

/// Zero-weight model with the exact tensor shapes of this config.
HybridModel model_skeleton(const ModelConfig& config) {
  HybridModel m = init_model(config, 0);
  for (auto& [name, t] : named_tensors(m)) {
    t->set_values(Array::Zero(t->numel()));
  }
  return m;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& config) {
  return config_json(config).dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  try {
    return config_from(ordered_json::parse(text));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("model config: invalid JSON: ") + e.what());
  }
}

void write_checkpoint(const std::string& path, const HybridModel& model) {
  auto tensors = named_tensors(model);
  ordered_json header;
  header["format"] = "hptk.ckpt";
  header["version"] = 1;
  header["config"] = config_json(model.config);
  ordered_json dir;
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    ordered_json entry;
    entry["dtype"] = "f64";
    entry["shape"] = t->shape();
    entry["offset"] = offset;
    std::uint64_t bytes = static_cast<std::uint64_t>(t->numel()) * 8;
    entry["length"] = bytes;
    dir[name] = entry;
    offset += bytes;
  }
  header["tensors"] = dir;
  const std::string header_text = header.dump();

  std::string blob;
  blob.reserve(8 + header_text.size() + offset);
  append_u64_le(blob, header_text.size());
  blob += header_text;
  for (const auto& [name, t] : tensors) {
    // Payloads are little-endian f64; assumes a little-endian host.
    static_assert(sizeof(double) == 8);
    const char* raw = reinterpret_cast<const char*>(t->values().data());
    blob.append(raw, static_cast<size_t>(t->numel()) * 8);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("write_checkpoint: cannot open " + path);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw IoError("write_checkpoint: short write to " + path);
}

HybridModel read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_checkpoint: cannot open " + path);
  std::string blob((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  if (blob.size() < 8) throw IoError("read_checkpoint: truncated file " + path);
  const std::uint64_t header_len =
      read_u64_le(reinterpret_cast<const unsigned char*>(blob.data()));
  if (8 + header_len > blob.size()) {
    throw IoError("read_checkpoint: header length exceeds file size");
  }
  ordered_json header;
  try {
    header = ordered_json::parse(blob.substr(8, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("read_checkpoint: invalid header JSON: ") + e.what());
  }
  if (header.value("format", "") != "hptk.ckpt") {
    throw IoError("read_checkpoint: not an hptk checkpoint");
  }
  ModelConfig config = config_from(header.at("config"));
  HybridModel model = model_skeleton(config);
  const size_t payload_base = 8 + header_len;
  const auto& dir = header.at("tensors");
  for (auto& [name, t] : named_tensors(model)) {
    if (!dir.contains(name)) {
      throw IoError("read_checkpoint: missing tensor " + name);
    }
    const auto& entry = dir.at(name);
    if (entry.value("dtype", "") != "f64") {
      throw IoError("read_checkpoint: tensor " + name + " has unsupported dtype");
    }
    std::vector<Index> shape = entry.at("shape").get<std::vector<Index>>();
    if (shape != t->shape()) {
      throw IoError("read_checkpoint: tensor " + name + " shape mismatch");
    }
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    const std::uint64_t length = entry.at("length").get<std::uint64_t>();
    if (length != static_cast<std::uint64_t>(t->numel()) * 8 ||
        payload_base + offset + length > blob.size()) {
      throw IoError("read_checkpoint: tensor " + name + " payload out of bounds");
    }
    Array values(t->numel());
    std::memcpy(values.data(), blob.data() + payload_base + offset,
                static_cast<size_t>(length));
    t->set_values(values);
  }
  return model;
}

}  // namespace hptk
