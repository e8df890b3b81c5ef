#include "hptk/config_file.hpp"

#include <fstream>
#include <sstream>

namespace hptk {

namespace {
std::string strip(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}
}  // namespace

ConfigFile ConfigFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

ConfigFile ConfigFile::parse(const std::string& text) {
  ConfigFile cf;
  std::istringstream in(text);
  std::string line;
  Index line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = strip(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(line_no) +
                        " is not a key = value pair");
    }
    std::string key = strip(line.substr(0, eq));
    std::string value = strip(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config: empty key on line " + std::to_string(line_no));
    }
    cf.values_[key] = value;
  }
  return cf;
}

bool ConfigFile::has(const std::string& key) const { return values_.count(key) != 0; }

std::string ConfigFile::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: missing key '" + key + "'");
  return it->second;
}

std::string ConfigFile::get_string(const std::string& key,
                                   const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

Index ConfigFile::get_index(const std::string& key) const {
  const std::string s = get_string(key);
  try {
    size_t pos = 0;
    Index v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' is not an integer: " + s);
  }
}

Index ConfigFile::get_index(const std::string& key, Index fallback) const {
  return has(key) ? get_index(key) : fallback;
}

double ConfigFile::get_double(const std::string& key) const {
  const std::string s = get_string(key);
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' is not a number: " + s);
  }
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

ModelConfig model_config_from_file(const ConfigFile& file) {
  ModelConfig c;
  c.layer_pattern = pattern_from_string(file.get_string("layer_pattern"));
  c.d_e = file.get_index("d_e");
  c.d_ffn = file.get_index("d_ffn");
  c.m_h = file.get_index("m_h");
  c.m_d = file.get_index("m_d");
  c.g = file.get_index("g");
  c.d_s = file.get_index("d_s");
  c.n_att_heads = file.get_index("n_att_heads");
  c.vocab = file.get_index("vocab");
  c.conv_k = file.get_index("conv_k", 4);
  c.d_att = file.get_index("d_att", 0);
  if (file.has("n_layers") && file.get_index("n_layers") != c.n_layers()) {
    throw ConfigError("config: n_layers disagrees with layer_pattern length");
  }
  c.validate();
  return c;
}

KDConfig kd_config_from_file(const ConfigFile& file, const KDConfig& defaults) {
  KDConfig kd = defaults;
  kd.tau = file.get_double("tau", kd.tau);
  kd.lr_start = file.get_double("lr_start", kd.lr_start);
  kd.lr_end = file.get_double("lr_end", kd.lr_end);
  kd.warmup_steps = file.get_index("warmup_steps", kd.warmup_steps);
  kd.total_steps = file.get_index("total_steps", kd.total_steps);
  kd.batch_size = file.get_index("batch_size", kd.batch_size);
  kd.seq_len = file.get_index("seq_len", kd.seq_len);
  kd.seed = static_cast<std::uint64_t>(file.get_index("seed", static_cast<Index>(kd.seed)));
  kd.validate();
  return kd;
}

}  // namespace hptk
