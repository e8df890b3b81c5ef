#ifndef HPTK_CONFIG_FILE_HPP
#define HPTK_CONFIG_FILE_HPP

#include <map>
#include <string>

#include "hptk/distiller.hpp"
#include "hptk/model.hpp"

namespace hptk {

/// Flat key/value config file: one `key = value` per line, `#` comments.
class ConfigFile {
 public:
  static ConfigFile load(const std::string& path);
  static ConfigFile parse(const std::string& text);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  Index get_index(const std::string& key) const;
  Index get_index(const std::string& key, Index fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;

 private:
  std::map<std::string, std::string> values_;
};

/// Keys: layer_pattern (e.g. MAFMAF), d_e, d_ffn, m_h, m_d, g, d_s,
/// n_att_heads, vocab, conv_k, optional d_att and n_layers (cross-checked).
ModelConfig model_config_from_file(const ConfigFile& file);

/// Keys: tau, lr_start, lr_end, warmup_steps, total_steps, batch_size,
/// seq_len, seed. Missing keys fall back to the supplied defaults.
KDConfig kd_config_from_file(const ConfigFile& file, const KDConfig& defaults = {});

}  // namespace hptk

#endif
