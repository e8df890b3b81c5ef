#ifndef HPTK_MODEL_HPP
#define HPTK_MODEL_HPP

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "hptk/ops.hpp"
#include "hptk/ssm.hpp"
#include "hptk/tensor.hpp"

namespace hptk {

enum class LayerKind { Mamba, Attention, Ffn };

char layer_kind_char(LayerKind k);
std::string layer_kind_name(LayerKind k);
std::vector<LayerKind> pattern_from_string(const std::string& s);
std::string pattern_to_string(const std::vector<LayerKind>& pattern);

struct ModelConfig {
  std::vector<LayerKind> layer_pattern;
  Index d_e = 0;
  Index d_ffn = 0;
  Index m_h = 0;   // Mamba heads
  Index m_d = 0;   // channels per head
  Index g = 1;     // Mamba groups sharing one B/C block
  Index d_s = 0;   // SSM state dimension
  Index n_att_heads = 1;
  Index vocab = 0;
  Index conv_k = 4;
  // Attention inner width. 0 means "same as d_e"; embedding pruning keeps
  // this fixed so head geometry and score scaling survive the trim.
  Index d_att = 0;

  Index n_layers() const { return static_cast<Index>(layer_pattern.size()); }
  Index mamba_inner() const { return m_h * m_d; }
  Index heads_per_group() const { return m_h / g; }
  Index attention_width() const { return d_att > 0 ? d_att : d_e; }
  void validate() const;  // throws ConfigError on broken invariants

  bool operator==(const ModelConfig&) const = default;
};

struct MambaLayerWeights {
  Index d_e = 0, m_h = 0, m_d = 0, g = 1, d_s = 0, conv_k = 1;
  Tensor norm_scale;                  // [d_e]
  Tensor w_z, w_x;                    // [d_e, m_h*m_d]
  Tensor w_b, w_c;                    // [d_e, g*d_s]
  Tensor w_dt;                        // [d_e, m_h]
  Tensor dt_bias;                     // [m_h]
  Tensor a_log;                       // [m_h]; transition rate A = -exp(a_log)
  Tensor d;                           // [m_h]
  Tensor conv_x_kernel, conv_x_bias;  // [conv_k, m_h*m_d], [m_h*m_d]
  Tensor conv_b_kernel, conv_b_bias;  // [conv_k, g*d_s], [g*d_s]
  Tensor conv_c_kernel, conv_c_bias;  // [conv_k, g*d_s], [g*d_s]
  Tensor gate_norm_scale;             // [m_h*m_d]
  Tensor w_o;                         // [m_h*m_d, d_e]

  Index inner() const { return m_h * m_d; }
};

struct AttentionWeights {
  Index d_e = 0, d_att = 0, n_heads = 1;
  Tensor norm_scale;        // [d_e]
  Tensor w_q, w_k, w_v;     // [d_e, d_att]
  Tensor w_o;               // [d_att, d_e]
};

struct FfnWeights {
  Index d_e = 0, d_ffn = 0;
  Tensor norm_scale;  // [d_e]
  Tensor w_1;         // [d_ffn, d_e], row i belongs to neuron i
  Tensor w_2;         // [d_e, d_ffn]
};

using LayerWeights = std::variant<MambaLayerWeights, AttentionWeights, FfnWeights>;
LayerKind layer_kind(const LayerWeights& layer);

struct HybridModel {
  ModelConfig config;
  Tensor embedding;  // [vocab, d_e]
  std::vector<LayerWeights> layers;
  Tensor final_norm_scale;  // [d_e]
  Tensor unembedding;       // [d_e, vocab]
};

/// Raw activations captured during a forward pass for the importance module.
struct LayerTrace {
  Array norm_out;   // [L, d_e]   input-norm output (all kinds)
  Array x_proj;     // [L, inner] Mamba W_x activation, pre-conv
  Array gate_out;   // [L, inner] Mamba gated-norm output (input to w_o)
  Array ffn_pre;    // [L, d_ffn] pre-activation
  Array ffn_act;    // [L, d_ffn] post-activation (input to w_2)
  Array att_heads;  // [L, d_e]   concatenated head outputs (input to w_o)
};
struct ForwardTrace {
  std::vector<LayerTrace> layers;
  Array final_norm_out;  // [L, d_e]
};

Tensor mamba_forward(const MambaLayerWeights& w, const Tensor& x,
                     LayerTrace* trace = nullptr);
Tensor attention_forward(const AttentionWeights& w, const Tensor& x,
                         LayerTrace* trace = nullptr);
Tensor ffn_forward(const FfnWeights& w, const Tensor& x, LayerTrace* trace = nullptr);

/// Pre-norm residual stack: embed -> blocks in pattern order -> final norm ->
/// unembed. `skip_layer` >= 0 drops that block (identity residual path).
Tensor model_forward(const HybridModel& model, const std::vector<Index>& tokens,
                     ForwardTrace* trace = nullptr, Index skip_layer = -1);

/// Exact learnable-parameter count of an instantiated model with this config.
Index param_count(const ModelConfig& config);

HybridModel init_model(const ModelConfig& config, std::uint64_t seed);
HybridModel clone_model(const HybridModel& model);
void set_requires_grad(HybridModel& model, bool flag);

/// Canonical tensor enumeration (init, checkpoint, and optimizer order).
std::vector<std::pair<std::string, Tensor*>> named_tensors(HybridModel& model);
std::vector<std::pair<std::string, const Tensor*>> named_tensors(const HybridModel& model);

/// FNV-1a over every tensor payload in canonical order.
std::uint64_t model_checksum(const HybridModel& model);

}  // namespace hptk

#endif
