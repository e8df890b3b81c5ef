#include "hptk/model.hpp"

#include <cmath>
#include <cstring>

namespace hptk {

char layer_kind_char(LayerKind k) {
  switch (k) {
    case LayerKind::Mamba: return 'M';
    case LayerKind::Attention: return 'A';
    case LayerKind::Ffn: return 'F';
  }
  return '?';
}

std::string layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Mamba: return "mamba";
    case LayerKind::Attention: return "attention";
    case LayerKind::Ffn: return "ffn";
  }
  return "?";
}

std::vector<LayerKind> pattern_from_string(const std::string& s) {
  std::vector<LayerKind> out;
  for (char c : s) {
    switch (c) {
      case 'M': case 'm': out.push_back(LayerKind::Mamba); break;
      case 'A': case 'a': out.push_back(LayerKind::Attention); break;
      case 'F': case 'f': out.push_back(LayerKind::Ffn); break;
      case ',': case ' ': break;
      default:
        throw ConfigError(std::string("layer_pattern: unknown layer kind '") + c + "'");
    }
  }
  return out;
}

std::string pattern_to_string(const std::vector<LayerKind>& pattern) {
  std::string s;
  for (LayerKind k : pattern) s.push_back(layer_kind_char(k));
  return s;
}

void ModelConfig::validate() const {
  if (layer_pattern.empty()) throw ConfigError("config: layer_pattern is empty");
  if (d_e < 1 || d_ffn < 1 || m_h < 1 || m_d < 1 || g < 1 || d_s < 1 ||
      n_att_heads < 1 || vocab < 2 || conv_k < 1) {
    throw ConfigError("config: all dimensions must be positive (vocab >= 2)");
  }
  if (m_h % g != 0) {
    throw ConfigError("config: m_h (" + std::to_string(m_h) +
                      ") must be divisible by g (" + std::to_string(g) + ")");
  }
  if (attention_width() % n_att_heads != 0) {
    throw ConfigError("config: attention width (" + std::to_string(attention_width()) +
                      ") must be divisible by n_att_heads (" +
                      std::to_string(n_att_heads) + ")");
  }
}

LayerKind layer_kind(const LayerWeights& layer) {
  if (std::holds_alternative<MambaLayerWeights>(layer)) return LayerKind::Mamba;
  if (std::holds_alternative<AttentionWeights>(layer)) return LayerKind::Attention;
  return LayerKind::Ffn;
}

Tensor mamba_forward(const MambaLayerWeights& w, const Tensor& x, LayerTrace* trace) {
  const Index L = x.dim(0);
  const Index inner = w.inner();
  Tensor ln = rms_norm(x, w.norm_scale);
  Tensor z = matmul(ln, w.w_z);
  Tensor xp = matmul(ln, w.w_x);
  Tensor bp = matmul(ln, w.w_b);
  Tensor cp = matmul(ln, w.w_c);
  Tensor dt = add_row(matmul(ln, w.w_dt), w.dt_bias);
  Tensor xh = conv1d_causal(xp, w.conv_x_kernel, w.conv_x_bias);
  Tensor bh = conv1d_causal(bp, w.conv_b_kernel, w.conv_b_bias);
  Tensor ch = conv1d_causal(cp, w.conv_c_kernel, w.conv_c_bias);
  Tensor a = scale(exp(w.a_log), -1.0);
  Tensor y = ssm_scan(reshape(xh, {L, w.m_h, w.m_d}), reshape(bh, {L, w.g, w.d_s}),
                      reshape(ch, {L, w.g, w.d_s}), a, w.d, dt);
  Tensor gated = mul(rms_norm(reshape(y, {L, inner}), w.gate_norm_scale), silu(z));
  Tensor out = matmul(gated, w.w_o);
  if (trace) {
    trace->norm_out = ln.values();
    trace->x_proj = xp.values();
    trace->gate_out = gated.values();
  }
  return out;
}

Tensor attention_forward(const AttentionWeights& w, const Tensor& x, LayerTrace* trace) {
  const Index hd = w.d_att / w.n_heads;
  Tensor ln = rms_norm(x, w.norm_scale);
  Tensor q = matmul(ln, w.w_q);
  Tensor k = matmul(ln, w.w_k);
  Tensor v = matmul(ln, w.w_v);
  std::vector<Tensor> heads;
  heads.reserve(static_cast<size_t>(w.n_heads));
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (Index h = 0; h < w.n_heads; ++h) {
    Tensor qh = slice_cols(q, h * hd, hd);
    Tensor kh = slice_cols(k, h * hd, hd);
    Tensor vh = slice_cols(v, h * hd, hd);
    Tensor probs = causal_softmax(matmul(qh, transpose(kh)), scale);
    heads.push_back(matmul(probs, vh));
  }
  Tensor att = concat_cols(heads);
  Tensor out = matmul(att, w.w_o);
  if (trace) {
    trace->norm_out = ln.values();
    trace->att_heads = att.values();
  }
  return out;
}

Tensor ffn_forward(const FfnWeights& w, const Tensor& x, LayerTrace* trace) {
  Tensor ln = rms_norm(x, w.norm_scale);
  Tensor pre = matmul(ln, transpose(w.w_1));
  Tensor act = relu_squared(pre);
  Tensor out = matmul(act, transpose(w.w_2));
  if (trace) {
    trace->norm_out = ln.values();
    trace->ffn_pre = pre.values();
    trace->ffn_act = act.values();
  }
  return out;
}

Tensor model_forward(const HybridModel& model, const std::vector<Index>& tokens,
                     ForwardTrace* trace, Index skip_layer) {
  if (tokens.empty()) throw InputError("model_forward: empty token sequence");
  Tensor x = gather_rows(model.embedding, tokens);
  if (trace) trace->layers.assign(model.layers.size(), LayerTrace{});
  for (size_t i = 0; i < model.layers.size(); ++i) {
    if (static_cast<Index>(i) == skip_layer) continue;
    LayerTrace* lt = trace ? &trace->layers[i] : nullptr;
    const LayerWeights& layer = model.layers[i];
    Tensor delta;
    switch (layer_kind(layer)) {
      case LayerKind::Mamba:
        delta = mamba_forward(std::get<MambaLayerWeights>(layer), x, lt);
        break;
      case LayerKind::Attention:
        delta = attention_forward(std::get<AttentionWeights>(layer), x, lt);
        break;
      case LayerKind::Ffn:
        delta = ffn_forward(std::get<FfnWeights>(layer), x, lt);
        break;
    }
    x = add(x, delta);
  }
  Tensor h = rms_norm(x, model.final_norm_scale);
  if (trace) trace->final_norm_out = h.values();
  return matmul(h, model.unembedding);
}

Index param_count(const ModelConfig& c) {
  c.validate();
  const Index inner = c.mamba_inner();
  const Index gds = c.g * c.d_s;
  Index total = c.vocab * c.d_e;  // embedding
  for (LayerKind k : c.layer_pattern) {
    switch (k) {
      case LayerKind::Mamba:
        total += c.d_e;                       // norm_scale
        total += 2 * c.d_e * inner;           // w_z, w_x
        total += 2 * c.d_e * gds;             // w_b, w_c
        total += c.d_e * c.m_h;               // w_dt
        total += 3 * c.m_h;                   // dt_bias, a_log, d
        total += c.conv_k * inner + inner;    // conv_x kernel+bias
        total += 2 * (c.conv_k * gds + gds);  // conv_b, conv_c kernel+bias
        total += inner;                       // gate_norm_scale
        total += inner * c.d_e;               // w_o
        break;
      case LayerKind::Attention:
        total += c.d_e + 4 * c.d_e * c.attention_width();
        break;
      case LayerKind::Ffn:
        total += c.d_e + 2 * c.d_ffn * c.d_e;
        break;
    }
  }
  total += c.d_e;            // final norm
  total += c.d_e * c.vocab;  // unembedding (untied)
  return total;
}

namespace {

Tensor randn_tensor(std::vector<Index> shape, Rng& rng, double stddev) {
  Index n = detail::shape_numel(shape);
  Array v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.normal(0.0, stddev);
  return Tensor::from_array(std::move(shape), std::move(v));
}

Tensor gamma_tensor(Index width) {
  return Tensor::full({width}, init_gamma_for_width(width));
}

MambaLayerWeights init_mamba_layer(const ModelConfig& c, Rng& rng) {
  MambaLayerWeights w;
  w.d_e = c.d_e;
  w.m_h = c.m_h;
  w.m_d = c.m_d;
  w.g = c.g;
  w.d_s = c.d_s;
  w.conv_k = c.conv_k;
  const Index inner = c.mamba_inner();
  const Index gds = c.g * c.d_s;
  const double in_std = 1.0 / std::sqrt(static_cast<double>(c.d_e));
  const double conv_std = 1.0 / std::sqrt(static_cast<double>(c.conv_k));
  w.norm_scale = gamma_tensor(c.d_e);
  w.w_z = randn_tensor({c.d_e, inner}, rng, in_std);
  w.w_x = randn_tensor({c.d_e, inner}, rng, in_std);
  w.w_b = randn_tensor({c.d_e, gds}, rng, in_std);
  w.w_c = randn_tensor({c.d_e, gds}, rng, in_std);
  w.w_dt = randn_tensor({c.d_e, c.m_h}, rng, in_std);
  // softplus(dt_bias) lands in [1e-3, 1e-1], the usual Mamba2 step range.
  {
    Array v(c.m_h);
    for (Index i = 0; i < c.m_h; ++i) {
      double target = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
      v[i] = std::log(std::expm1(target));
    }
    w.dt_bias = Tensor::from_array({c.m_h}, std::move(v));
  }
  {
    Array v(c.m_h);
    for (Index i = 0; i < c.m_h; ++i) v[i] = std::log(rng.uniform(1.0, 8.0));
    w.a_log = Tensor::from_array({c.m_h}, std::move(v));
  }
  w.d = Tensor::full({c.m_h}, 1.0);
  w.conv_x_kernel = randn_tensor({c.conv_k, inner}, rng, conv_std);
  w.conv_x_bias = Tensor::zeros({inner});
  w.conv_b_kernel = randn_tensor({c.conv_k, gds}, rng, conv_std);
  w.conv_b_bias = Tensor::zeros({gds});
  w.conv_c_kernel = randn_tensor({c.conv_k, gds}, rng, conv_std);
  w.conv_c_bias = Tensor::zeros({gds});
  w.gate_norm_scale = gamma_tensor(inner);
  w.w_o = randn_tensor({inner, c.d_e}, rng, 1.0 / std::sqrt(static_cast<double>(inner)));
  return w;
}

AttentionWeights init_attention_layer(const ModelConfig& c, Rng& rng) {
  AttentionWeights w;
  w.d_e = c.d_e;
  w.d_att = c.attention_width();
  w.n_heads = c.n_att_heads;
  const double std = 1.0 / std::sqrt(static_cast<double>(c.d_e));
  w.norm_scale = gamma_tensor(c.d_e);
  w.w_q = randn_tensor({c.d_e, w.d_att}, rng, std);
  w.w_k = randn_tensor({c.d_e, w.d_att}, rng, std);
  w.w_v = randn_tensor({c.d_e, w.d_att}, rng, std);
  w.w_o = randn_tensor({w.d_att, c.d_e}, rng,
                       1.0 / std::sqrt(static_cast<double>(w.d_att)));
  return w;
}

FfnWeights init_ffn_layer(const ModelConfig& c, Rng& rng) {
  FfnWeights w;
  w.d_e = c.d_e;
  w.d_ffn = c.d_ffn;
  w.norm_scale = gamma_tensor(c.d_e);
  w.w_1 = randn_tensor({c.d_ffn, c.d_e}, rng, 1.0 / std::sqrt(static_cast<double>(c.d_e)));
  w.w_2 = randn_tensor({c.d_e, c.d_ffn}, rng, 1.0 / std::sqrt(static_cast<double>(c.d_ffn)));
  return w;
}

}  // namespace

HybridModel init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  HybridModel m;
  m.config = config;
  m.embedding = randn_tensor({config.vocab, config.d_e}, rng, 1.0);
  m.layers.reserve(config.layer_pattern.size());
  for (LayerKind k : config.layer_pattern) {
    switch (k) {
      case LayerKind::Mamba: m.layers.emplace_back(init_mamba_layer(config, rng)); break;
      case LayerKind::Attention:
        m.layers.emplace_back(init_attention_layer(config, rng));
        break;
      case LayerKind::Ffn: m.layers.emplace_back(init_ffn_layer(config, rng)); break;
    }
  }
  m.final_norm_scale = gamma_tensor(config.d_e);
  m.unembedding =
      randn_tensor({config.d_e, config.vocab}, rng, 1.0 / std::sqrt(static_cast<double>(config.d_e)));
  return m;
}

namespace {

template <typename ModelT, typename TensorPtr>
void enumerate_tensors(ModelT& model,
                       std::vector<std::pair<std::string, TensorPtr>>& out) {
  out.emplace_back("embedding", &model.embedding);
  for (size_t i = 0; i < model.layers.size(); ++i) {
    std::string prefix = "layers." + std::to_string(i) + ".";
    auto& layer = model.layers[i];
    if (auto* mw = std::get_if<MambaLayerWeights>(&layer)) {
      prefix += "mamba.";
      out.emplace_back(prefix + "norm_scale", &mw->norm_scale);
      out.emplace_back(prefix + "w_z", &mw->w_z);
      out.emplace_back(prefix + "w_x", &mw->w_x);
      out.emplace_back(prefix + "w_b", &mw->w_b);
      out.emplace_back(prefix + "w_c", &mw->w_c);
      out.emplace_back(prefix + "w_dt", &mw->w_dt);
      out.emplace_back(prefix + "dt_bias", &mw->dt_bias);
      out.emplace_back(prefix + "a_log", &mw->a_log);
      out.emplace_back(prefix + "d", &mw->d);
      out.emplace_back(prefix + "conv_x_kernel", &mw->conv_x_kernel);
      out.emplace_back(prefix + "conv_x_bias", &mw->conv_x_bias);
      out.emplace_back(prefix + "conv_b_kernel", &mw->conv_b_kernel);
      out.emplace_back(prefix + "conv_b_bias", &mw->conv_b_bias);
      out.emplace_back(prefix + "conv_c_kernel", &mw->conv_c_kernel);
      out.emplace_back(prefix + "conv_c_bias", &mw->conv_c_bias);
      out.emplace_back(prefix + "gate_norm_scale", &mw->gate_norm_scale);
      out.emplace_back(prefix + "w_o", &mw->w_o);
    } else if (auto* aw = std::get_if<AttentionWeights>(&layer)) {
      prefix += "attention.";
      out.emplace_back(prefix + "norm_scale", &aw->norm_scale);
      out.emplace_back(prefix + "w_q", &aw->w_q);
      out.emplace_back(prefix + "w_k", &aw->w_k);
      out.emplace_back(prefix + "w_v", &aw->w_v);
      out.emplace_back(prefix + "w_o", &aw->w_o);
    } else {
      auto* fw = std::get_if<FfnWeights>(&layer);
      prefix += "ffn.";
      out.emplace_back(prefix + "norm_scale", &fw->norm_scale);
      out.emplace_back(prefix + "w_1", &fw->w_1);
      out.emplace_back(prefix + "w_2", &fw->w_2);
    }
  }
  out.emplace_back("final_norm", &model.final_norm_scale);
  out.emplace_back("unembedding", &model.unembedding);
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> named_tensors(HybridModel& model) {
  std::vector<std::pair<std::string, Tensor*>> out;
  enumerate_tensors(model, out);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> named_tensors(const HybridModel& model) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  enumerate_tensors(model, out);
  return out;
}

HybridModel clone_model(const HybridModel& model) {
  HybridModel copy = model;  // copies variant structure, shares tensor nodes
  auto src = named_tensors(model);
  auto dst = named_tensors(copy);
  for (size_t i = 0; i < src.size(); ++i) *dst[i].second = src[i].second->clone();
  return copy;
}

void set_requires_grad(HybridModel& model, bool flag) {
  for (auto& [name, t] : named_tensors(model)) t->set_requires_grad(flag);
}

std::uint64_t model_checksum(const HybridModel& model) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, t] : named_tensors(model)) {
    mix(name.data(), name.size());
    mix(t->values().data(), sizeof(double) * static_cast<size_t>(t->numel()));
  }
  return h;
}

}  // namespace hptk
