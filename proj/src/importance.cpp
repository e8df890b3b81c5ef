#include "hptk/importance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace hptk {

namespace {

using nlohmann::json;

void require_layer(const HybridModel& model, Index layer, LayerKind kind,
                   const char* op) {
  if (layer < 0 || layer >= static_cast<Index>(model.layers.size())) {
    throw UsageError(std::string(op) + ": layer index out of range");
  }
  if (layer_kind(model.layers[static_cast<size_t>(layer)]) != kind) {
    throw UsageError(std::string(op) + ": layer " + std::to_string(layer) +
                     " is not a " + layer_kind_name(kind) + " layer");
  }
}

void require_calib(const CalibSet& calib, const char* op) {
  if (calib.empty()) throw EmptyDataError(std::string(op) + ": calibration set is empty");
}

Array finalize(const MeanL2Stats& stats, Aggregation agg) {
  return agg == Aggregation::MeanThenL2 ? stats.finalize_l2() : stats.finalize_raw_sum();
}

/// Descending stable argsort: ties keep the lower index first.
std::vector<Index> argsort_desc(const Array& scores) {
  std::vector<Index> idx(static_cast<size_t>(scores.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Index a, Index b) { return scores[a] > scores[b]; });
  return idx;
}

json to_json_array(const Array& a) {
  json out = json::array();
  for (Index i = 0; i < a.size(); ++i) out.push_back(a[i]);
  return out;
}

Array array_from_json(const json& j) {
  Array a(static_cast<Index>(j.size()));
  Index i = 0;
  for (const auto& v : j) a[i++] = v.get<double>();
  return a;
}

}  // namespace

Array channel_scores(const Array& s, Index m_h, Index m_d) {
  if (s.size() != m_h * m_d) throw DimensionError("channel_scores: s must be m_h*m_d");
  Array s_d = Array::Zero(m_d);
  for (Index d = 0; d < m_d; ++d) {
    double acc = 0.0;
    for (Index h = 0; h < m_h; ++h) {
      double v = s[h * m_d + d];
      acc += v * v;
    }
    s_d[d] = std::sqrt(acc);
  }
  return s_d;
}

std::vector<Index> select_channels(const Array& s_d, Index k_d) {
  const Index m_d = s_d.size();
  if (k_d < 1 || k_d > m_d) {
    throw ParameterError("select_channels: k_d must be in [1, m_d]");
  }
  auto order = argsort_desc(s_d);
  std::vector<Index> kept(order.begin(), order.begin() + static_cast<size_t>(k_d));
  std::sort(kept.begin(), kept.end());
  return kept;
}

Array head_scores(const Array& s, Index m_h, Index m_d, const std::vector<Index>& d_top) {
  if (s.size() != m_h * m_d) throw DimensionError("head_scores: s must be m_h*m_d");
  if (d_top.empty()) throw UsageError("head_scores: kept channel set is empty");
  Array f = Array::Zero(m_h);
  for (Index h = 0; h < m_h; ++h) {
    double acc = 0.0;
    for (Index d : d_top) {
      if (d < 0 || d >= m_d) throw ParameterError("head_scores: channel index out of range");
      double v = s[h * m_d + d];
      acc += v * v;
    }
    f[h] = std::sqrt(acc);
  }
  return f;
}

MambaScores score_mamba(const HybridModel& model, Index layer, const CalibSet& calib,
                        Index k_d, Aggregation agg) {
  require_layer(model, layer, LayerKind::Mamba, "score_mamba");
  require_calib(calib, "score_mamba");
  const auto& w = std::get<MambaLayerWeights>(model.layers[static_cast<size_t>(layer)]);
  if (k_d <= 0) k_d = w.m_d;
  MeanL2Stats stats;
  for (const TokenSeq& seq : calib) {
    ForwardTrace trace;
    model_forward(model, seq, &trace);
    const Array& act = trace.layers[static_cast<size_t>(layer)].x_proj;
    stats.add_sequence(act, static_cast<Index>(seq.size()), w.inner());
  }
  MambaScores out;
  out.s = finalize(stats, agg);
  out.s_d = channel_scores(out.s, w.m_h, w.m_d);
  out.f_h = head_scores(out.s, w.m_h, w.m_d, select_channels(out.s_d, k_d));
  return out;
}

Array score_ffn(const HybridModel& model, Index layer, const CalibSet& calib,
                Aggregation agg) {
  require_layer(model, layer, LayerKind::Ffn, "score_ffn");
  require_calib(calib, "score_ffn");
  const auto& w = std::get<FfnWeights>(model.layers[static_cast<size_t>(layer)]);
  MeanL2Stats stats;
  for (const TokenSeq& seq : calib) {
    ForwardTrace trace;
    model_forward(model, seq, &trace);
    stats.add_sequence(trace.layers[static_cast<size_t>(layer)].ffn_pre,
                       static_cast<Index>(seq.size()), w.d_ffn);
  }
  return finalize(stats, agg);
}

Array score_embedding(const HybridModel& model, const CalibSet& calib,
                      const EmbeddingSites& sites) {
  require_calib(calib, "score_embedding");
  if (model.layers.empty()) throw UsageError("score_embedding: model has no layers");
  const size_t n = model.layers.size();
  std::vector<MeanL2Stats> per_site(n);
  MeanL2Stats final_site;
  const Index d_e = model.config.d_e;
  for (const TokenSeq& seq : calib) {
    ForwardTrace trace;
    model_forward(model, seq, &trace);
    const Index L = static_cast<Index>(seq.size());
    for (size_t i = 0; i < n; ++i) {
      LayerKind k = layer_kind(model.layers[i]);
      bool use = (k == LayerKind::Mamba && sites.mamba) ||
                 (k == LayerKind::Attention && sites.attention) ||
                 (k == LayerKind::Ffn && sites.ffn);
      if (use) per_site[i].add_sequence(trace.layers[i].norm_out, L, d_e);
    }
    if (sites.final_norm) final_site.add_sequence(trace.final_norm_out, L, d_e);
  }
  Array total = Array::Zero(d_e);
  for (size_t i = 0; i < n; ++i) {
    if (per_site[i].items() > 0) total += per_site[i].finalize_l2();
  }
  if (sites.final_norm) total += final_site.finalize_l2();
  return total;
}

Array score_flap(const HybridModel& model, Index layer, const CalibSet& calib) {
  if (layer < 0 || layer >= static_cast<Index>(model.layers.size())) {
    throw UsageError("score_flap: layer index out of range");
  }
  require_calib(calib, "score_flap");
  const LayerWeights& lw = model.layers[static_cast<size_t>(layer)];
  const LayerKind kind = layer_kind(lw);
  if (kind == LayerKind::Attention) {
    throw UsageError("score_flap: expects a Mamba or FFN layer");
  }
  WelfordStats stats;
  for (const TokenSeq& seq : calib) {
    ForwardTrace trace;
    model_forward(model, seq, &trace);
    const auto& lt = trace.layers[static_cast<size_t>(layer)];
    const Array& feats = kind == LayerKind::Mamba ? lt.gate_out : lt.ffn_act;
    const Index L = static_cast<Index>(seq.size());
    stats.add_rows(feats, L, feats.size() / L);
  }
  Array var = stats.variance();
  if (kind == LayerKind::Mamba) {
    const auto& w = std::get<MambaLayerWeights>(lw);
    Array out(w.inner());
    for (Index j = 0; j < w.inner(); ++j) {
      double sq = w.w_o.values().segment(j * w.d_e, w.d_e).square().sum();
      out[j] = sq * var[j];
    }
    return out;
  }
  const auto& w = std::get<FfnWeights>(lw);
  Array out(w.d_ffn);
  for (Index j = 0; j < w.d_ffn; ++j) {
    double sq = 0.0;
    for (Index i = 0; i < w.d_e; ++i) {
      double v = w.w_2.at(i * w.d_ffn + j);
      sq += v * v;
    }
    out[j] = sq * var[j];
  }
  return out;
}

Array score_attention_heads(const HybridModel& model, Index layer, const CalibSet& calib) {
  require_layer(model, layer, LayerKind::Attention, "score_attention_heads");
  require_calib(calib, "score_attention_heads");
  const auto& w = std::get<AttentionWeights>(model.layers[static_cast<size_t>(layer)]);
  MeanL2Stats stats;
  for (const TokenSeq& seq : calib) {
    ForwardTrace trace;
    model_forward(model, seq, &trace);
    stats.add_sequence(trace.layers[static_cast<size_t>(layer)].att_heads,
                       static_cast<Index>(seq.size()), w.d_att);
  }
  Array per_dim = stats.finalize_l2();
  const Index hd = w.d_att / w.n_heads;
  Array out(w.n_heads);
  for (Index h = 0; h < w.n_heads; ++h) {
    out[h] = std::sqrt(per_dim.segment(h * hd, hd).square().sum());
  }
  return out;
}

Array layer_importance_kld(const HybridModel& model, const CalibSet& calib_subset) {
  require_calib(calib_subset, "layer_importance_kld");
  const Index n_layers = static_cast<Index>(model.layers.size());
  if (n_layers < 2) throw UsageError("layer_importance_kld: needs at least 2 layers");
  const Index V = model.config.vocab;
  Array sums = Array::Zero(n_layers);
  Index positions = 0;
  for (const TokenSeq& seq : calib_subset) {
    Tensor full = model_forward(model, seq);
    const Index L = static_cast<Index>(seq.size());
    positions += L;
    // Full-model log-probs, shift-by-max stable.
    Array full_logp(L * V);
    for (Index t = 0; t < L; ++t) {
      auto row = full.values().segment(t * V, V);
      double m = row.maxCoeff();
      double z = (row - m).exp().sum();
      full_logp.segment(t * V, V) = row - m - std::log(z);
    }
    for (Index skip = 0; skip < n_layers; ++skip) {
      Tensor ablated = model_forward(model, seq, nullptr, skip);
      double acc = 0.0;
      for (Index t = 0; t < L; ++t) {
        auto row = ablated.values().segment(t * V, V);
        double m = row.maxCoeff();
        double z = (row - m).exp().sum();
        auto lpf = full_logp.segment(t * V, V);
        double kl = ((lpf.exp()) * (lpf - (row - m - std::log(z)))).sum();
        acc += std::max(kl, 0.0);
      }
      sums[skip] += acc;
    }
  }
  return sums / static_cast<double>(positions);
}

ScoreSet collect_scores(const HybridModel& model, const CalibSet& calib,
                        const ScoreOptions& options, Index k_d) {
  require_calib(calib, "collect_scores");
  const ModelConfig& c = model.config;
  const size_t n = model.layers.size();
  if (k_d <= 0) k_d = c.m_d;

  std::vector<MeanL2Stats> x_stats(n), ffn_stats(n), att_stats(n), site_stats(n);
  std::vector<WelfordStats> gate_stats(n), act_stats(n);
  MeanL2Stats final_site;

  bool need_trace = options.mamba || options.ffn || options.embedding ||
                    options.flap || options.attention;
  if (need_trace) {
    for (const TokenSeq& seq : calib) {
      ForwardTrace trace;
      model_forward(model, seq, &trace);
      const Index L = static_cast<Index>(seq.size());
      for (size_t i = 0; i < n; ++i) {
        const LayerTrace& lt = trace.layers[i];
        switch (layer_kind(model.layers[i])) {
          case LayerKind::Mamba:
            if (options.mamba) x_stats[i].add_sequence(lt.x_proj, L, c.mamba_inner());
            if (options.flap) gate_stats[i].add_rows(lt.gate_out, L, c.mamba_inner());
            if (options.embedding && options.sites.mamba)
              site_stats[i].add_sequence(lt.norm_out, L, c.d_e);
            break;
          case LayerKind::Attention:
            if (options.attention)
              att_stats[i].add_sequence(lt.att_heads, L, c.attention_width());
            if (options.embedding && options.sites.attention)
              site_stats[i].add_sequence(lt.norm_out, L, c.d_e);
            break;
          case LayerKind::Ffn:
            if (options.ffn) ffn_stats[i].add_sequence(lt.ffn_pre, L, c.d_ffn);
            if (options.flap) act_stats[i].add_rows(lt.ffn_act, L, c.d_ffn);
            if (options.embedding && options.sites.ffn)
              site_stats[i].add_sequence(lt.norm_out, L, c.d_e);
            break;
        }
      }
      if (options.embedding && options.sites.final_norm)
        final_site.add_sequence(trace.final_norm_out, L, c.d_e);
    }
  }

  ScoreSet out;
  for (size_t i = 0; i < n; ++i) {
    const Index li = static_cast<Index>(i);
    const LayerWeights& lw = model.layers[i];
    switch (layer_kind(lw)) {
      case LayerKind::Mamba: {
        const auto& w = std::get<MambaLayerWeights>(lw);
        if (options.mamba) {
          MambaScores ms;
          ms.s = finalize(x_stats[i], options.aggregation);
          ms.s_d = channel_scores(ms.s, w.m_h, w.m_d);
          ms.f_h = head_scores(ms.s, w.m_h, w.m_d, select_channels(ms.s_d, k_d));
          out.mamba.emplace(li, std::move(ms));
        }
        if (options.flap) {
          Array var = gate_stats[i].variance();
          Array s(w.inner());
          for (Index j = 0; j < w.inner(); ++j) {
            s[j] = w.w_o.values().segment(j * w.d_e, w.d_e).square().sum() * var[j];
          }
          out.flap.emplace(li, std::move(s));
        }
        break;
      }
      case LayerKind::Attention:
        if (options.attention) {
          const auto& w = std::get<AttentionWeights>(lw);
          Array per_dim = att_stats[i].finalize_l2();
          const Index hd = w.d_att / w.n_heads;
          Array heads(w.n_heads);
          for (Index h = 0; h < w.n_heads; ++h) {
            heads[h] = std::sqrt(per_dim.segment(h * hd, hd).square().sum());
          }
          out.attention_heads.emplace(li, std::move(heads));
        }
        break;
      case LayerKind::Ffn: {
        const auto& w = std::get<FfnWeights>(lw);
        if (options.ffn) out.ffn_neuron.emplace(li, finalize(ffn_stats[i], options.aggregation));
        if (options.flap) {
          Array var = act_stats[i].variance();
          Array s(w.d_ffn);
          for (Index j = 0; j < w.d_ffn; ++j) {
            double sq = 0.0;
            for (Index r = 0; r < w.d_e; ++r) {
              double v = w.w_2.at(r * w.d_ffn + j);
              sq += v * v;
            }
            s[j] = sq * var[j];
          }
          out.flap_ffn.emplace(li, std::move(s));
        }
        break;
      }
    }
  }

  if (options.embedding) {
    Array total = Array::Zero(c.d_e);
    for (size_t i = 0; i < n; ++i) {
      if (site_stats[i].items() > 0) total += site_stats[i].finalize_l2();
    }
    if (options.sites.final_norm && final_site.items() > 0) total += final_site.finalize_l2();
    out.f_emb = std::move(total);
  }
  if (options.layer_kld) {
    CalibSet subset = calib;
    if (options.kld_max_sequences > 0 &&
        static_cast<Index>(subset.size()) > options.kld_max_sequences) {
      subset.resize(static_cast<size_t>(options.kld_max_sequences));
    }
    out.layer_kld = layer_importance_kld(model, subset);
  }
  return out;
}

std::string ScoreSet::to_json() const {
  json root;
  root["version"] = 1;
  json layers = json::array();
  // Collect the union of layer indices present in any per-layer map.
  std::map<Index, json> per_layer;
  for (const auto& [i, ms] : mamba) {
    per_layer[i]["kind"] = "mamba";
    per_layer[i]["s"] = to_json_array(ms.s);
    per_layer[i]["s_d"] = to_json_array(ms.s_d);
    per_layer[i]["f_h"] = to_json_array(ms.f_h);
  }
  for (const auto& [i, a] : flap) {
    per_layer[i]["kind"] = "mamba";
    per_layer[i]["flap"] = to_json_array(a);
  }
  for (const auto& [i, a] : ffn_neuron) {
    per_layer[i]["kind"] = "ffn";
    per_layer[i]["ffn_neuron"] = to_json_array(a);
  }
  for (const auto& [i, a] : flap_ffn) {
    per_layer[i]["kind"] = "ffn";
    per_layer[i]["flap"] = to_json_array(a);
  }
  for (const auto& [i, a] : attention_heads) {
    per_layer[i]["kind"] = "attention";
    per_layer[i]["attention_heads"] = to_json_array(a);
  }
  for (auto& [i, j] : per_layer) {
    j["index"] = i;
    layers.push_back(j);
  }
  root["layers"] = layers;
  if (f_emb.size() > 0) root["embedding"] = to_json_array(f_emb);
  if (layer_kld.size() > 0) root["layer_kld"] = to_json_array(layer_kld);
  return root.dump(2);
}

ScoreSet ScoreSet::from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("score report: invalid JSON: ") + e.what());
  }
  ScoreSet out;
  for (const auto& j : root.value("layers", json::array())) {
    Index i = j.at("index").get<Index>();
    std::string kind = j.value("kind", "");
    if (j.contains("s")) {
      MambaScores ms;
      ms.s = array_from_json(j["s"]);
      ms.s_d = array_from_json(j["s_d"]);
      ms.f_h = array_from_json(j["f_h"]);
      out.mamba.emplace(i, std::move(ms));
    }
    if (j.contains("flap")) {
      if (kind == "ffn") {
        out.flap_ffn.emplace(i, array_from_json(j["flap"]));
      } else {
        out.flap.emplace(i, array_from_json(j["flap"]));
      }
    }
    if (j.contains("ffn_neuron")) out.ffn_neuron.emplace(i, array_from_json(j["ffn_neuron"]));
    if (j.contains("attention_heads"))
      out.attention_heads.emplace(i, array_from_json(j["attention_heads"]));
  }
  if (root.contains("embedding")) out.f_emb = array_from_json(root["embedding"]);
  if (root.contains("layer_kld")) out.layer_kld = array_from_json(root["layer_kld"]);
  return out;
}

std::string layer_kld_to_csv(const ScoreSet& scores, const ModelConfig& config) {
  if (scores.layer_kld.size() != config.n_layers()) {
    throw UsageError("layer_kld_to_csv: no layer importance in this score set");
  }
  std::ostringstream os;
  os << "layer,kind,kld\n";
  for (Index i = 0; i < config.n_layers(); ++i) {
    os << i << ',' << layer_kind_name(config.layer_pattern[static_cast<size_t>(i)]) << ','
       << scores.layer_kld[i] << '\n';
  }
  return os.str();
}

}  // namespace hptk
