#include "hptk/pruner.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include <json.hpp>

namespace hptk {

namespace {

using nlohmann::json;

std::vector<Index> checked_sorted(std::vector<Index> idx, Index limit, const char* what) {
  if (idx.empty()) throw PlanError(std::string(what) + ": keep-set is empty");
  std::sort(idx.begin(), idx.end());
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= limit) {
      throw PlanError(std::string(what) + ": index out of range");
    }
    if (i > 0 && idx[i] == idx[i - 1]) {
      throw PlanError(std::string(what) + ": duplicate index");
    }
  }
  return idx;
}

Tensor select_rows(const Tensor& t, const std::vector<Index>& rows) {
  const Index c = t.dim(1);
  Array out(static_cast<Index>(rows.size()) * c);
  for (size_t i = 0; i < rows.size(); ++i) {
    out.segment(static_cast<Index>(i) * c, c) = t.values().segment(rows[i] * c, c);
  }
  return Tensor::from_array({static_cast<Index>(rows.size()), c}, std::move(out));
}

Tensor select_cols(const Tensor& t, const std::vector<Index>& cols) {
  const Index r = t.dim(0), c = t.dim(1);
  const Index nc = static_cast<Index>(cols.size());
  Array out(r * nc);
  for (Index i = 0; i < r; ++i) {
    for (Index j = 0; j < nc; ++j) {
      out[i * nc + j] = t.at(i * c + cols[static_cast<size_t>(j)]);
    }
  }
  return Tensor::from_array({r, nc}, std::move(out));
}

Tensor select_entries(const Tensor& t, const std::vector<Index>& idx) {
  Array out(static_cast<Index>(idx.size()));
  for (size_t i = 0; i < idx.size(); ++i) out[static_cast<Index>(i)] = t.at(idx[i]);
  return Tensor::from_array({static_cast<Index>(idx.size())}, std::move(out));
}

json to_json_indices(const std::vector<Index>& v) {
  json out = json::array();
  for (Index i : v) out.push_back(i);
  return out;
}

std::vector<Index> indices_from_json(const json& j) {
  std::vector<Index> out;
  for (const auto& v : j) out.push_back(v.get<Index>());
  return out;
}

}  // namespace

std::vector<Index> rank_group_constrained(const Array& f_h, Index groups, Index k_g) {
  const Index m_h = f_h.size();
  if (groups < 1 || m_h % groups != 0) {
    throw ParameterError("rank_group_constrained: head count not divisible by groups");
  }
  const Index per_group = m_h / groups;
  if (k_g < 1 || k_g > per_group) {
    throw ParameterError("rank_group_constrained: k_g must be in [1, m_h/groups]");
  }
  std::vector<Index> ranking;
  ranking.reserve(static_cast<size_t>(groups * k_g));
  for (Index g = 0; g < groups; ++g) {
    std::vector<Index> heads(static_cast<size_t>(per_group));
    std::iota(heads.begin(), heads.end(), g * per_group);
    std::stable_sort(heads.begin(), heads.end(),
                     [&](Index a, Index b) { return f_h[a] > f_h[b]; });
    ranking.insert(ranking.end(), heads.begin(), heads.begin() + static_cast<size_t>(k_g));
  }
  return ranking;
}

std::vector<Index> top_k_indices(const Array& scores, Index k) {
  const Index n = scores.size();
  if (k < 1 || k > n) throw ParameterError("top_k_indices: k out of range");
  std::vector<Index> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Index a, Index b) { return scores[a] > scores[b]; });
  idx.resize(static_cast<size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

MambaLayerWeights trim_mamba(const MambaLayerWeights& w,
                             const std::vector<Index>& kept_heads,
                             const std::vector<Index>& kept_channels) {
  if (kept_heads.empty()) throw PlanError("trim_mamba: kept head set is empty");
  if (static_cast<Index>(kept_heads.size()) % w.g != 0) {
    throw PlanError("trim_mamba: kept head count not divisible by group count");
  }
  const Index per_group = w.m_h / w.g;
  const Index k_g = static_cast<Index>(kept_heads.size()) / w.g;
  // Group constraint: exactly k_g heads from each original group, and trims
  // preserve the original within-group order.
  std::vector<std::vector<Index>> by_group(static_cast<size_t>(w.g));
  std::set<Index> seen;
  for (Index h : kept_heads) {
    if (h < 0 || h >= w.m_h) throw PlanError("trim_mamba: head index out of range");
    if (!seen.insert(h).second) throw PlanError("trim_mamba: duplicate head index");
    by_group[static_cast<size_t>(h / per_group)].push_back(h);
  }
  std::vector<Index> heads;
  for (auto& grp : by_group) {
    if (static_cast<Index>(grp.size()) != k_g) {
      throw PlanError("trim_mamba: kept heads violate the per-group quota");
    }
    std::sort(grp.begin(), grp.end());
    heads.insert(heads.end(), grp.begin(), grp.end());
  }
  std::vector<Index> channels = checked_sorted(kept_channels, w.m_d, "trim_mamba channels");

  std::vector<Index> inner_idx;
  inner_idx.reserve(heads.size() * channels.size());
  for (Index h : heads) {
    for (Index d : channels) inner_idx.push_back(h * w.m_d + d);
  }

  MambaLayerWeights out;
  out.d_e = w.d_e;
  out.m_h = static_cast<Index>(heads.size());
  out.m_d = static_cast<Index>(channels.size());
  out.g = w.g;
  out.d_s = w.d_s;
  out.conv_k = w.conv_k;
  out.norm_scale = w.norm_scale.clone();
  out.w_z = select_cols(w.w_z, inner_idx);
  out.w_x = select_cols(w.w_x, inner_idx);
  out.w_b = w.w_b.clone();
  out.w_c = w.w_c.clone();
  out.w_dt = select_cols(w.w_dt, heads);
  out.dt_bias = select_entries(w.dt_bias, heads);
  out.a_log = select_entries(w.a_log, heads);
  out.d = select_entries(w.d, heads);
  out.conv_x_kernel = select_cols(w.conv_x_kernel, inner_idx);
  out.conv_x_bias = select_entries(w.conv_x_bias, inner_idx);
  out.conv_b_kernel = w.conv_b_kernel.clone();
  out.conv_b_bias = w.conv_b_bias.clone();
  out.conv_c_kernel = w.conv_c_kernel.clone();
  out.conv_c_bias = w.conv_c_bias.clone();
  out.gate_norm_scale = select_entries(w.gate_norm_scale, inner_idx);
  out.w_o = select_rows(w.w_o, inner_idx);
  return out;
}

FfnWeights trim_ffn(const FfnWeights& w, const std::vector<Index>& kept_neurons) {
  std::vector<Index> kept = checked_sorted(kept_neurons, w.d_ffn, "trim_ffn");
  FfnWeights out;
  out.d_e = w.d_e;
  out.d_ffn = static_cast<Index>(kept.size());
  out.norm_scale = w.norm_scale.clone();
  out.w_1 = select_rows(w.w_1, kept);
  out.w_2 = select_cols(w.w_2, kept);
  return out;
}

HybridModel trim_embedding(const HybridModel& model, const std::vector<Index>& kept_channels) {
  std::vector<Index> kept =
      checked_sorted(kept_channels, model.config.d_e, "trim_embedding");
  const Index d_e = static_cast<Index>(kept.size());

  HybridModel out;
  out.config = model.config;
  out.config.d_e = d_e;
  // Attention width stays pinned to its pre-trim value; 0 stands for
  // "same as d_e", the canonical spelling when they still agree.
  const Index att = model.config.attention_width();
  out.config.d_att = att == d_e ? 0 : att;
  out.config.validate();
  out.embedding = select_cols(model.embedding, kept);
  out.final_norm_scale = select_entries(model.final_norm_scale, kept);
  out.unembedding = select_rows(model.unembedding, kept);
  out.layers.reserve(model.layers.size());
  for (const LayerWeights& lw : model.layers) {
    if (const auto* mw = std::get_if<MambaLayerWeights>(&lw)) {
      MambaLayerWeights w = *mw;
      w.d_e = d_e;
      w.norm_scale = select_entries(mw->norm_scale, kept);
      w.w_z = select_rows(mw->w_z, kept);
      w.w_x = select_rows(mw->w_x, kept);
      w.w_b = select_rows(mw->w_b, kept);
      w.w_c = select_rows(mw->w_c, kept);
      w.w_dt = select_rows(mw->w_dt, kept);
      w.w_o = select_cols(mw->w_o, kept);
      w.dt_bias = mw->dt_bias.clone();
      w.a_log = mw->a_log.clone();
      w.d = mw->d.clone();
      w.conv_x_kernel = mw->conv_x_kernel.clone();
      w.conv_x_bias = mw->conv_x_bias.clone();
      w.conv_b_kernel = mw->conv_b_kernel.clone();
      w.conv_b_bias = mw->conv_b_bias.clone();
      w.conv_c_kernel = mw->conv_c_kernel.clone();
      w.conv_c_bias = mw->conv_c_bias.clone();
      w.gate_norm_scale = mw->gate_norm_scale.clone();
      out.layers.emplace_back(std::move(w));
    } else if (const auto* aw = std::get_if<AttentionWeights>(&lw)) {
      AttentionWeights w = *aw;
      w.d_e = d_e;
      w.norm_scale = select_entries(aw->norm_scale, kept);
      w.w_q = select_rows(aw->w_q, kept);
      w.w_k = select_rows(aw->w_k, kept);
      w.w_v = select_rows(aw->w_v, kept);
      w.w_o = select_cols(aw->w_o, kept);
      out.layers.emplace_back(std::move(w));
    } else {
      const auto* fw = std::get_if<FfnWeights>(&lw);
      FfnWeights w = *fw;
      w.d_e = d_e;
      w.norm_scale = select_entries(fw->norm_scale, kept);
      w.w_1 = select_cols(fw->w_1, kept);
      w.w_2 = select_rows(fw->w_2, kept);
      out.layers.emplace_back(std::move(w));
    }
  }
  return out;
}

HybridModel trim_depth(const HybridModel& model, const std::vector<Index>& kept_layers) {
  if (kept_layers.empty()) throw PlanError("trim_depth: kept layer list is empty");
  const Index n = static_cast<Index>(model.layers.size());
  for (size_t i = 0; i < kept_layers.size(); ++i) {
    if (kept_layers[i] < 0 || kept_layers[i] >= n) {
      throw PlanError("trim_depth: layer index out of range");
    }
    if (i > 0 && kept_layers[i] <= kept_layers[i - 1]) {
      throw PlanError("trim_depth: kept layers must be strictly increasing");
    }
  }
  HybridModel out;
  out.config = model.config;
  out.config.layer_pattern.clear();
  out.embedding = model.embedding.clone();
  out.final_norm_scale = model.final_norm_scale.clone();
  out.unembedding = model.unembedding.clone();
  for (Index i : kept_layers) {
    out.config.layer_pattern.push_back(
        model.config.layer_pattern[static_cast<size_t>(i)]);
    out.layers.push_back(model.layers[static_cast<size_t>(i)]);
  }
  // Re-clone tensors so the trimmed model owns its storage.
  HybridModel owned = clone_model(out);
  return owned;
}

HybridModel apply_plan(const HybridModel& model, const PrunePlan& plan) {
  const Index n = static_cast<Index>(model.layers.size());
  // Validate plan entries against the original model kinds up front.
  for (const auto& mp : plan.mamba) {
    if (mp.layer < 0 || mp.layer >= n ||
        layer_kind(model.layers[static_cast<size_t>(mp.layer)]) != LayerKind::Mamba) {
      throw PlanError("apply_plan: mamba entry does not reference a Mamba layer");
    }
  }
  for (const auto& fp : plan.ffn) {
    if (fp.layer < 0 || fp.layer >= n ||
        layer_kind(model.layers[static_cast<size_t>(fp.layer)]) != LayerKind::Ffn) {
      throw PlanError("apply_plan: ffn entry does not reference an FFN layer");
    }
  }

  HybridModel out = trim_depth(model, plan.kept_layers);
  out = trim_embedding(out, plan.kept_embedding);

  Index m_h = -1, m_d = -1, d_ffn = -1;
  for (size_t i = 0; i < plan.kept_layers.size(); ++i) {
    const Index original = plan.kept_layers[i];
    LayerWeights& layer = out.layers[i];
    if (layer_kind(layer) == LayerKind::Mamba) {
      auto it = std::find_if(plan.mamba.begin(), plan.mamba.end(),
                             [&](const MambaLayerPlan& p) { return p.layer == original; });
      if (it == plan.mamba.end()) {
        throw PlanError("apply_plan: missing mamba plan entry for kept layer " +
                        std::to_string(original));
      }
      auto trimmed = trim_mamba(std::get<MambaLayerWeights>(layer), it->kept_heads,
                                it->kept_channels);
      if (m_h < 0) {
        m_h = trimmed.m_h;
        m_d = trimmed.m_d;
      } else if (m_h != trimmed.m_h || m_d != trimmed.m_d) {
        throw PlanError("apply_plan: mamba trims are not uniform across layers");
      }
      layer = std::move(trimmed);
    } else if (layer_kind(layer) == LayerKind::Ffn) {
      auto it = std::find_if(plan.ffn.begin(), plan.ffn.end(),
                             [&](const FfnLayerPlan& p) { return p.layer == original; });
      if (it == plan.ffn.end()) {
        throw PlanError("apply_plan: missing ffn plan entry for kept layer " +
                        std::to_string(original));
      }
      auto trimmed = trim_ffn(std::get<FfnWeights>(layer), it->kept_neurons);
      if (d_ffn < 0) {
        d_ffn = trimmed.d_ffn;
      } else if (d_ffn != trimmed.d_ffn) {
        throw PlanError("apply_plan: ffn trims are not uniform across layers");
      }
      layer = std::move(trimmed);
    }
  }
  if (m_h > 0) {
    out.config.m_h = m_h;
    out.config.m_d = m_d;
  }
  if (d_ffn > 0) out.config.d_ffn = d_ffn;
  out.config.validate();
  return out;
}

PrunePlan identity_plan(const ModelConfig& config) {
  PrunePlan plan;
  plan.targets = {config.n_layers(), config.d_e, config.d_ffn, config.heads_per_group(),
                  config.m_d};
  auto iota_vec = [](Index n) {
    std::vector<Index> v(static_cast<size_t>(n));
    std::iota(v.begin(), v.end(), Index{0});
    return v;
  };
  plan.kept_layers = iota_vec(config.n_layers());
  plan.kept_embedding = iota_vec(config.d_e);
  for (Index i = 0; i < config.n_layers(); ++i) {
    switch (config.layer_pattern[static_cast<size_t>(i)]) {
      case LayerKind::Mamba:
        plan.mamba.push_back({i, iota_vec(config.m_h), iota_vec(config.m_d)});
        break;
      case LayerKind::Ffn:
        plan.ffn.push_back({i, iota_vec(config.d_ffn)});
        break;
      case LayerKind::Attention:
        break;
    }
  }
  return plan;
}

namespace {

PrunePlan plan_common(const ModelConfig& config, const ScoreSet& scores,
                      const PruneTargets& targets) {
  PrunePlan plan = identity_plan(config);
  plan.targets = targets;
  if (targets.n_layers_keep == 0) plan.targets.n_layers_keep = config.n_layers();
  if (targets.d_e_keep == 0) plan.targets.d_e_keep = config.d_e;
  if (targets.d_ffn_keep == 0) plan.targets.d_ffn_keep = config.d_ffn;
  if (targets.heads_per_group_keep == 0)
    plan.targets.heads_per_group_keep = config.heads_per_group();
  if (targets.channels_keep == 0) plan.targets.channels_keep = config.m_d;

  if (plan.targets.n_layers_keep < config.n_layers()) {
    if (scores.layer_kld.size() != config.n_layers()) {
      throw UsageError("plan_from_scores: depth target needs layer_kld scores");
    }
    plan.kept_layers = top_k_indices(scores.layer_kld, plan.targets.n_layers_keep);
  }
  if (plan.targets.d_e_keep < config.d_e) {
    if (scores.f_emb.size() != config.d_e) {
      throw UsageError("plan_from_scores: embedding target needs embedding scores");
    }
    plan.kept_embedding = top_k_indices(scores.f_emb, plan.targets.d_e_keep);
  }
  return plan;
}

}  // namespace

PrunePlan plan_from_scores(const ModelConfig& config, const ScoreSet& scores,
                           const PruneTargets& targets) {
  PrunePlan plan = plan_common(config, scores, targets);
  const Index k_g = plan.targets.heads_per_group_keep;
  const Index k_d = plan.targets.channels_keep;
  const bool trim_heads = k_g < config.heads_per_group() || k_d < config.m_d;
  const bool trim_ffn_neurons = plan.targets.d_ffn_keep < config.d_ffn;
  for (auto& mp : plan.mamba) {
    if (!trim_heads) continue;
    auto it = scores.mamba.find(mp.layer);
    if (it == scores.mamba.end()) {
      throw UsageError("plan_from_scores: missing mamba scores for layer " +
                       std::to_string(mp.layer));
    }
    mp.kept_channels = select_channels(it->second.s_d, k_d);
    Array f_h = head_scores(it->second.s, config.m_h, config.m_d, mp.kept_channels);
    mp.kept_heads = rank_group_constrained(f_h, config.g, k_g);
  }
  for (auto& fp : plan.ffn) {
    if (!trim_ffn_neurons) continue;
    auto it = scores.ffn_neuron.find(fp.layer);
    if (it == scores.ffn_neuron.end()) {
      throw UsageError("plan_from_scores: missing ffn scores for layer " +
                       std::to_string(fp.layer));
    }
    fp.kept_neurons = top_k_indices(it->second, plan.targets.d_ffn_keep);
  }
  return plan;
}

PrunePlan plan_from_flap(const ModelConfig& config, const ScoreSet& scores,
                         const PruneTargets& targets) {
  PrunePlan plan = plan_common(config, scores, targets);
  const Index k_g = plan.targets.heads_per_group_keep;
  const Index k_d = plan.targets.channels_keep;
  const bool trim_heads = k_g < config.heads_per_group() || k_d < config.m_d;
  const bool trim_ffn_neurons = plan.targets.d_ffn_keep < config.d_ffn;
  for (auto& mp : plan.mamba) {
    if (!trim_heads) continue;
    auto it = scores.flap.find(mp.layer);
    if (it == scores.flap.end()) {
      throw UsageError("plan_from_flap: missing FLAP scores for layer " +
                       std::to_string(mp.layer));
    }
    const Array& s = it->second;  // [m_h * m_d]
    Array per_channel = Array::Zero(config.m_d);
    Array per_head = Array::Zero(config.m_h);
    for (Index h = 0; h < config.m_h; ++h) {
      for (Index d = 0; d < config.m_d; ++d) {
        per_channel[d] += s[h * config.m_d + d];
        per_head[h] += s[h * config.m_d + d];
      }
    }
    mp.kept_channels = select_channels(per_channel, k_d);
    if (k_d < config.m_d) {
      // Head score restricted to the kept channels, as in the L2 route.
      per_head.setZero();
      for (Index h = 0; h < config.m_h; ++h) {
        for (Index d : mp.kept_channels) per_head[h] += s[h * config.m_d + d];
      }
    }
    mp.kept_heads = rank_group_constrained(per_head, config.g, k_g);
  }
  for (auto& fp : plan.ffn) {
    if (!trim_ffn_neurons) continue;
    auto it = scores.flap_ffn.find(fp.layer);
    if (it == scores.flap_ffn.end()) {
      throw UsageError("plan_from_flap: missing FFN FLAP scores for layer " +
                       std::to_string(fp.layer));
    }
    fp.kept_neurons = top_k_indices(it->second, plan.targets.d_ffn_keep);
  }
  return plan;
}

ModelConfig trimmed_config(const ModelConfig& config, const PrunePlan& plan) {
  ModelConfig out = config;
  out.layer_pattern.clear();
  for (Index i : plan.kept_layers) {
    out.layer_pattern.push_back(config.layer_pattern[static_cast<size_t>(i)]);
  }
  out.d_e = static_cast<Index>(plan.kept_embedding.size());
  out.d_att = config.attention_width() == out.d_e ? 0 : config.attention_width();
  for (const auto& mp : plan.mamba) {
    if (std::find(plan.kept_layers.begin(), plan.kept_layers.end(), mp.layer) ==
        plan.kept_layers.end())
      continue;
    out.m_h = static_cast<Index>(mp.kept_heads.size());
    out.m_d = static_cast<Index>(mp.kept_channels.size());
    break;
  }
  for (const auto& fp : plan.ffn) {
    if (std::find(plan.kept_layers.begin(), plan.kept_layers.end(), fp.layer) ==
        plan.kept_layers.end())
      continue;
    out.d_ffn = static_cast<Index>(fp.kept_neurons.size());
    break;
  }
  out.validate();
  return out;
}

std::string PrunePlan::to_json() const {
  json root;
  root["version"] = 1;
  root["targets"] = {{"n_layers_keep", targets.n_layers_keep},
                     {"d_e_keep", targets.d_e_keep},
                     {"d_ffn_keep", targets.d_ffn_keep},
                     {"heads_per_group_keep", targets.heads_per_group_keep},
                     {"channels_keep", targets.channels_keep}};
  root["kept_layers"] = to_json_indices(kept_layers);
  root["kept_embedding"] = to_json_indices(kept_embedding);
  json m = json::array();
  for (const auto& mp : mamba) {
    m.push_back({{"layer", mp.layer},
                 {"kept_heads", to_json_indices(mp.kept_heads)},
                 {"kept_channels", to_json_indices(mp.kept_channels)}});
  }
  root["mamba"] = m;
  json f = json::array();
  for (const auto& fp : ffn) {
    f.push_back({{"layer", fp.layer}, {"kept_neurons", to_json_indices(fp.kept_neurons)}});
  }
  root["ffn"] = f;
  return root.dump(2);
}

PrunePlan PrunePlan::from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("prune plan: invalid JSON: ") + e.what());
  }
  PrunePlan plan;
  const auto& t = root.at("targets");
  plan.targets.n_layers_keep = t.value("n_layers_keep", Index{0});
  plan.targets.d_e_keep = t.value("d_e_keep", Index{0});
  plan.targets.d_ffn_keep = t.value("d_ffn_keep", Index{0});
  plan.targets.heads_per_group_keep = t.value("heads_per_group_keep", Index{0});
  plan.targets.channels_keep = t.value("channels_keep", Index{0});
  plan.kept_layers = indices_from_json(root.at("kept_layers"));
  plan.kept_embedding = indices_from_json(root.at("kept_embedding"));
  for (const auto& j : root.value("mamba", json::array())) {
    MambaLayerPlan mp;
    mp.layer = j.at("layer").get<Index>();
    mp.kept_heads = indices_from_json(j.at("kept_heads"));
    mp.kept_channels = indices_from_json(j.at("kept_channels"));
    plan.mamba.push_back(std::move(mp));
  }
  for (const auto& j : root.value("ffn", json::array())) {
    FfnLayerPlan fp;
    fp.layer = j.at("layer").get<Index>();
    fp.kept_neurons = indices_from_json(j.at("kept_neurons"));
    plan.ffn.push_back(std::move(fp));
  }
  return plan;
}

}  // namespace hptk
