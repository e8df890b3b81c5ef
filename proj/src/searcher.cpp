#include "hptk/searcher.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace hptk {

double macs_per_token(const ModelConfig& c, Index seq_len) {
  const double inner = static_cast<double>(c.mamba_inner());
  const double gds = static_cast<double>(c.g * c.d_s);
  const double d_e = static_cast<double>(c.d_e);
  const double d_att = static_cast<double>(c.attention_width());
  double total = 0.0;
  for (LayerKind k : c.layer_pattern) {
    switch (k) {
      case LayerKind::Mamba:
        total += d_e * (2.0 * inner + 2.0 * gds + c.m_h);  // projections
        total += static_cast<double>(c.conv_k) * (inner + 2.0 * gds);
        total += 3.0 * inner * static_cast<double>(c.d_s);  // scan update + readout
        total += inner;                                     // gate
        total += inner * d_e;                               // w_o
        break;
      case LayerKind::Attention:
        total += 4.0 * d_e * d_att;
        total += static_cast<double>(seq_len) * d_att;  // average causal window
        break;
      case LayerKind::Ffn:
        total += 2.0 * d_e * static_cast<double>(c.d_ffn);
        break;
    }
  }
  total += d_e * static_cast<double>(c.vocab);
  return total;
}

ModelConfig candidate_config(const ModelConfig& parent, const Candidate& cand,
                             const std::vector<Index>& depth_drop_order) {
  const Index n = parent.n_layers();
  if (static_cast<Index>(depth_drop_order.size()) != n) {
    throw ParameterError("candidate_config: depth_drop_order must list every layer");
  }
  if (cand.n_layers < 1 || cand.n_layers > n) {
    throw ParameterError("candidate_config: layer count out of range");
  }
  std::vector<bool> dropped(static_cast<size_t>(n), false);
  for (Index i = 0; i < n - cand.n_layers; ++i) {
    Index li = depth_drop_order[static_cast<size_t>(i)];
    if (li < 0 || li >= n || dropped[static_cast<size_t>(li)]) {
      throw ParameterError("candidate_config: depth_drop_order is not a permutation");
    }
    dropped[static_cast<size_t>(li)] = true;
  }
  ModelConfig out = parent;
  out.layer_pattern.clear();
  for (Index i = 0; i < n; ++i) {
    if (!dropped[static_cast<size_t>(i)]) {
      out.layer_pattern.push_back(parent.layer_pattern[static_cast<size_t>(i)]);
    }
  }
  out.d_e = cand.d_e;
  out.d_att = parent.attention_width() == cand.d_e ? 0 : parent.attention_width();
  out.d_ffn = cand.d_ffn;
  out.m_h = cand.m_h;
  out.m_d = cand.m_d;
  out.validate();
  return out;
}

PruneTargets candidate_targets(const ModelConfig& parent, const Candidate& cand) {
  PruneTargets t;
  t.n_layers_keep = cand.n_layers;
  t.d_e_keep = cand.d_e;
  t.d_ffn_keep = cand.d_ffn;
  t.heads_per_group_keep = cand.m_h / parent.g;
  t.channels_keep = cand.m_d;
  return t;
}

std::vector<Candidate> enumerate_candidates(const ModelConfig& parent,
                                            const SearchGrid& grid,
                                            const std::vector<Index>& depth_drop_order,
                                            Index budget, double tolerance,
                                            Index proxy_seq_len) {
  if (grid.layers.empty() || grid.d_e.empty() || grid.d_ffn.empty() ||
      grid.m_h.empty() || grid.m_d.empty()) {
    throw ParameterError("enumerate_candidates: every grid axis needs at least one value");
  }
  if (budget < 1 || tolerance < 0.0) {
    throw ParameterError("enumerate_candidates: budget must be positive, tolerance >= 0");
  }
  auto check_axis = [&](const std::vector<Index>& axis, Index limit, const char* name) {
    for (Index v : axis) {
      if (v < 1 || v > limit) {
        throw ParameterError(std::string("enumerate_candidates: ") + name +
                             " value out of range");
      }
    }
  };
  check_axis(grid.layers, parent.n_layers(), "layers");
  check_axis(grid.d_e, parent.d_e, "d_e");
  check_axis(grid.d_ffn, parent.d_ffn, "d_ffn");
  check_axis(grid.m_h, parent.m_h, "m_h");
  check_axis(grid.m_d, parent.m_d, "m_d");
  for (Index v : grid.m_h) {
    if (v % parent.g != 0) {
      throw ParameterError("enumerate_candidates: m_h values must stay divisible by g");
    }
  }

  const double parent_macs = macs_per_token(parent, proxy_seq_len);
  const double band = tolerance * static_cast<double>(budget);
  std::vector<Candidate> out;
  for (Index nl : grid.layers)
    for (Index de : grid.d_e)
      for (Index dffn : grid.d_ffn)
        for (Index mh : grid.m_h)
          for (Index md : grid.m_d) {
            Candidate c{nl, de, dffn, mh, md};
            ModelConfig cc = candidate_config(parent, c, depth_drop_order);
            c.params = param_count(cc);
            if (std::abs(static_cast<double>(c.params - budget)) > band) continue;
            c.throughput_proxy = parent_macs / macs_per_token(cc, proxy_seq_len);
            out.push_back(c);
          }
  return out;
}

void parallel_for(Index n, Index jobs, const std::function<void(Index)>& fn) {
  if (n <= 0) return;
  jobs = std::max<Index>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<Index> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      Index i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (Index j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

namespace {

HybridModel prune_candidate(const HybridModel& parent, const ScoreSet& scores,
                            const Candidate& cand,
                            const std::vector<Index>& depth_drop_order) {
  PruneTargets targets = candidate_targets(parent.config, cand);
  PrunePlan plan = plan_from_scores(parent.config, scores, targets);
  if (cand.n_layers < parent.config.n_layers()) {
    // Depth choice follows the supplied order rather than raw KLD when the
    // caller pinned one (keeps enumeration and pruning consistent).
    std::vector<Index> kept;
    std::vector<bool> dropped(static_cast<size_t>(parent.config.n_layers()), false);
    for (Index i = 0; i < parent.config.n_layers() - cand.n_layers; ++i) {
      dropped[static_cast<size_t>(depth_drop_order[static_cast<size_t>(i)])] = true;
    }
    for (Index i = 0; i < parent.config.n_layers(); ++i) {
      if (!dropped[static_cast<size_t>(i)]) kept.push_back(i);
    }
    plan.kept_layers = kept;
  }
  return apply_plan(parent, plan);
}

double candidate_sort_key(const Candidate& c) {
  if (c.failed) return std::numeric_limits<double>::infinity();
  if (c.kd_loss) return *c.kd_loss;
  if (c.zero_shot_loss) return *c.zero_shot_loss;
  return std::numeric_limits<double>::infinity();
}

}  // namespace

std::vector<Candidate> zero_shot_rank(const HybridModel& parent, const ScoreSet& scores,
                                      std::vector<Candidate> candidates,
                                      const CalibSet& calib,
                                      const std::vector<Index>& depth_drop_order,
                                      Index jobs) {
  if (calib.empty()) throw EmptyDataError("zero_shot_rank: calibration set is empty");
  parallel_for(static_cast<Index>(candidates.size()), jobs, [&](Index i) {
    Candidate& c = candidates[static_cast<size_t>(i)];
    HybridModel pruned = prune_candidate(parent, scores, c, depth_drop_order);
    c.zero_shot_loss = mean_cross_entropy(pruned, calib);
  });
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) {
                     return a.zero_shot_loss.value_or(
                                std::numeric_limits<double>::infinity()) <
                            b.zero_shot_loss.value_or(
                                std::numeric_limits<double>::infinity());
                   });
  return candidates;
}

std::vector<Candidate> lightweight_kd_rank(const HybridModel& parent,
                                           const ScoreSet& scores,
                                           std::vector<Candidate> ranked,
                                           const CalibSet& train_data,
                                           const CalibSet& val_data,
                                           const std::vector<Index>& depth_drop_order,
                                           const KdRankOptions& options) {
  const Index k = std::min<Index>(options.top_k, static_cast<Index>(ranked.size()));
  const Index steps =
      options.kd_token_budget / (options.kd.batch_size * options.kd.seq_len);
  if (steps == 0) {
    // Degenerate budget: the ranking is exactly the zero-shot ranking.
    for (Index i = 0; i < k; ++i) {
      ranked[static_cast<size_t>(i)].kd_loss =
          ranked[static_cast<size_t>(i)].zero_shot_loss;
    }
    return ranked;
  }
  KDConfig kd = options.kd;
  kd.total_steps = steps;
  kd.warmup_steps = std::min(kd.warmup_steps, steps);
  kd.validate();
  parallel_for(k, options.jobs, [&](Index i) {
    Candidate& c = ranked[static_cast<size_t>(i)];
    HybridModel student = prune_candidate(parent, scores, c, depth_drop_order);
    try {
      distill(student, parent, train_data, kd);
      c.kd_loss = mean_cross_entropy(student, val_data);
    } catch (const DivergenceError&) {
      c.failed = true;
      c.kd_loss.reset();
    }
  });
  std::stable_sort(ranked.begin(), ranked.begin() + k,
                   [](const Candidate& a, const Candidate& b) {
                     return candidate_sort_key(a) < candidate_sort_key(b);
                   });
  return ranked;
}

Candidate select_winner(const std::vector<Candidate>& ranked, double eps) {
  if (ranked.empty()) throw UsageError("select_winner: no candidates");
  double best = std::numeric_limits<double>::infinity();
  for (const Candidate& c : ranked) best = std::min(best, candidate_sort_key(c));
  const Candidate* winner = nullptr;
  for (const Candidate& c : ranked) {
    if (candidate_sort_key(c) > best + eps) continue;
    if (!winner || c.throughput_proxy > winner->throughput_proxy) winner = &c;
  }
  return *winner;
}

std::string metric_comparison_csv(const HybridModel& model, const CalibSet& calib,
                                  const std::string& axis,
                                  const std::vector<Index>& values) {
  if (calib.empty()) throw EmptyDataError("metric_comparison_csv: no calibration data");
  ScoreOptions opts;
  opts.attention = false;
  opts.layer_kld = false;
  ScoreSet scores = collect_scores(model, calib, opts);

  std::ostringstream csv;
  csv << "axis,value,l2_loss,flap_loss\n";
  csv.setf(std::ios::fixed);
  csv.precision(6);
  for (Index v : values) {
    PruneTargets targets;
    if (axis == "ffn") {
      targets.d_ffn_keep = v;
    } else if (axis == "heads") {
      if (v % model.config.g != 0) {
        throw ParameterError("metric_comparison_csv: head counts must stay divisible by g");
      }
      targets.heads_per_group_keep = v / model.config.g;
    } else {
      throw ParameterError("metric_comparison_csv: axis must be 'ffn' or 'heads'");
    }
    HybridModel l2_model =
        apply_plan(model, plan_from_scores(model.config, scores, targets));
    HybridModel flap_model =
        apply_plan(model, plan_from_flap(model.config, scores, targets));
    csv << axis << ',' << v << ',' << mean_cross_entropy(l2_model, calib) << ','
        << mean_cross_entropy(flap_model, calib) << '\n';
  }
  return csv.str();
}

std::string mamba_axis_sweep_csv(const HybridModel& model, const CalibSet& calib,
                                 const std::string& axis,
                                 const std::vector<Index>& values,
                                 Index proxy_seq_len) {
  if (calib.empty()) throw EmptyDataError("mamba_axis_sweep_csv: no calibration data");
  ScoreOptions opts;
  opts.attention = false;
  opts.flap = false;
  opts.layer_kld = false;
  opts.ffn = false;
  opts.embedding = false;
  ScoreSet scores = collect_scores(model, calib, opts);

  const double parent_macs = macs_per_token(model.config, proxy_seq_len);
  std::ostringstream csv;
  csv << "axis,value,zero_shot_loss,params,throughput_proxy\n";
  csv.setf(std::ios::fixed);
  csv.precision(6);
  for (Index v : values) {
    PruneTargets targets;
    if (axis == "heads") {
      if (v % model.config.g != 0) {
        throw ParameterError("mamba_axis_sweep_csv: head counts must stay divisible by g");
      }
      targets.heads_per_group_keep = v / model.config.g;
    } else if (axis == "channels") {
      targets.channels_keep = v;
    } else {
      throw ParameterError("mamba_axis_sweep_csv: axis must be 'heads' or 'channels'");
    }
    HybridModel pruned =
        apply_plan(model, plan_from_scores(model.config, scores, targets));
    csv << axis << ',' << v << ',' << mean_cross_entropy(pruned, calib) << ','
        << param_count(pruned.config) << ','
        << parent_macs / macs_per_token(pruned.config, proxy_seq_len) << '\n';
  }
  return csv.str();
}

std::string search_to_csv(const std::vector<Candidate>& candidates) {
  std::ostringstream os;
  os << "layers,emb,ffn,heads,head_channels,params,zero_shot_loss,kd_loss,"
        "throughput_proxy\n";
  os.setf(std::ios::fixed);
  os.precision(6);
  for (const Candidate& c : candidates) {
    os << c.n_layers << ',' << c.d_e << ',' << c.d_ffn << ',' << c.m_h << ','
       << c.m_d << ',' << c.params << ',';
    if (c.zero_shot_loss) os << *c.zero_shot_loss;
    os << ',';
    if (c.kd_loss) os << *c.kd_loss;
    os << ',' << c.throughput_proxy << '\n';
  }
  return os.str();
}

}  // namespace hptk
