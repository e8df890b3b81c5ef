#ifndef HPTK_SEARCHER_HPP
#define HPTK_SEARCHER_HPP

#include <optional>
#include <string>
#include <vector>

#include "hptk/distiller.hpp"
#include "hptk/pruner.hpp"

namespace hptk {

/// Per-axis value lists for the architecture search. Candidate order is the
/// nested cross product in the order the values are listed (layers, then
/// d_e, d_ffn, m_h, m_d).
struct SearchGrid {
  std::vector<Index> layers;
  std::vector<Index> d_e;
  std::vector<Index> d_ffn;
  std::vector<Index> m_h;
  std::vector<Index> m_d;
};

struct Candidate {
  Index n_layers = 0;
  Index d_e = 0;
  Index d_ffn = 0;
  Index m_h = 0;
  Index m_d = 0;
  Index params = 0;
  double throughput_proxy = 0.0;
  std::optional<double> zero_shot_loss;
  std::optional<double> kd_loss;
  bool failed = false;
};

/// Analytic multiply-accumulate count per generated token at sequence length
/// `seq_len` (attention cost uses the average causal window).
double macs_per_token(const ModelConfig& config, Index seq_len);

/// Candidate config: drop the first (parent layers - n_layers) entries of
/// `depth_drop_order` (ascending importance), then apply the width targets.
ModelConfig candidate_config(const ModelConfig& parent, const Candidate& cand,
                             const std::vector<Index>& depth_drop_order);

PruneTargets candidate_targets(const ModelConfig& parent, const Candidate& cand);

/// Cross product of the grid filtered to |params - budget| <= tolerance*budget.
std::vector<Candidate> enumerate_candidates(const ModelConfig& parent,
                                            const SearchGrid& grid,
                                            const std::vector<Index>& depth_drop_order,
                                            Index budget, double tolerance,
                                            Index proxy_seq_len = 512);

/// Prune each candidate with one shared score set (no retraining) and sort by
/// mean token cross entropy, ascending; ties keep candidate order.
std::vector<Candidate> zero_shot_rank(const HybridModel& parent, const ScoreSet& scores,
                                      std::vector<Candidate> candidates,
                                      const CalibSet& calib,
                                      const std::vector<Index>& depth_drop_order,
                                      Index jobs = 1);

struct KdRankOptions {
  Index top_k = 4;
  Index kd_token_budget = 0;  // tokens; steps = budget / (batch * seq_len)
  KDConfig kd;                // total_steps is derived from the budget
  Index jobs = 1;
};

/// Distill the top K candidates for the token budget with identical
/// hyperparameters and data order, then re-rank them by post-KD validation
/// loss. Diverged candidates are marked failed and ranked last.
std::vector<Candidate> lightweight_kd_rank(const HybridModel& parent,
                                           const ScoreSet& scores,
                                           std::vector<Candidate> ranked,
                                           const CalibSet& train_data,
                                           const CalibSet& val_data,
                                           const std::vector<Index>& depth_drop_order,
                                           const KdRankOptions& options);

/// Lowest loss wins; among losses equal within eps the higher throughput
/// proxy wins, earlier candidate on a full tie.
Candidate select_winner(const std::vector<Candidate>& ranked, double eps = 1e-4);

/// Fixed schema: layers,emb,ffn,heads,head_channels,params,zero_shot_loss,
/// kd_loss,throughput_proxy. Missing losses are empty cells.
std::string search_to_csv(const std::vector<Candidate>& candidates);

/// Deterministic helper: runs fn(0..n-1) on up to `jobs` threads, results
/// slotted by index; rethrows the first captured exception.
void parallel_for(Index n, Index jobs, const std::function<void(Index)>& fn);

/// Zero-shot loss of the L2 ranking vs the FLAP ranking at shared prune
/// targets. axis is "ffn" (neuron keep counts) or "heads" (head keep
/// counts, divisible by g). Schema: axis,value,l2_loss,flap_loss.
std::string metric_comparison_csv(const HybridModel& model, const CalibSet& calib,
                                  const std::string& axis,
                                  const std::vector<Index>& values);

/// Zero-shot loss when pruning one Mamba axis in isolation ("heads" or
/// "channels"). Schema: axis,value,zero_shot_loss,params,throughput_proxy.
std::string mamba_axis_sweep_csv(const HybridModel& model, const CalibSet& calib,
                                 const std::string& axis,
                                 const std::vector<Index>& values,
                                 Index proxy_seq_len = 512);

}  // namespace hptk

#endif
