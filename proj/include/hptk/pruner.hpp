#ifndef HPTK_PRUNER_HPP
#define HPTK_PRUNER_HPP

#include <string>
#include <vector>

#include "hptk/importance.hpp"
#include "hptk/model.hpp"

namespace hptk {

struct PruneTargets {
  Index n_layers_keep = 0;
  Index d_e_keep = 0;
  Index d_ffn_keep = 0;
  Index heads_per_group_keep = 0;  // k_g
  Index channels_keep = 0;         // k_d
};

struct MambaLayerPlan {
  Index layer = -1;                  // index in the *original* model
  std::vector<Index> kept_heads;     // ranking order, concatenated per group
  std::vector<Index> kept_channels;  // ascending, shared across heads
};

struct FfnLayerPlan {
  Index layer = -1;
  std::vector<Index> kept_neurons;  // ascending
};

struct PrunePlan {
  std::vector<MambaLayerPlan> mamba;
  std::vector<FfnLayerPlan> ffn;
  std::vector<Index> kept_embedding;  // ascending
  std::vector<Index> kept_layers;     // ascending (order-preserving)
  PruneTargets targets;

  std::string to_json() const;
  static PrunePlan from_json(const std::string& text);
};

/// Per-group descending argsort of f_h, first k_g of each group, groups
/// concatenated in order. Ties break toward the lower head index.
std::vector<Index> rank_group_constrained(const Array& f_h, Index groups, Index k_g);

/// Stable top-k (descending scores, ties toward lower index), returned ascending.
std::vector<Index> top_k_indices(const Array& scores, Index k);

// Physical trims. All are pure: inputs untouched, new weights returned.
MambaLayerWeights trim_mamba(const MambaLayerWeights& w,
                             const std::vector<Index>& kept_heads,
                             const std::vector<Index>& kept_channels);
FfnWeights trim_ffn(const FfnWeights& w, const std::vector<Index>& kept_neurons);
HybridModel trim_embedding(const HybridModel& model,
                           const std::vector<Index>& kept_channels);
HybridModel trim_depth(const HybridModel& model, const std::vector<Index>& kept_layers);

/// Composition of the four trims in the fixed order
/// depth -> embedding -> Mamba -> FFN.
HybridModel apply_plan(const HybridModel& model, const PrunePlan& plan);

/// Keep-everything plan for a config (explicit index lists).
PrunePlan identity_plan(const ModelConfig& config);

/// Build a plan from importance scores and targets. Depth keeps the layers
/// with the highest KLD importance; zeros in any target mean "keep all".
PrunePlan plan_from_scores(const ModelConfig& config, const ScoreSet& scores,
                           const PruneTargets& targets);

/// FLAP variant: Mamba heads ranked by summed per-head FLAP scores (channels
/// untouched), FFN neurons by FLAP; embedding/depth as in plan_from_scores.
PrunePlan plan_from_flap(const ModelConfig& config, const ScoreSet& scores,
                         const PruneTargets& targets);

/// Config of the model apply_plan would produce.
ModelConfig trimmed_config(const ModelConfig& config, const PrunePlan& plan);

}  // namespace hptk

#endif
