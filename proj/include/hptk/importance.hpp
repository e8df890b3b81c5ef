#ifndef HPTK_IMPORTANCE_HPP
#define HPTK_IMPORTANCE_HPP

#include <map>
#include <string>
#include <vector>

#include "hptk/model.hpp"
#include "hptk/stats.hpp"

namespace hptk {

using TokenSeq = std::vector<Index>;
using CalibSet = std::vector<TokenSeq>;

/// How raw activations are reduced to one score per element. MeanThenL2 is
/// the default (mean along the sequence, then L2 across sequences); RawSum is
/// the plain-summation variant kept for comparison runs.
enum class Aggregation { MeanThenL2, RawSum };

struct MambaScores {
  Array s;    // [m_h * m_d], head-major
  Array s_d;  // [m_d]
  Array f_h;  // [m_h]
};

struct ScoreSet {
  std::map<Index, MambaScores> mamba;          // per Mamba layer
  std::map<Index, Array> ffn_neuron;           // per FFN layer, [d_ffn]
  std::map<Index, Array> flap;                 // per Mamba layer, [m_h * m_d]
  std::map<Index, Array> flap_ffn;             // per FFN layer, [d_ffn]
  std::map<Index, Array> attention_heads;      // per attention layer, [n_heads]
  Array f_emb;                                 // [d_e]
  Array layer_kld;                             // [n_layers]

  std::string to_json() const;
  static ScoreSet from_json(const std::string& text);
};

/// Which norm sites feed the embedding-channel score.
struct EmbeddingSites {
  bool mamba = true;
  bool attention = true;
  bool ffn = true;
  bool final_norm = false;
};

struct ScoreOptions {
  bool mamba = true;
  bool ffn = true;
  bool embedding = true;
  bool flap = true;
  bool attention = false;
  bool layer_kld = true;
  Aggregation aggregation = Aggregation::MeanThenL2;
  EmbeddingSites sites;
  Index kld_max_sequences = 0;  // 0 = use every calibration sequence
};

// Pure scoring steps (exercised directly by the worked examples).
Array channel_scores(const Array& s, Index m_h, Index m_d);
std::vector<Index> select_channels(const Array& s_d, Index k_d);
Array head_scores(const Array& s, Index m_h, Index m_d, const std::vector<Index>& d_top);

// Forward-pass-only estimators. `layer` indexes the model's layer list.
MambaScores score_mamba(const HybridModel& model, Index layer, const CalibSet& calib,
                        Index k_d, Aggregation agg = Aggregation::MeanThenL2);
Array score_ffn(const HybridModel& model, Index layer, const CalibSet& calib,
                Aggregation agg = Aggregation::MeanThenL2);
Array score_embedding(const HybridModel& model, const CalibSet& calib,
                      const EmbeddingSites& sites = {});
Array score_flap(const HybridModel& model, Index layer, const CalibSet& calib);
Array score_attention_heads(const HybridModel& model, Index layer, const CalibSet& calib);
Array layer_importance_kld(const HybridModel& model, const CalibSet& calib_subset);

/// One calibration pass feeding every requested estimator. k_d for the head
/// scores defaults to all channels; pass the prune target to reproduce the
/// nested scoring exactly.
ScoreSet collect_scores(const HybridModel& model, const CalibSet& calib,
                        const ScoreOptions& options, Index k_d = 0);

/// Layer-importance export (one row per layer: index, kind, kld).
std::string layer_kld_to_csv(const ScoreSet& scores, const ModelConfig& config);

}  // namespace hptk

#endif
