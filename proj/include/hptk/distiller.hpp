#ifndef HPTK_DISTILLER_HPP
#define HPTK_DISTILLER_HPP

#include <functional>
#include <string>
#include <vector>

#include "hptk/importance.hpp"
#include "hptk/model.hpp"

namespace hptk {

struct KDConfig {
  double tau = 1.0;
  double lr_start = 0.0;
  double lr_end = 0.0;
  Index warmup_steps = 0;
  Index total_steps = 0;
  Index batch_size = 1;
  Index seq_len = 16;
  std::uint64_t seed = 0;

  void validate() const;  // throws ParameterError
};

/// Linear 0 -> lr_start over the warmup, then cosine decay lr_start -> lr_end
/// at total_steps. Defined on step in [0, total_steps].
double lr_schedule(Index step, const KDConfig& cfg);

/// Mean-over-positions forward KL of tempered distributions (thin wrapper
/// over the graph op; gradients reach the student logits only).
Tensor kd_loss(const Tensor& teacher_logits, const Tensor& student_logits, double tau);

struct TraceRow {
  Index step = 0;  // 1-based update index
  double lr = 0.0;
  double loss = 0.0;
};

using CheckpointHook = std::function<void(Index step, const HybridModel& student)>;

/// Gradient-descent recovery loop: at each step a deterministic batch of
/// windows is drawn from `data`, the student follows the teacher's tempered
/// distribution under kd_loss, and weights take one step of plain gradient
/// descent at lr_schedule(step). Throws DivergenceError when the loss or an
/// activation stops being finite.
std::vector<TraceRow> distill(HybridModel& student, const HybridModel& teacher,
                              const CalibSet& data, const KDConfig& cfg,
                              const CheckpointHook& hook = {});

struct TrainConfig {
  double lr = 0.1;
  Index steps = 100;
  Index batch_size = 8;
  Index seq_len = 16;
  std::uint64_t seed = 0;
};

/// Plain next-token cross-entropy fitting; used to produce toy teachers.
std::vector<TraceRow> train_ce(HybridModel& model, const CalibSet& data,
                               const TrainConfig& cfg);

/// Mean next-token cross entropy over whole sequences (token-weighted).
double mean_cross_entropy(const HybridModel& model, const CalibSet& data);

/// Mean forward KL of the student against the teacher over whole sequences.
double mean_fkld(const HybridModel& teacher, const HybridModel& student,
                 const CalibSet& data, double tau = 1.0);

std::string trace_to_csv(const std::vector<TraceRow>& trace);

}  // namespace hptk

#endif
