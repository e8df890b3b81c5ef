#include "hptk/distiller.hpp"

#include <cmath>
#include <sstream>

namespace hptk {

void KDConfig::validate() const {
  if (tau <= 0.0) throw ParameterError("kd config: tau must be positive");
  if (lr_start <= 0.0 || lr_end <= 0.0) {
    throw ParameterError("kd config: learning rates must be positive");
  }
  if (warmup_steps < 0 || total_steps < 0 || warmup_steps > total_steps) {
    throw ParameterError("kd config: warmup_steps must lie in [0, total_steps]");
  }
  if (batch_size < 1 || seq_len < 1) {
    throw ParameterError("kd config: batch_size and seq_len must be positive");
  }
}

double lr_schedule(Index step, const KDConfig& cfg) {
  if (step < 0 || step > cfg.total_steps) {
    throw ParameterError("lr_schedule: step outside [0, total_steps]");
  }
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
    return cfg.lr_start * static_cast<double>(step) /
           static_cast<double>(cfg.warmup_steps);
  }
  const Index span = cfg.total_steps - cfg.warmup_steps;
  if (span == 0) return cfg.lr_start;
  const double t = static_cast<double>(step - cfg.warmup_steps) /
                   static_cast<double>(span);
  return cfg.lr_end +
         (cfg.lr_start - cfg.lr_end) * 0.5 * (1.0 + std::cos(3.141592653589793 * t));
}

Tensor kd_loss(const Tensor& teacher_logits, const Tensor& student_logits, double tau) {
  return kd_fkld(teacher_logits, student_logits, tau);
}

namespace {

struct WindowSampler {
  const CalibSet& data;
  Rng rng;
  Index need;  // tokens per window

  WindowSampler(const CalibSet& d, std::uint64_t seed, Index need_tokens)
      : data(d), rng(seed), need(need_tokens) {
    if (data.empty()) throw EmptyDataError("training data has no sequences");
    for (const auto& seq : data) {
      if (static_cast<Index>(seq.size()) < need) {
        throw UsageError("training data: every sequence must have at least " +
                         std::to_string(need) + " tokens");
      }
    }
  }

  TokenSeq next() {
    const auto& seq = data[static_cast<size_t>(rng.index(static_cast<Index>(data.size())))];
    const Index max_off = static_cast<Index>(seq.size()) - need;
    const Index off = max_off > 0 ? rng.index(max_off + 1) : 0;
    return TokenSeq(seq.begin() + off, seq.begin() + off + need);
  }
};

void sgd_step(HybridModel& model, const GradientMap& gm, double lr) {
  if (lr == 0.0) return;
  for (auto& [name, t] : named_tensors(model)) {
    const Array* g = gm.find(t->node());
    if (g) t->apply_delta((-lr) * (*g));
  }
}

}  // namespace

std::vector<TraceRow> distill(HybridModel& student, const HybridModel& teacher,
                              const CalibSet& data, const KDConfig& cfg,
                              const CheckpointHook& hook) {
  cfg.validate();
  if (teacher.config.vocab != student.config.vocab) {
    throw UsageError("distill: teacher and student must share a vocabulary");
  }
  set_requires_grad(student, true);
  WindowSampler sampler(data, cfg.seed, cfg.seq_len);
  std::vector<TraceRow> trace;
  trace.reserve(static_cast<size_t>(cfg.total_steps));
  try {
    for (Index step = 1; step <= cfg.total_steps; ++step) {
      Tensor loss;
      for (Index b = 0; b < cfg.batch_size; ++b) {
        TokenSeq window = sampler.next();
        Tensor t_logits = model_forward(teacher, window);
        Tensor s_logits = model_forward(student, window);
        Tensor l = kd_fkld(t_logits, s_logits, cfg.tau);
        loss = b == 0 ? l : add(loss, l);
      }
      loss = scale(loss, 1.0 / static_cast<double>(cfg.batch_size));
      const double lr = lr_schedule(step, cfg);
      GradientMap gm = backward(loss);
      sgd_step(student, gm, lr);
      trace.push_back({step, lr, loss.scalar_value()});
      if (hook) hook(step, student);
    }
  } catch (const NonFiniteError& e) {
    set_requires_grad(student, false);
    throw DivergenceError(std::string("distill: diverged after ") +
                          std::to_string(trace.size()) + " steps (" + e.what() + ")");
  }
  set_requires_grad(student, false);
  return trace;
}

std::vector<TraceRow> train_ce(HybridModel& model, const CalibSet& data,
                               const TrainConfig& cfg) {
  if (cfg.lr < 0.0) throw ParameterError("train_ce: lr must be non-negative");
  if (cfg.batch_size < 1 || cfg.seq_len < 1 || cfg.steps < 0) {
    throw ParameterError("train_ce: steps, batch_size and seq_len must be positive");
  }
  set_requires_grad(model, true);
  WindowSampler sampler(data, cfg.seed, cfg.seq_len + 1);
  std::vector<TraceRow> trace;
  trace.reserve(static_cast<size_t>(cfg.steps));
  try {
    for (Index step = 1; step <= cfg.steps; ++step) {
      Tensor loss;
      for (Index b = 0; b < cfg.batch_size; ++b) {
        TokenSeq window = sampler.next();
        TokenSeq inputs(window.begin(), window.end() - 1);
        std::vector<Index> targets(window.begin() + 1, window.end());
        Tensor logits = model_forward(model, inputs);
        Tensor l = cross_entropy_mean(logits, targets);
        loss = b == 0 ? l : add(loss, l);
      }
      loss = scale(loss, 1.0 / static_cast<double>(cfg.batch_size));
      GradientMap gm = backward(loss);
      sgd_step(model, gm, cfg.lr);
      trace.push_back({step, cfg.lr, loss.scalar_value()});
    }
  } catch (const NonFiniteError& e) {
    set_requires_grad(model, false);
    throw DivergenceError(std::string("train_ce: diverged after ") +
                          std::to_string(trace.size()) + " steps (" + e.what() + ")");
  }
  set_requires_grad(model, false);
  return trace;
}

double mean_cross_entropy(const HybridModel& model, const CalibSet& data) {
  if (data.empty()) throw EmptyDataError("mean_cross_entropy: no sequences");
  double total = 0.0;
  Index positions = 0;
  for (const TokenSeq& seq : data) {
    if (seq.size() < 2) {
      throw UsageError("mean_cross_entropy: sequences need at least 2 tokens");
    }
    TokenSeq inputs(seq.begin(), seq.end() - 1);
    std::vector<Index> targets(seq.begin() + 1, seq.end());
    Tensor logits = model_forward(model, inputs);
    const Index n = static_cast<Index>(targets.size());
    total += cross_entropy_mean(logits, targets).scalar_value() * static_cast<double>(n);
    positions += n;
  }
  return total / static_cast<double>(positions);
}

double mean_fkld(const HybridModel& teacher, const HybridModel& student,
                 const CalibSet& data, double tau) {
  if (data.empty()) throw EmptyDataError("mean_fkld: no sequences");
  double total = 0.0;
  Index positions = 0;
  for (const TokenSeq& seq : data) {
    Tensor t_logits = model_forward(teacher, seq);
    Tensor s_logits = model_forward(student, seq);
    const Index n = static_cast<Index>(seq.size());
    total += kd_fkld(t_logits, s_logits, tau).scalar_value() * static_cast<double>(n);
    positions += n;
  }
  return total / static_cast<double>(positions);
}

std::string trace_to_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "step,lr,loss\n";
  for (const TraceRow& r : trace) {
    os << r.step << ',' << r.lr << ',' << r.loss << '\n';
  }
  return os.str();
}

}  // namespace hptk
