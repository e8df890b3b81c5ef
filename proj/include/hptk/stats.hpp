#ifndef HPTK_STATS_HPP
#define HPTK_STATS_HPP

#include <vector>

#include "hptk/tensor.hpp"

namespace hptk {

/// Per-element aggregate used by the activation scores: mean along the
/// sequence within each item, then L2 across items. Per-item means are kept
/// so that merging two accumulators and finalizing reproduces the
/// single-pass result bit for bit (finalize sums squares in item order).
/// A raw sum over every position is carried alongside for the plain-sum
/// scoring variant.
class MeanL2Stats {
 public:
  void add_sequence(const Array& activations, Index rows, Index cols);
  /// Append the other accumulator's items after this one's (worker order).
  void merge(const MeanL2Stats& other);

  Index items() const { return static_cast<Index>(item_means_.size()); }
  Index width() const { return width_; }

  /// sqrt(sum over items of per-item-mean squared), per element.
  Array finalize_l2() const;
  /// Plain sum of the raw activations over every row of every item.
  Array finalize_raw_sum() const;

 private:
  Index width_ = 0;
  std::vector<Array> item_means_;
  Array raw_sum_;
};

/// Streaming per-feature mean and variance over flattened row samples
/// (Welford update; Chan's formula for the parallel merge).
class WelfordStats {
 public:
  void add_rows(const Array& data, Index rows, Index cols);
  void merge(const WelfordStats& other);

  Index count() const { return n_; }
  Index width() const { return width_; }
  const Array& mean() const { return mean_; }
  /// Sample variance (N-1 denominator). Throws UsageError when count < 2.
  Array variance() const;

 private:
  Index width_ = 0;
  Index n_ = 0;
  Array mean_;
  Array m2_;
};

}  // namespace hptk

#endif
