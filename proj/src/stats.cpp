#include "hptk/stats.hpp"

#include <cmath>

namespace hptk {

void MeanL2Stats::add_sequence(const Array& activations, Index rows, Index cols) {
  if (rows < 1 || cols < 1 || activations.size() != rows * cols) {
    throw DimensionError("MeanL2Stats: activation block shape mismatch");
  }
  if (width_ == 0) {
    width_ = cols;
    raw_sum_ = Array::Zero(cols);
  } else if (cols != width_) {
    throw DimensionError("MeanL2Stats: feature width changed between sequences");
  }
  Array mean = Array::Zero(cols);
  for (Index r = 0; r < rows; ++r) {
    mean += activations.segment(r * cols, cols);
    raw_sum_ += activations.segment(r * cols, cols);
  }
  mean /= static_cast<double>(rows);
  item_means_.push_back(std::move(mean));
}

void MeanL2Stats::merge(const MeanL2Stats& other) {
  if (other.width_ == 0) return;
  if (width_ == 0) {
    *this = other;
    return;
  }
  if (other.width_ != width_) throw DimensionError("MeanL2Stats: merge width mismatch");
  item_means_.insert(item_means_.end(), other.item_means_.begin(),
                     other.item_means_.end());
  raw_sum_ += other.raw_sum_;
}

Array MeanL2Stats::finalize_l2() const {
  if (item_means_.empty()) throw EmptyDataError("MeanL2Stats: no sequences accumulated");
  Array acc = Array::Zero(width_);
  for (const Array& m : item_means_) acc += m * m;
  return acc.sqrt();
}

Array MeanL2Stats::finalize_raw_sum() const {
  if (item_means_.empty()) throw EmptyDataError("MeanL2Stats: no sequences accumulated");
  return raw_sum_;
}

void WelfordStats::add_rows(const Array& data, Index rows, Index cols) {
  if (rows < 1 || cols < 1 || data.size() != rows * cols) {
    throw DimensionError("WelfordStats: row block shape mismatch");
  }
  if (width_ == 0) {
    width_ = cols;
    mean_ = Array::Zero(cols);
    m2_ = Array::Zero(cols);
  } else if (cols != width_) {
    throw DimensionError("WelfordStats: feature width changed between blocks");
  }
  for (Index r = 0; r < rows; ++r) {
    ++n_;
    auto x = data.segment(r * cols, cols);
    Array delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
  }
}

void WelfordStats::merge(const WelfordStats& other) {
  if (other.n_ == 0) return;
  if (n_ == 0) {
    *this = other;
    return;
  }
  if (other.width_ != width_) throw DimensionError("WelfordStats: merge width mismatch");
  const double na = static_cast<double>(n_);
  const double nb = static_cast<double>(other.n_);
  Array delta = other.mean_ - mean_;
  mean_ += delta * (nb / (na + nb));
  m2_ += other.m2_ + delta.square() * (na * nb / (na + nb));
  n_ += other.n_;
}

Array WelfordStats::variance() const {
  if (n_ < 2) throw UsageError("WelfordStats: variance needs at least 2 samples");
  return m2_ / static_cast<double>(n_ - 1);
}

}  // namespace hptk
