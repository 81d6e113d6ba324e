#pragma once

#include <deque>
#include <utility>

#include "flsim/types.hpp"

namespace flsim {

/// Bounded window of curvature pairs (s_i, y_i), oldest first.
///
/// A pair is rejected when s^T y is non-finite or
/// |s^T y| < 1e-12 * ||s|| * ||y||. The sign of s^T y is not constrained:
/// update maps in this project are descent-scaled, so their curvature along
/// s is usually negative, and the compact form is homogeneous in y.
class LbfgsBuffers {
 public:
  explicit LbfgsBuffers(std::size_t capacity = 10) : capacity_(capacity) {}

  /// Returns false (and keeps the buffer unchanged) for a rejected pair.
  bool push(const ParamVector& s, const ParamVector& y);
  void clear() { pairs_.clear(); }

  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }
  std::size_t capacity() const { return capacity_; }
  const std::deque<std::pair<ParamVector, ParamVector>>& pairs() const { return pairs_; }

 private:
  std::size_t capacity_;
  std::deque<std::pair<ParamVector, ParamVector>> pairs_;
};

/// B v for the limited-memory BFGS approximation in compact form
///
///   B = sigma I - [sigma S  Y] M^{-1} [sigma S^T; Y^T],
///   M = [[sigma S^T S, L], [L^T, -D]],
///
/// with L the strictly lower part of S^T Y, D its diagonal and
/// sigma = s_k^T y_k / s_k^T s_k from the newest pair. Empty buffers act as
/// the identity. Throws Error on a non-finite result.
ParamVector lbfgs_hvp(const LbfgsBuffers& buffers, const ParamVector& v);

}  // namespace flsim
