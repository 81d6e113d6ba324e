#include "flsim/lbfgs.hpp"

#include <cmath>

namespace flsim {

bool LbfgsBuffers::push(const ParamVector& s, const ParamVector& y) {
  require(s.size() == y.size(), "curvature pair length mismatch");
  require(pairs_.empty() || pairs_.front().first.size() == s.size(),
          "curvature pair length differs from buffered pairs");
  const double sy = s.dot(y);
  if (!std::isfinite(sy) || std::abs(sy) < 1e-12 * s.norm() * y.norm() || sy == 0.0) return false;
  if (capacity_ == 0) return false;
  pairs_.emplace_back(s, y);
  while (pairs_.size() > capacity_) pairs_.pop_front();
  return true;
}

ParamVector lbfgs_hvp(const LbfgsBuffers& buffers, const ParamVector& v) {
  if (buffers.empty()) return v;
  const auto& pairs = buffers.pairs();
  const Eigen::Index d = pairs.front().first.size();
  require(v.size() == d, "HVP argument length mismatch");
  const Eigen::Index k = static_cast<Eigen::Index>(pairs.size());

  // Scaling a pair (s, y) by a common factor leaves the approximation
  // unchanged, so normalize every pair to |s| = 1 to keep M well scaled.
  Eigen::MatrixXd S(d, k), Y(d, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const auto& [s, y] = pairs[static_cast<std::size_t>(i)];
    const double n = s.norm();
    S.col(i) = s / n;
    Y.col(i) = y / n;
  }
  const auto& newest = pairs.back();
  const double sigma = newest.first.dot(newest.second) / newest.first.squaredNorm();

  const Eigen::MatrixXd SY = S.transpose() * Y;
  Eigen::MatrixXd M(2 * k, 2 * k);
  M.topLeftCorner(k, k) = sigma * (S.transpose() * S);
  Eigen::MatrixXd L = SY.triangularView<Eigen::StrictlyLower>();
  M.topRightCorner(k, k) = L;
  M.bottomLeftCorner(k, k) = L.transpose();
  M.bottomRightCorner(k, k) = -Eigen::MatrixXd(SY.diagonal().asDiagonal());

  Eigen::VectorXd rhs(2 * k);
  rhs.head(k) = sigma * (S.transpose() * v);
  rhs.tail(k) = Y.transpose() * v;
  const auto lu = M.fullPivLu();
  Eigen::VectorXd p = lu.solve(rhs);
  p += lu.solve(Eigen::VectorXd(rhs - M * p));  // one step of iterative refinement

  ParamVector out = sigma * v - (sigma * (S * p.head(k)) + Y * p.tail(k));
  require(out.allFinite(), "L-BFGS Hessian-vector product is not finite");
  return out;
}

}  // namespace flsim
