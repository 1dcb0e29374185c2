#ifndef XPROMPT_TENSOR_HPP
#define XPROMPT_TENSOR_HPP

#include <cmath>

#include <Eigen/Dense>

namespace xprompt {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

/// Row-wise softmax with max subtraction.
template <typename Derived>
Mat<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  Mat<Scalar> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Scalar peak = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - peak).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace xprompt

#endif  // XPROMPT_TENSOR_HPP
