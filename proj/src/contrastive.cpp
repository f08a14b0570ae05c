// SPDX-License-Identifier: Apache-2.0
#include "cocite/contrastive.hpp"

#include <cmath>

namespace cocite {

template <typename Scalar>
MnrResult<Scalar> mnr_loss(const Matrix<Scalar>& left, const Matrix<Scalar>& right,
                           const TemperatureParam<Scalar>& temperature) {
  const auto batch = left.rows();
  if (batch < 2) throw ConfigError("contrastive loss needs a batch of at least 2 pairs");
  if (right.rows() != batch || right.cols() != left.cols()) throw ShapeError("left/right embedding shapes differ");

  const Scalar t = temperature.value();
  const Matrix<Scalar> dots = left * right.transpose();
  Matrix<Scalar> probs = dots * t;
  MnrResult<Scalar> r;
  for (Eigen::Index i = 0; i < batch; ++i) {
    const Scalar max_logit = probs.row(i).maxCoeff();
    probs.row(i) = (probs.row(i).array() - max_logit).exp().matrix();
    const Scalar total = probs.row(i).sum();
    r.loss += std::log(total) - (dots(i, i) * t - max_logit);
    probs.row(i) /= total;
  }
  r.loss /= static_cast<Scalar>(batch);

  Matrix<Scalar> d_logits = probs;
  d_logits.diagonal().array() -= Scalar(1);
  d_logits /= static_cast<Scalar>(batch);
  const Matrix<Scalar> d_dots = d_logits * t;
  r.d_left = d_dots * right;
  r.d_right = d_dots.transpose() * left;
  // d loss / d t = sum(d_logits .* dots); chain through t = exp(log t).
  r.d_log_temperature = (d_logits.array() * dots.array()).sum() * t;
  return r;
}

template MnrResult<float> mnr_loss(const Matrix<float>&, const Matrix<float>&, const TemperatureParam<float>&);
template MnrResult<double> mnr_loss(const Matrix<double>&, const Matrix<double>&, const TemperatureParam<double>&);

}  // namespace cocite
