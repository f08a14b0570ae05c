// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "cocite/encoder.hpp"
#include "cocite/tensor.hpp"

namespace cocite {

template <typename Scalar>
struct MnrResult {
  Scalar loss = 0;
  Matrix<Scalar> d_left;   // B x d
  Matrix<Scalar> d_right;  // B x d
  Scalar d_log_temperature = 0;
};

/// In-batch contrastive loss over raw dot products: logits_ij = t * <left_i, right_j>,
/// loss = mean_i CE(softmax_j logits_ij, i). Every off-diagonal right_j is a
/// negative for left_i.
template <typename Scalar>
MnrResult<Scalar> mnr_loss(const Matrix<Scalar>& left, const Matrix<Scalar>& right,
                           const TemperatureParam<Scalar>& temperature);

}  // namespace cocite
