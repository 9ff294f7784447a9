// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trajedit/core/errors.hpp"

namespace trajedit::vcac {

using Matrix = Eigen::MatrixXd;

/// Per-frame token activations: frames[f] is (tokens x dim).
struct TokenTensor {
  std::vector<Matrix> frames;

  TokenTensor() = default;
  explicit TokenTensor(std::vector<Matrix> f) : frames(std::move(f)) {}

  int num_frames() const noexcept { return static_cast<int>(frames.size()); }
  int tokens() const { return frames.empty() ? 0 : static_cast<int>(frames.front().rows()); }
  int dim() const { return frames.empty() ? 0 : static_cast<int>(frames.front().cols()); }
  const Matrix& operator[](std::size_t f) const { return frames.at(f); }
  Matrix& operator[](std::size_t f) { return frames.at(f); }
};

/// Row-wise softmax(Q K^T / sqrt(d)) with row-max subtraction.
inline Matrix attention_weights(const Matrix& Q, const Matrix& K) {
  if (Q.cols() != K.cols()) {
    throw ShapeError("attention: query dim " + std::to_string(Q.cols()) + " != key dim " + std::to_string(K.cols()));
  }
  if (Q.cols() < 1 || K.rows() < 1) throw ShapeError("attention: empty keys or zero dim");
  Matrix S = (Q * K.transpose()) / std::sqrt(static_cast<double>(Q.cols()));
  for (Eigen::Index r = 0; r < S.rows(); ++r) {
    S.row(r).array() -= S.row(r).maxCoeff();
    S.row(r) = S.row(r).array().exp().matrix();
    S.row(r) /= S.row(r).sum();
  }
  return S;
}

/// softmax(Q K^T / sqrt(d)) V
inline Matrix attention(const Matrix& Q, const Matrix& K, const Matrix& V) {
  if (K.rows() != V.rows()) {
    throw ShapeError("attention: " + std::to_string(K.rows()) + " keys but " + std::to_string(V.rows()) + " values");
  }
  return attention_weights(Q, K) * V;
}

inline TokenTensor attention(const TokenTensor& Q, const TokenTensor& K, const TokenTensor& V) {
  if (Q.num_frames() != K.num_frames() || K.num_frames() != V.num_frames()) {
    throw ShapeError("attention: frame counts differ");
  }
  TokenTensor out;
  out.frames.reserve(Q.frames.size());
  for (std::size_t f = 0; f < Q.frames.size(); ++f) out.frames.push_back(attention(Q[f], K[f], V[f]));
  return out;
}

/// Query injection: source queries while t <= t_q, target queries after.
inline Matrix query_inject(const Matrix& Q_src, const Matrix& Q_tgt, const Matrix& K_tgt, const Matrix& V_tgt, int t,
                           int t_q) {
  if (Q_src.rows() != Q_tgt.rows() || Q_src.cols() != Q_tgt.cols()) {
    throw ShapeError("query_inject: source and target queries differ in shape");
  }
  return attention(t <= t_q ? Q_src : Q_tgt, K_tgt, V_tgt);
}

/// Every frame of a context attends to its keyframe's keys and values.
inline TokenTensor kv_propagate(const TokenTensor& Q_frames, const Matrix& K_key, const Matrix& V_key) {
  TokenTensor out;
  out.frames.reserve(Q_frames.frames.size());
  for (const auto& q : Q_frames.frames) out.frames.push_back(attention(q, K_key, V_key));
  return out;
}

/// Vertical concatenation [M_0; M_1; ...].
inline Matrix stack_rows(const std::vector<Matrix>& parts) {
  if (parts.empty()) throw ShapeError("stack_rows: nothing to stack");
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts.front().cols()) throw ShapeError("stack_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, parts.front().cols());
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  return out;
}

/// Each keyframe query attends over the keys and values of all keyframes.
/// All keyframe K/V are gathered before any output is produced.
inline TokenTensor kv_reference(const TokenTensor& Q_keys, const TokenTensor& K_keys, const TokenTensor& V_keys) {
  if (Q_keys.num_frames() < 1) throw ShapeError("kv_reference: need at least one keyframe");
  if (Q_keys.num_frames() != K_keys.num_frames() || K_keys.num_frames() != V_keys.num_frames()) {
    throw ShapeError("kv_reference: keyframe counts differ");
  }
  const Matrix K = stack_rows(K_keys.frames);
  const Matrix V = stack_rows(V_keys.frames);
  TokenTensor out;
  out.frames.reserve(Q_keys.frames.size());
  for (const auto& q : Q_keys.frames) out.frames.push_back(attention(q, K, V));
  return out;
}

}  // namespace trajedit::vcac
