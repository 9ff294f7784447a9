// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "trajedit/core/errors.hpp"

namespace trajedit::vcac {

using Direction = std::array<double, 3>;

struct KeyframePair {
  int a = 0;  // keyframe frame indices
  int b = 0;
  double angle_deg = 0.0;
  bool reference = false;  // angle above threshold
};

/// Equal-length contexts over frames [0, N). Frame indices are 0-based; the
/// keyframe of each context is its first frame.
struct ContextPartition {
  int num_frames = 0;
  int ctx_len = 0;
  std::vector<std::pair<int, int>> contexts;  // half-open [begin, end)
  std::vector<int> keyframes;
  std::vector<KeyframePair> pairs;

  int context_of(int frame) const { return frame / ctx_len; }
  int keyframe_of(int frame) const { return keyframes.at(static_cast<std::size_t>(context_of(frame))); }
  bool is_keyframe(int frame) const { return frame % ctx_len == 0; }

  /// Cross-context sharing uses reference attention as soon as any keyframe
  /// pair is farther apart than the threshold.
  bool use_reference() const {
    return std::any_of(pairs.begin(), pairs.end(), [](const KeyframePair& p) { return p.reference; });
  }
};

inline double angle_between_deg(const Direction& u, const Direction& v) {
  const double nu = std::sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
  const double nv = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (!(nu > 0.0 && nv > 0.0)) throw DomainError("angle_between_deg: zero-length view direction");
  const double c = std::clamp((u[0] * v[0] + u[1] * v[1] + u[2] * v[2]) / (nu * nv), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

inline ContextPartition partition_contexts(int num_frames, int ctx_len, const std::vector<Direction>& view_dirs,
                                           double angle_threshold_deg) {
  if (num_frames < 1 || ctx_len < 1) throw DomainError("partition_contexts: N and context length must be >= 1");
  if (num_frames % ctx_len != 0) {
    throw DomainError("partition_contexts: context length " + std::to_string(ctx_len) + " does not divide " +
                      std::to_string(num_frames) + " frames");
  }
  if (static_cast<int>(view_dirs.size()) != num_frames) {
    throw ShapeError("partition_contexts: expected " + std::to_string(num_frames) + " view directions");
  }
  ContextPartition p;
  p.num_frames = num_frames;
  p.ctx_len = ctx_len;
  for (int b = 0; b < num_frames; b += ctx_len) {
    p.contexts.emplace_back(b, b + ctx_len);
    p.keyframes.push_back(b);
  }
  for (std::size_t i = 0; i < p.keyframes.size(); ++i) {
    for (std::size_t j = i + 1; j < p.keyframes.size(); ++j) {
      const int a = p.keyframes[i], b = p.keyframes[j];
      const double ang = angle_between_deg(view_dirs[static_cast<std::size_t>(a)], view_dirs[static_cast<std::size_t>(b)]);
      p.pairs.push_back(KeyframePair{a, b, ang, ang > angle_threshold_deg});
    }
  }
  return p;
}

}  // namespace trajedit::vcac
