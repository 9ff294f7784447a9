// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "trajedit/core/tensor.hpp"
#include "trajedit/vcac/attention.hpp"

namespace trajedit::vcac {

/// Target prompt position -> source prompt position for non-edited tokens.
/// Target positions missing from the map are edited tokens.
struct CrossAttnAlignment {
  std::map<int, int> target_to_source;

  bool is_edited(int target_pos) const { return !target_to_source.contains(target_pos); }
};

/// Aligns two prompts by their longest common token subsequence.
inline CrossAttnAlignment align_prompts(const std::vector<int>& source, const std::vector<int>& target) {
  const std::size_t n = source.size(), m = target.size();
  std::vector<std::vector<int>> lcs(n + 1, std::vector<int>(m + 1, 0));
  for (std::size_t i = n; i-- > 0;)
    for (std::size_t j = m; j-- > 0;)
      lcs[i][j] = source[i] == target[j] ? lcs[i + 1][j + 1] + 1 : std::max(lcs[i + 1][j], lcs[i][j + 1]);
  CrossAttnAlignment a;
  std::size_t i = 0, j = 0;
  while (i < n && j < m) {
    if (source[i] == target[j]) {
      a.target_to_source[static_cast<int>(j)] = static_cast<int>(i);
      ++i;
      ++j;
    } else if (lcs[i + 1][j] >= lcs[i][j + 1]) {
      ++i;
    } else {
      ++j;
    }
  }
  return a;
}

/// Cross-attention maps are stored (spatial tokens x prompt tokens), so the
/// map of prompt token k is column k. Non-edited target columns are replaced
/// by their aligned source columns.
inline Matrix cross_attn_control(const Matrix& maps_src, const Matrix& maps_tgt, const CrossAttnAlignment& align) {
  if (maps_src.rows() != maps_tgt.rows()) throw ShapeError("cross_attn_control: spatial token counts differ");
  Matrix out = maps_tgt;
  for (const auto& [tp, sp] : align.target_to_source) {
    if (tp < 0 || tp >= maps_tgt.cols() || sp < 0 || sp >= maps_src.cols()) {
      throw DomainError("cross_attn_control: alignment " + std::to_string(tp) + " -> " + std::to_string(sp) +
                        " out of range");
    }
    out.col(tp) = maps_src.col(sp);
  }
  return out;
}

/// Mask M with the spatial shape of a latent; broadcast over channels.
class BlendMask {
 public:
  BlendMask() = default;
  explicit BlendMask(Latent m) : m_(std::move(m)) {
    if (m_.channels() != 1) throw ShapeError("BlendMask: expected a single-channel mask");
    for (double v : m_.flat()) {
      if (!(v >= 0.0 && v <= 1.0)) throw DomainError("BlendMask: entries must lie in [0, 1], got " + std::to_string(v));
    }
  }
  const Latent& values() const noexcept { return m_; }
  int height() const noexcept { return m_.height(); }
  int width() const noexcept { return m_.width(); }

 private:
  Latent m_;
};

/// M * z_tgt + (1 - M) * z_src
inline Latent local_blend(const Latent& z_tgt, const Latent& z_src, const BlendMask& mask) {
  require_same_shape(z_tgt, z_src, "local_blend");
  if (mask.height() != z_tgt.height() || mask.width() != z_tgt.width()) {
    throw ShapeError("local_blend: mask " + to_string(mask.values().shape()) + " does not match latent " +
                     to_string(z_tgt.shape()));
  }
  Latent out(z_tgt.shape());
  for (int c = 0; c < z_tgt.channels(); ++c)
    for (int y = 0; y < z_tgt.height(); ++y)
      for (int x = 0; x < z_tgt.width(); ++x) {
        const double m = mask.values().at(0, y, x);
        // Exact endpoints: M = 0 or 1 copies the input bit for bit.
        out.at(c, y, x) = m == 1.0 ? z_tgt.at(c, y, x) : m == 0.0 ? z_src.at(c, y, x)
                                                                   : m * z_tgt.at(c, y, x) + (1.0 - m) * z_src.at(c, y, x);
      }
  return out;
}

}  // namespace trajedit::vcac
