// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trajedit/core/parallel.hpp"
#include "trajedit/core/rng.hpp"
#include "trajedit/core/tensor.hpp"
#include "trajedit/diffusion/score.hpp"
#include "trajedit/vcac/attention.hpp"
#include "trajedit/vcac/control.hpp"
#include "trajedit/vcac/partition.hpp"

namespace trajedit::vcac {

using diffusion::Condition;

/// How self-attention shares keys and values across frames.
///   None       every frame attends to itself
///   Propagate  frames use their keyframe's K/V; keyframes use the first keyframe's
///   Reference  frames use their keyframe's K/V; keyframes attend over all keyframes
///   Auto       Reference if any keyframe pair exceeds the angle threshold, else Propagate
enum class KvMode { None, Propagate, Reference, Auto };

inline KvMode parse_kv_mode(std::string_view s) {
  if (s == "none") return KvMode::None;
  if (s == "propagate") return KvMode::Propagate;
  if (s == "reference") return KvMode::Reference;
  if (s == "auto") return KvMode::Auto;
  throw Error("unknown kv mode '" + std::string(s) + "'");
}

inline const char* to_string(KvMode m) {
  switch (m) {
    case KvMode::None: return "none";
    case KvMode::Propagate: return "propagate";
    case KvMode::Reference: return "reference";
    case KvMode::Auto: return "auto";
  }
  return "?";
}

struct VcacHooks {
  bool query_injection = false;
  int t_q = 0;
  /// Value compared against t_q. Callers driving an editing loop pass the
  /// editing step index; when unset the diffusion timestep is used.
  std::optional<int> clock;
  KvMode kv = KvMode::None;
  std::optional<ContextPartition> partition;
  std::optional<CrossAttnAlignment> cross_alignment;

  bool needs_source() const noexcept { return query_injection || cross_alignment.has_value(); }
};

/// Activations recorded by a source-branch pass.
struct ActivationCache {
  std::vector<std::vector<Matrix>> queries;  // [layer][frame], self-attention queries
  std::vector<Matrix> cross_maps;            // [frame], (spatial tokens x prompt tokens)
};

struct TinyDenoiserConfig {
  int channels = 3;
  int patch = 4;
  int dim = 32;
  int self_attn_layers = 2;
  std::uint64_t seed = 7;
};

/// Deterministic epsilon-predictor with fixed random weights: patch
/// embedding, self-attention blocks, one cross-attention block over hashed
/// prompt tokens, and a linear read-out. Never trained; it exists to host the
/// attention-control mechanisms.
class TinyDenoiser {
 public:
  explicit TinyDenoiser(TinyDenoiserConfig cfg = {}) : cfg_(cfg) {
    if (cfg_.channels < 1 || cfg_.patch < 1 || cfg_.dim < 2 || cfg_.self_attn_layers < 1) {
      throw DomainError("TinyDenoiser: invalid configuration");
    }
    Rng rng(derive_seed(cfg_.seed, {0x7d}));
    const int pin = cfg_.channels * cfg_.patch * cfg_.patch;
    w_in_ = init(rng, pin, cfg_.dim);
    for (int l = 0; l < cfg_.self_attn_layers; ++l) {
      Block b;
      b.wq = init(rng, cfg_.dim, cfg_.dim);
      b.wk = init(rng, cfg_.dim, cfg_.dim);
      b.wv = init(rng, cfg_.dim, cfg_.dim);
      b.wo = init(rng, cfg_.dim, cfg_.dim);
      b.w1 = init(rng, cfg_.dim, 2 * cfg_.dim);
      b.w2 = init(rng, 2 * cfg_.dim, cfg_.dim);
      blocks_.push_back(std::move(b));
    }
    cq_ = init(rng, cfg_.dim, cfg_.dim);
    ck_ = init(rng, cfg_.dim, cfg_.dim);
    cv_ = init(rng, cfg_.dim, cfg_.dim);
    co_ = init(rng, cfg_.dim, cfg_.dim);
    w_out_ = init(rng, cfg_.dim, pin);
  }

  const TinyDenoiserConfig& config() const noexcept { return cfg_; }

  /// Prompt token embeddings (tokens x dim), hashed from token ids.
  Matrix embed_prompt(const std::vector<int>& tokens) const {
    if (tokens.empty()) throw DomainError("TinyDenoiser: condition has no tokens");
    Matrix e(static_cast<Eigen::Index>(tokens.size()), cfg_.dim);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      Rng r(derive_seed(cfg_.seed, {0x70, static_cast<std::uint64_t>(static_cast<std::int64_t>(tokens[i]))}));
      for (int k = 0; k < cfg_.dim; ++k) e(static_cast<Eigen::Index>(i), k) = r.normal();
    }
    return e;
  }

  /// Epsilon prediction for a batch of frames. `source` supplies cached
  /// source-branch activations (required by query injection and cross-attention
  /// control); `record`, when given, receives this pass's activations.
  std::vector<Latent> eps(const std::vector<Latent>& frames, int t, const Condition& y, const VcacHooks& hooks = {},
                          const ActivationCache* source = nullptr, ActivationCache* record = nullptr,
                          const ExecPolicy& policy = {}) const {
    if (frames.empty()) throw ShapeError("TinyDenoiser: no frames");
    const Shape3 shape = frames.front().shape();
    for (const auto& f : frames) {
      if (f.shape() != shape) throw ShapeError("TinyDenoiser: frames differ in shape");
    }
    if (shape.channels != cfg_.channels || shape.height % cfg_.patch != 0 || shape.width % cfg_.patch != 0) {
      throw ShapeError("TinyDenoiser: latent " + to_string(shape) + " incompatible with " +
                       std::to_string(cfg_.channels) + " channels and patch " + std::to_string(cfg_.patch));
    }
    const int nf = static_cast<int>(frames.size());
    if (hooks.needs_source()) {
      if (source == nullptr) throw MissingFieldError("TinyDenoiser: hooks need a source activation cache");
      if (static_cast<int>(source->cross_maps.size()) != nf ||
          static_cast<int>(source->queries.size()) != cfg_.self_attn_layers) {
        throw ShapeError("TinyDenoiser: source cache does not match this batch");
      }
    }
    const ContextPartition* part = nullptr;
    if (hooks.kv != KvMode::None) {
      if (!hooks.partition) throw MissingFieldError("TinyDenoiser: KV sharing needs a context partition");
      if (hooks.partition->num_frames != nf) throw ShapeError("TinyDenoiser: partition does not match frame count");
      part = &*hooks.partition;
    }
    const int clock = hooks.clock.value_or(t);
    const bool inject = hooks.query_injection && clock <= hooks.t_q;

    std::vector<Matrix> x(static_cast<std::size_t>(nf));
    const Matrix time = sinusoid(1, static_cast<double>(t));
    parallel_for(nf, policy, [&](int f) { x[f] = tokens_of(frames[f]) * w_in_ + positional(shape) + time.replicate(tokens_per_frame(shape), 1); });

    ActivationCache rec;
    for (int l = 0; l < cfg_.self_attn_layers; ++l) {
      const Block& b = blocks_[static_cast<std::size_t>(l)];
      std::vector<Matrix> q(nf), k(nf), v(nf), o(nf);
      parallel_for(nf, policy, [&](int f) {
        q[f] = x[f] * b.wq;
        k[f] = x[f] * b.wk;
        v[f] = x[f] * b.wv;
      });
      if (record) rec.queries.push_back(q);
      const std::vector<Matrix>& q_used = inject ? source->queries[static_cast<std::size_t>(l)] : q;
      self_attention(q_used, k, v, hooks.kv, part, o, policy);
      parallel_for(nf, policy, [&](int f) {
        x[f] += o[f] * b.wo;
        x[f] += (x[f] * b.w1).array().tanh().matrix() * b.w2;
      });
    }

    const Matrix prompt = embed_prompt(y.tokens);
    const Matrix pk = prompt * ck_, pv = prompt * cv_;
    std::vector<Latent> out(static_cast<std::size_t>(nf));
    std::vector<Matrix> maps(static_cast<std::size_t>(nf));
    parallel_for(nf, policy, [&](int f) {
      Matrix a = attention_weights(x[f] * cq_, pk);
      maps[f] = a;
      if (hooks.cross_alignment) a = cross_attn_control(source->cross_maps[f], a, *hooks.cross_alignment);
      const Matrix h = x[f] + (a * pv) * co_;
      out[f] = latent_of_tokens(h * w_out_, shape);
    });
    if (record) {
      rec.cross_maps = std::move(maps);
      *record = std::move(rec);
    }
    return out;
  }

 private:
  struct Block {
    Matrix wq, wk, wv, wo, w1, w2;
  };

  static Matrix init(Rng& rng, int rows, int cols) {
    Matrix m(rows, cols);
    const double s = 1.0 / std::sqrt(static_cast<double>(rows));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s * rng.normal();
    return m;
  }

  int tokens_per_frame(const Shape3& s) const { return (s.height / cfg_.patch) * (s.width / cfg_.patch); }

  /// Row r holds sinusoidal features of position r + offset.
  Matrix sinusoid(int rows, double offset) const {
    Matrix m(rows, cfg_.dim);
    for (int r = 0; r < rows; ++r) {
      for (int i = 0; i < cfg_.dim; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i / 2) / (cfg_.dim / 2));
        const double arg = (r + offset) * freq;
        m(r, i) = (i % 2 == 0) ? std::sin(arg) : std::cos(arg);
      }
    }
    return m;
  }

  Matrix positional(const Shape3& s) const { return 0.5 * sinusoid(tokens_per_frame(s), 0.0); }

  Matrix tokens_of(const Latent& z) const {
    const int p = cfg_.patch, gw = z.width() / p;
    Matrix tok(tokens_per_frame(z.shape()), cfg_.channels * p * p);
    for (int r = 0; r < tok.rows(); ++r) {
      const int py = r / gw, px = r % gw;
      int col = 0;
      for (int c = 0; c < cfg_.channels; ++c)
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx) tok(r, col++) = z.at(c, py * p + dy, px * p + dx);
    }
    return tok;
  }

  Latent latent_of_tokens(const Matrix& tok, const Shape3& s) const {
    const int p = cfg_.patch, gw = s.width / p;
    Latent z(s);
    for (int r = 0; r < tok.rows(); ++r) {
      const int py = r / gw, px = r % gw;
      int col = 0;
      for (int c = 0; c < cfg_.channels; ++c)
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx) z.at(c, py * p + dy, px * p + dx) = tok(r, col++);
    }
    return z;
  }

  static void self_attention(const std::vector<Matrix>& q, const std::vector<Matrix>& k, const std::vector<Matrix>& v,
                             KvMode mode, const ContextPartition* part, std::vector<Matrix>& o,
                             const ExecPolicy& policy) {
    const int nf = static_cast<int>(q.size());
    if (mode == KvMode::None) {
      parallel_for(nf, policy, [&](int f) { o[f] = attention(q[f], k[f], v[f]); });
      return;
    }
    const bool reference = mode == KvMode::Reference || (mode == KvMode::Auto && part->use_reference());
    // Keyframes first: reference attention needs every keyframe's K/V.
    if (reference) {
      TokenTensor qk, kk, vk;
      for (int key : part->keyframes) {
        qk.frames.push_back(q[key]);
        kk.frames.push_back(k[key]);
        vk.frames.push_back(v[key]);
      }
      const TokenTensor ok = kv_reference(qk, kk, vk);
      for (std::size_t i = 0; i < part->keyframes.size(); ++i) o[part->keyframes[i]] = ok.frames[i];
    } else {
      const int first = part->keyframes.front();
      for (int key : part->keyframes) o[key] = attention(q[key], k[first], v[first]);
    }
    parallel_for(nf, policy, [&](int f) {
      if (part->is_keyframe(f)) return;
      const int key = part->keyframe_of(f);
      o[f] = attention(q[f], k[key], v[key]);
    });
  }

  TinyDenoiserConfig cfg_;
  Matrix w_in_, cq_, ck_, cv_, co_, w_out_;
  std::vector<Block> blocks_;
};

}  // namespace trajedit::vcac
