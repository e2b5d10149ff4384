#pragma once

// Angle-partitioned social representation.
//
// Each neighbor is placed in one of N_theta equal angular sectors around the
// ego (angle of neighbor minus ego at the last observed frame, wrapped to
// [0, 2pi)). Every agent u is embedded from its own last-frame-translated
// trajectory, e_trl(u) = E_trl(T[X_u - p_u]), each ego-neighbor pair gives
// e_soc(i<-j) = E_soc(e_trl(i) * e_trl(j)) elementwise, and partition n holds
// the arithmetic mean of the pairs assigned to it (zeros when empty).
//
// Flatten order: the (T_h, N_theta, d) tensor is stored as a
// (N_theta * T_h) x d matrix, partition-major: row = n * T_h + t (0-based).

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "rev/autodiff.hpp"
#include "rev/nn.hpp"
#include "rev/transforms.hpp"

namespace rev {

struct PartitionResult {
  int index = 0;
  bool degenerate = false;  // ego and neighbor coincide; index forced to 0
};

inline int partition_of_angle(double angle, int n_partitions) {
  const double two_pi = 2.0 * std::numbers::pi;
  angle = std::fmod(angle, two_pi);
  if (angle < 0.0) angle += two_pi;
  if (angle >= two_pi) angle = 0.0;
  int idx = static_cast<int>(std::floor(angle * n_partitions / two_pi));
  return std::min(std::max(idx, 0), n_partitions - 1);
}

inline PartitionResult assign_partition_at(const TimeSeq& ego, const TimeSeq& neighbor, int frame, int n_partitions) {
  if (n_partitions < 1) throw ConfigError("assign_partition: N_theta must be positive");
  const double dx = neighbor.values(frame, 0) - ego.values(frame, 0);
  const double dy = neighbor.values(frame, 1) - ego.values(frame, 1);
  if (dx == 0.0 && dy == 0.0) return {0, true};
  return {partition_of_angle(std::atan2(dy, dx), n_partitions), false};
}

// Partition from the final observed frame.
inline PartitionResult assign_partition(const TimeSeq& ego, const TimeSeq& neighbor, int n_partitions) {
  if (ego.steps() == 0 || neighbor.steps() != ego.steps() || ego.dims() < 2 || neighbor.dims() < 2)
    throw ShapeError("assign_partition: ego and neighbor must be fully observed 2D trajectories");
  return assign_partition_at(ego, neighbor, ego.steps() - 1, n_partitions);
}

// (T_h, N_theta, d) social tensor in partition-major flattened storage.
struct SocialRepr {
  Matrix values;  // (N_theta * T_h) x d
  int steps = 0;
  int partitions = 0;

  double at(int t, int n, int c) const { return values(n * steps + t, c); }
  auto partition_block(int n) const { return values.middleRows(n * steps, steps); }
};

struct SocialEncoderSpec {
  TransformKind transform = TransformKind::haar;
  int obs_steps = 8;  // t_h
  int dims = 2;       // m
  int feature_dim = 128;
  int partitions = 8;
  bool per_step_partitions = false;
};

class SocialEncoder {
 public:
  SocialEncoder() = default;
  explicit SocialEncoder(SocialEncoderSpec spec) : spec_(spec) {
    const SpectrumShape s = spectrum_shape(spec_.obs_steps, spec_.dims, spec_.transform);
    steps_ = s.steps;
    e_trl_ = nn::Mlp::make("soc.e_trl", {s.dims, spec_.feature_dim, spec_.feature_dim}, nn::Activation::tanh);
    e_soc_ = nn::Mlp::make("soc.e_soc", {spec_.feature_dim, spec_.feature_dim, spec_.feature_dim}, nn::Activation::tanh);
  }

  const SocialEncoderSpec& spec() const { return spec_; }
  int spectral_steps() const { return steps_; }

  void init(nn::Parameters& p, nn::Rng& rng) const {
    e_trl_.init(p, rng);
    e_soc_.init(p, rng);
  }

  // E_trl(T[X - X_last]).
  ad::Var translate_embed(nn::Binder& b, const TimeSeq& X) const {
    if (X.steps() != spec_.obs_steps) {
      throw ShapeError("translate_embed: expected " + std::to_string(spec_.obs_steps) + " observed steps, got " +
                       std::to_string(X.steps()));
    }
    Matrix translated = X.values.rowwise() - X.values.row(X.steps() - 1);
    return e_trl_(b, b.constant(forward_values(translated, spec_.transform)));
  }

  ad::Var pairwise(nn::Binder& b, ad::Var e_i, ad::Var e_j) const { return e_soc_(b, ad::mul(e_i, e_j)); }

  // Partition of every neighbor at every spectral step, [neighbor][step].
  std::vector<std::vector<int>> assignments(const TimeSeq& ego, const std::vector<TimeSeq>& neighbors) const {
    std::vector<std::vector<int>> out;
    out.reserve(neighbors.size());
    for (const TimeSeq& nb : neighbors) {
      std::vector<int> per_step(static_cast<std::size_t>(steps_));
      if (!spec_.per_step_partitions) {
        const int idx = assign_partition(ego, nb, spec_.partitions).index;
        std::fill(per_step.begin(), per_step.end(), idx);
      } else {
        for (int t = 0; t < steps_; ++t) {
          const int frame = std::min(spec_.obs_steps - 1, (t + 1) * spec_.obs_steps / steps_ - 1);
          per_step[static_cast<std::size_t>(t)] = assign_partition_at(ego, nb, frame, spec_.partitions).index;
        }
      }
      out.push_back(std::move(per_step));
    }
    return out;
  }

  // Differentiable social representation, (N_theta * T_h) x d, partition-major.
  ad::Var represent(nn::Binder& b, const TimeSeq& ego, const std::vector<TimeSeq>& neighbors) const {
    const int d = spec_.feature_dim;
    const int P = spec_.partitions;
    if (neighbors.empty()) return b.constant(Matrix::Zero(P * steps_, d));

    const ad::Var e_ego = translate_embed(b, ego);
    std::vector<ad::Var> pairs;
    pairs.reserve(neighbors.size());
    for (const TimeSeq& nb : neighbors) pairs.push_back(pairwise(b, e_ego, translate_embed(b, nb)));
    const auto assign = assignments(ego, neighbors);

    std::vector<ad::Var> blocks;
    blocks.reserve(static_cast<std::size_t>(P));
    for (int n = 0; n < P; ++n) {
      if (!spec_.per_step_partitions) {
        std::vector<std::size_t> members;
        for (std::size_t j = 0; j < neighbors.size(); ++j)
          if (assign[j][0] == n) members.push_back(j);
        if (members.empty()) {
          blocks.push_back(b.constant(Matrix::Zero(steps_, d)));
          continue;
        }
        ad::Var acc = pairs[members[0]];
        for (std::size_t i = 1; i < members.size(); ++i) acc = ad::add(acc, pairs[members[i]]);
        blocks.push_back(members.size() == 1 ? acc : ad::scale(acc, 1.0 / static_cast<double>(members.size())));
      } else {
        std::vector<int> count(static_cast<std::size_t>(steps_), 0);
        for (std::size_t j = 0; j < neighbors.size(); ++j)
          for (int t = 0; t < steps_; ++t) count[static_cast<std::size_t>(t)] += assign[j][static_cast<std::size_t>(t)] == n;
        ad::Var acc = b.constant(Matrix::Zero(steps_, d));
        for (std::size_t j = 0; j < neighbors.size(); ++j) {
          Matrix mask = Matrix::Zero(steps_, d);
          bool any = false;
          for (int t = 0; t < steps_; ++t) {
            if (assign[j][static_cast<std::size_t>(t)] == n) {
              mask.row(t).setConstant(1.0 / count[static_cast<std::size_t>(t)]);
              any = true;
            }
          }
          if (any) acc = ad::add(acc, ad::mul(b.constant(std::move(mask)), pairs[j]));
        }
        blocks.push_back(acc);
      }
    }
    return ad::concat_rows(blocks);
  }

 private:
  SocialEncoderSpec spec_;
  int steps_ = 0;
  nn::Mlp e_trl_;
  nn::Mlp e_soc_;
};

// Non-differentiable evaluation of the social representation.
inline SocialRepr social_representation(const SocialEncoder& enc, const nn::Parameters& params, const TimeSeq& ego,
                                        const std::vector<TimeSeq>& neighbors) {
  ad::Tape tape;
  nn::Binder b(tape, params, false);
  SocialRepr r;
  r.values = enc.represent(b, ego, neighbors).value();
  r.steps = enc.spectral_steps();
  r.partitions = enc.spec().partitions;
  return r;
}

}  // namespace rev
