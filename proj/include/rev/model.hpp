#pragma once

// The Rev trajectory model.
//
//   Y_hat[k] = Y_lin + dY_non[k] + dY_soc[k],   k = 1..K_g
//
// Both learned branches follow the same pipeline: embed, Transformer, tanh
// kernel heads R (L x T_f) and G (L x K_g) on the Transformer output f,
// reverberation transform of the per-feature similarity f f^T, a dense
// decoder to the spectral width and the inverse time-frequency transform.
// The reverberation step never materializes the L x L similarity slices:
// G^T (f_d f_d^T) R = (G^T f_d)(R^T f_d)^T, so the field is the per-feature
// outer product of A = G^T f (K_g x d) and B = R^T f (T_f x d).
//
// Ablation switches: `use_R = false` replaces R by the constant uniform
// matrix 1/L; `use_G = false` replaces the feature-driven G by a static
// learned L x K_g matrix (one independent generation head per column). A
// disabled branch contributes an all-zero delta.

#include <Eigen/Dense>

#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rev/autodiff.hpp"
#include "rev/data.hpp"
#include "rev/linear_motion.hpp"
#include "rev/nn.hpp"
#include "rev/social.hpp"
#include "rev/transforms.hpp"

namespace rev {

struct ModelConfig {
  int t_h = 8;
  int t_f = 12;
  double dt = 0.4;
  int d = 128;
  int K_g = 20;
  int n_theta = 8;
  int m = 2;
  TransformKind transform = TransformKind::haar;
  bool use_linear = true;
  bool use_non = true;
  bool use_soc = true;
  bool use_R = true;
  bool use_G = true;
  bool tied_embeddings = false;
  bool per_step_partitions = false;
  int tf_layers = 2;
  int tf_heads = 8;
  int ff_dim = 0;  // 0 means 4 * d

  int obs_spectral_steps() const { return spectrum_shape(t_h, m, transform).steps; }
  int fut_spectral_steps() const { return spectrum_shape(t_f, m, transform).steps; }
  int spectral_dims() const { return spectrum_shape(t_h, m, transform).dims; }
  int feedforward_dim() const { return ff_dim > 0 ? ff_dim : 4 * d; }

  void validate() const {
    if (t_h < 2 || t_f < 2) throw ConfigError("model: t_h and t_f must be >= 2");
    if (transform != TransformKind::none && (t_h % 2 != 0 || t_f % 2 != 0))
      throw ConfigError("model: t_h and t_f must be even for transform " + std::string(to_string(transform)));
    if (K_g < 1) throw ConfigError("model: K_g must be >= 1");
    if (n_theta < 1) throw ConfigError("model: N_theta must be >= 1");
    if (m != 2) throw ConfigError("model: only 2D trajectories are supported");
    if (d < 2 || d % 2 != 0) throw ConfigError("model: d must be an even number >= 2");
    if (tf_layers < 0) throw ConfigError("model: tf_layers must be >= 0");
    if (tf_heads < 1 || d % tf_heads != 0)
      throw ConfigError("model: d=" + std::to_string(d) + " is not divisible by tf_heads=" + std::to_string(tf_heads));
    if (dt <= 0.0) throw ConfigError("model: dt must be positive");
  }
};

struct BranchKernels {
  bool present = false;
  Matrix R;  // L x T_f
  Matrix G;  // L x K_g
};

struct PredictionBatch {
  std::vector<Matrix> values;  // K_g entries, each t_f x m
  BranchKernels non;
  BranchKernels soc;
  Matrix y_lin;  // t_f x m
};

// Latent noise for the two Transformer inputs.
struct ModelNoise {
  Matrix non;  // T_h x d/2
  Matrix soc;  // (N_theta * T_h) x d/2
};

class RevModel {
 public:
  // Decoders start small so the initial prediction stays near Y_lin.
  static constexpr double kDecoderGain = 0.05;

  struct Forward {
    ad::Var prediction;  // (K_g * t_f) x m, generation-major
    ad::Var delta_non;
    ad::Var delta_soc;
    ad::Var e_non;
    Matrix y_lin;
    BranchKernels non;
    BranchKernels soc;
  };

  explicit RevModel(ModelConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg_.d;
    const int M = cfg_.spectral_dims();
    const int Tf = cfg_.fut_spectral_steps();
    const nn::TransformerSpec ts{cfg_.tf_layers, cfg_.tf_heads, d, cfg_.feedforward_dim()};

    e_alpha_ = nn::Mlp::make("non.e_alpha", {M, d, d}, nn::Activation::tanh);
    e_beta_ = nn::Mlp::make(cfg_.tied_embeddings ? "non.e_alpha" : "non.e_beta", {M, d, d}, nn::Activation::tanh);

    non_in_ = nn::Dense{"non.in", d + d / 2, d, nn::Activation::none};
    non_val_ = nn::Dense{"non.val", M, d, nn::Activation::none};
    non_tf_ = nn::Transformer("non.tf", ts);
    non_R_ = nn::Dense{"non.R", d, Tf, nn::Activation::tanh};
    non_G_ = nn::Dense{"non.G", d, cfg_.K_g, nn::Activation::tanh};
    non_D_ = nn::Dense{"non.D", d, M, nn::Activation::none, kDecoderGain};

    social_ = SocialEncoder(SocialEncoderSpec{cfg_.transform, cfg_.t_h, cfg_.m, d, cfg_.n_theta, cfg_.per_step_partitions});
    soc_in_ = nn::Dense{"soc.in", 2 * d + d / 2, d, nn::Activation::none};
    soc_val_ = nn::Dense{"soc.val", M, d, nn::Activation::none};
    soc_tf_ = nn::Transformer("soc.tf", ts);
    soc_R_ = nn::Dense{"soc.R", d, Tf, nn::Activation::tanh};
    soc_G_ = nn::Dense{"soc.G", d, cfg_.K_g, nn::Activation::tanh};
    soc_D_ = nn::Dense{"soc.D", d, M, nn::Activation::none, kDecoderGain};

    inverse_op_ = inverse_operator(cfg_.transform, Tf, M);
  }

  const ModelConfig& config() const { return cfg_; }

  nn::Parameters init(std::uint64_t seed) const {
    nn::Rng rng(seed);
    nn::Parameters p;
    const int Th = cfg_.obs_spectral_steps();
    e_alpha_.init(p, rng);
    if (!cfg_.tied_embeddings) e_beta_.init(p, rng);
    if (cfg_.use_non) {
      non_in_.init(p, rng);
      non_val_.init(p, rng);
      non_tf_.init(p, rng);
      if (cfg_.use_R) non_R_.init(p, rng);
      if (cfg_.use_G) {
        non_G_.init(p, rng);
      } else {
        p.add("non.G_static", nn::xavier_uniform(Th, cfg_.K_g, rng));
      }
      non_D_.init(p, rng);
    }
    if (cfg_.use_soc) {
      social_.init(p, rng);
      soc_in_.init(p, rng);
      soc_val_.init(p, rng);
      soc_tf_.init(p, rng);
      if (cfg_.use_R) soc_R_.init(p, rng);
      if (cfg_.use_G) {
        soc_G_.init(p, rng);
      } else {
        p.add("soc.G_static", nn::xavier_uniform(Th * cfg_.n_theta, cfg_.K_g, rng));
      }
      soc_D_.init(p, rng);
    }
    return p;
  }

  ModelNoise zero_noise() const {
    const int Th = cfg_.obs_spectral_steps();
    return ModelNoise{Matrix::Zero(Th, cfg_.d / 2), Matrix::Zero(Th * cfg_.n_theta, cfg_.d / 2)};
  }

  ModelNoise sample_noise(nn::Rng& rng) const {
    std::normal_distribution<double> gauss(0.0, 1.0);
    ModelNoise z = zero_noise();
    for (Eigen::Index i = 0; i < z.non.size(); ++i) z.non.data()[i] = gauss(rng);
    for (Eigen::Index i = 0; i < z.soc.size(); ++i) z.soc.data()[i] = gauss(rng);
    return z;
  }

  // e_non = (E_alpha(T[X]) - E_beta(T[X_lin])) / 2.
  ad::Var encode_non(nn::Binder& b, const TimeSeq& X, const LinearFit& fit) const {
    const ad::Var a = e_alpha_(b, b.constant(forward_values(X.values, cfg_.transform)));
    const ad::Var c = e_beta_(b, b.constant(forward_values(fit.fitted.values, cfg_.transform)));
    return ad::scale(ad::sub(a, c), 0.5);
  }

  // Full forward pass on a sample in whatever frame it is given.
  Forward forward(nn::Binder& b, const Sample& s, const ModelNoise& z) const {
    check_sample(s);
    const LinearFit fit = linear_fit(s.ego, cfg_.t_f);
    Forward out;
    out.y_lin = cfg_.use_linear ? fit.predicted.values : Matrix::Zero(cfg_.t_f, cfg_.m);
    const Matrix zero_delta = Matrix::Zero(static_cast<Eigen::Index>(cfg_.K_g) * cfg_.t_f, cfg_.m);

    if (cfg_.use_non || cfg_.use_soc) out.e_non = encode_non(b, s.ego, fit);
    const Matrix diff_spec = forward_values(residual(s.ego, fit).values, cfg_.transform);

    out.delta_non = b.constant(zero_delta);
    if (cfg_.use_non) out.delta_non = staged("forward_non", [&] { return branch_non(b, out, diff_spec, z); });

    out.delta_soc = b.constant(zero_delta);
    if (cfg_.use_soc) out.delta_soc = staged("forward_soc", [&] { return branch_soc(b, out, s, diff_spec, z); });

    Matrix lin_tiled(zero_delta.rows(), cfg_.m);
    for (int k = 0; k < cfg_.K_g; ++k) lin_tiled.middleRows(static_cast<Eigen::Index>(k) * cfg_.t_f, cfg_.t_f) = out.y_lin;
    out.prediction = ad::add(ad::add(b.constant(std::move(lin_tiled)), out.delta_non), out.delta_soc);
    return out;
  }

  // Inference on a sample in world coordinates: translate the ego's last
  // observation to the origin, run the network, translate back.
  PredictionBatch predict(const nn::Parameters& params, const Sample& world, const ModelNoise& z) const {
    const Sample s = preprocess(world);
    ad::Tape tape;
    nn::Binder b(tape, params, false);
    const Forward f = forward(b, s, z);
    PredictionBatch out;
    const Matrix& v = f.prediction.value();
    for (int k = 0; k < cfg_.K_g; ++k) {
      Matrix row = v.middleRows(static_cast<Eigen::Index>(k) * cfg_.t_f, cfg_.t_f);
      row.rowwise() += s.origin - world.origin;
      out.values.push_back(std::move(row));
    }
    out.y_lin = f.y_lin;
    if (cfg_.use_linear) out.y_lin.rowwise() += s.origin - world.origin;
    out.non = f.non;
    out.soc = f.soc;
    return out;
  }

  PredictionBatch predict(const nn::Parameters& params, const Sample& world, nn::Rng& rng) const {
    return predict(params, world, sample_noise(rng));
  }

 private:
  template <class F>
  static ad::Var staged(const char* stage, F&& f) {
    try {
      return f();
    } catch (const ShapeError& e) {
      throw ShapeError(std::string(stage) + ": " + e.what());
    }
  }

  void check_sample(const Sample& s) const {
    if (s.ego.steps() != cfg_.t_h || s.ego.dims() != cfg_.m)
      throw ShapeError("model: ego must be " + std::to_string(cfg_.t_h) + "x" + std::to_string(cfg_.m));
    for (const TimeSeq& nb : s.neighbors)
      if (nb.steps() != cfg_.t_h || nb.dims() != cfg_.m) throw ShapeError("model: neighbor shape differs from ego");
  }

  // Kernel heads, reverberation, decoding and inverse transform.
  ad::Var rehearse(nn::Binder& b, ad::Var f, const nn::Dense& r_head, const nn::Dense& g_head, const std::string& g_static,
                   const nn::Dense& decoder, BranchKernels& kernels) const {
    const Eigen::Index L = f.rows();
    const int Tf = cfg_.fut_spectral_steps();
    const ad::Var R = cfg_.use_R ? r_head(b, f) : b.constant(Matrix::Constant(L, Tf, 1.0 / static_cast<double>(L)));
    const ad::Var G = cfg_.use_G ? g_head(b, f) : b(g_static);
    if (G.rows() != L) throw ShapeError("static generating kernel has " + std::to_string(G.rows()) + " rows, expected " + std::to_string(L));
    kernels.present = true;
    kernels.R = R.value();
    kernels.G = G.value();
    const ad::Var A = ad::matmul(ad::transpose(G), f);  // K_g x d
    const ad::Var B = ad::matmul(ad::transpose(R), f);  // T_f x d
    const ad::Var field = ad::outer_field(A, B);          // (K_g * T_f) x d
    const ad::Var spec = decoder(b, field);               // (K_g * T_f) x M
    return ad::block_linear(spec, inverse_op_, Tf, cfg_.t_f, cfg_.m);
  }

  ad::Var branch_non(nn::Binder& b, Forward& out, const Matrix& diff_spec, const ModelNoise& z) const {
    const ad::Var qk = non_in_(b, ad::concat_cols({out.e_non, b.constant(z.non)}));
    const ad::Var values = non_val_(b, b.constant(diff_spec));
    const ad::Var f = non_tf_(b, qk, values);
    return rehearse(b, f, non_R_, non_G_, "non.G_static", non_D_, out.non);
  }

  ad::Var branch_soc(nn::Binder& b, Forward& out, const Sample& s, const Matrix& diff_spec, const ModelNoise& z) const {
    const ad::Var e_soc = social_.represent(b, s.ego, s.neighbors);
    const ad::Var e_non = ad::tile_rows(out.e_non, cfg_.n_theta);
    const ad::Var qk = soc_in_(b, ad::concat_cols({e_non, e_soc, b.constant(z.soc)}));
    const ad::Var values = ad::tile_rows(soc_val_(b, b.constant(diff_spec)), cfg_.n_theta);
    const ad::Var f = soc_tf_(b, qk, values);
    return rehearse(b, f, soc_R_, soc_G_, "soc.G_static", soc_D_, out.soc);
  }

  ModelConfig cfg_;
  nn::Mlp e_alpha_, e_beta_;
  nn::Dense non_in_, non_val_, non_R_, non_G_, non_D_;
  nn::Transformer non_tf_;
  SocialEncoder social_;
  nn::Dense soc_in_, soc_val_, soc_R_, soc_G_, soc_D_;
  nn::Transformer soc_tf_;
  Matrix inverse_op_;
};

// min_k (1/t_f) ||Y_hat_k - Y||_F over generation blocks of a
// (K * t_f) x m prediction; the first minimal generation wins ties.
struct BestOfK {
  ad::Var loss;
  int index = 0;
};

inline BestOfK best_of_k_loss(ad::Var prediction, const Matrix& gt) {
  const Eigen::Index t_f = gt.rows();
  if (t_f == 0 || prediction.rows() % t_f != 0 || prediction.cols() != gt.cols())
    throw ShapeError("best_of_k_loss: prediction is not a stack of ground-truth shaped blocks");
  const Eigen::Index K = prediction.rows() / t_f;
  int best = 0;
  double best_val = 0.0;
  for (Eigen::Index k = 0; k < K; ++k) {
    const double v = (prediction.value().middleRows(k * t_f, t_f) - gt).norm();
    if (k == 0 || v < best_val) {
      best = static_cast<int>(k);
      best_val = v;
    }
  }
  ad::Tape& tape = *prediction.tape;
  const ad::Var diff = ad::sub(ad::slice_rows(prediction, best * t_f, t_f), tape.constant(gt));
  return {ad::scale(ad::frobenius_norm(diff), 1.0 / static_cast<double>(t_f)), best};
}

// Value-only form on a prediction batch.
inline double best_of_k_loss(const PredictionBatch& pred, const Matrix& gt) {
  if (pred.values.empty()) throw ShapeError("best_of_k_loss: empty prediction batch");
  double best = 0.0;
  for (std::size_t k = 0; k < pred.values.size(); ++k) {
    const double v = (pred.values[k] - gt).norm() / static_cast<double>(gt.rows());
    if (k == 0 || v < best) best = v;
  }
  return best;
}

}  // namespace rev
