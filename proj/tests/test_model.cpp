#include <gtest/gtest.h>

#include <random>

#include "rev/model.hpp"
#include "rev/train.hpp"

using namespace rev;

namespace {

ModelConfig small_config() {
  ModelConfig m;
  m.d = 8;
  m.K_g = 4;
  m.n_theta = 4;
  m.tf_layers = 1;
  m.tf_heads = 2;
  return m;
}

Matrix stack(const std::vector<Matrix>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()) * rows[0].rows(), rows[0].cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.middleRows(static_cast<Eigen::Index>(k) * rows[0].rows(), rows[0].rows()) = rows[k];
  return out;
}

RevModel::Forward run(const RevModel& model, const nn::Parameters& p, const Sample& s, const ModelNoise& z, ad::Tape& t) {
  nn::Binder b(t, p, false);
  return model.forward(b, s, z);
}

}  // namespace

TEST(Model, DefaultOutputShape) {
  const RevModel model(ModelConfig{});
  const nn::Parameters p = model.init(1);
  nn::Rng rng(1);
  const PredictionBatch out = model.predict(p, toy_sample(model.config(), 1), rng);
  ASSERT_EQ(out.values.size(), 20u);
  EXPECT_EQ(out.values[0].rows(), 12);
  EXPECT_EQ(out.values[0].cols(), 2);
  EXPECT_EQ(out.non.R.rows(), 4);
  EXPECT_EQ(out.non.R.cols(), 6);
  EXPECT_EQ(out.soc.R.rows(), 32);
  EXPECT_EQ(out.soc.G.cols(), 20);
  for (const Matrix& m : out.values) EXPECT_TRUE(m.allFinite());
}

TEST(Model, SocialKernelShape) {
  ModelConfig c = small_config();
  c.n_theta = 8;
  c.t_h = 8;
  c.t_f = 12;
  const RevModel model(c);
  const nn::Parameters p = model.init(2);
  const PredictionBatch out = model.predict(p, toy_sample(c, 2), model.zero_noise());
  EXPECT_EQ(out.soc.R.rows(), 32);
  EXPECT_EQ(out.soc.R.cols(), 6);
  EXPECT_EQ(out.soc.G.rows(), 32);
  EXPECT_EQ(out.soc.G.cols(), c.K_g);
}

TEST(Model, ZeroKernelHeadsDecodeBiasOnly) {
  ModelConfig c = small_config();
  c.K_g = 1;
  c.use_soc = false;
  const RevModel model(c);
  nn::Parameters p = model.init(3);
  for (const char* n : {"non.R.w", "non.R.b", "non.G.w", "non.G.b"}) p.at(n).setZero();
  nn::Rng rng(3);
  std::normal_distribution<double> g;
  for (Eigen::Index i = 0; i < p.at("non.D.b").size(); ++i) p.at("non.D.b").data()[i] = g(rng);
  ad::Tape t;
  const auto f = run(model, p, toy_sample(c, 3), model.zero_noise(), t);
  EXPECT_EQ(f.non.R.norm(), 0.0);
  EXPECT_EQ(f.non.G.norm(), 0.0);
  const Matrix spectrum = p.at("non.D.b").replicate(6, 1);
  const Matrix expected = inverse_values(spectrum, c.transform);
  EXPECT_LT((f.delta_non.value() - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Model, ReplayIsIdentical) {
  const RevModel model(small_config());
  const nn::Parameters p = model.init(4);
  const Sample s = toy_sample(model.config(), 4);
  nn::Rng r1(9), r2(9);
  const PredictionBatch a = model.predict(p, s, r1), b = model.predict(p, s, r2);
  for (std::size_t k = 0; k < a.values.size(); ++k) EXPECT_EQ((a.values[k] - b.values[k]).norm(), 0.0);
}

TEST(Model, BranchesOffGiveLinearPrediction) {
  ModelConfig c = small_config();
  c.use_non = c.use_soc = false;
  const RevModel model(c);
  const nn::Parameters p = model.init(5);
  const Sample s = toy_sample(c, 5);
  nn::Rng rng(5);
  const PredictionBatch out = model.predict(p, s, rng);
  const Matrix lin = linear_fit(s.ego, c.t_f).predicted.values;
  for (const Matrix& m : out.values) EXPECT_LT((m - lin).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Model, SuperpositionOfParts) {
  const RevModel model(small_config());
  const nn::Parameters p = model.init(6);
  nn::Rng rng(6);
  const ModelNoise z = model.sample_noise(rng);
  ad::Tape t;
  const auto f = run(model, p, toy_sample(model.config(), 6), z, t);
  const Matrix lin = f.y_lin.replicate(model.config().K_g, 1);
  EXPECT_LT((f.prediction.value() - lin - f.delta_non.value() - f.delta_soc.value()).cwiseAbs().maxCoeff(), 1e-12);

  // Disabling the social branch equals zeroing its delta.
  ModelConfig c = model.config();
  c.use_soc = false;
  const RevModel no_soc(c);
  ad::Tape t2;
  const auto g = run(no_soc, p, toy_sample(c, 6), z, t2);
  EXPECT_LT((g.prediction.value() - lin - f.delta_non.value()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Model, ManualNeighborOnlyTouchesSocialBranch) {
  const RevModel model(small_config());
  const nn::Parameters p = model.init(7);
  const Sample s = toy_sample(model.config(), 7);
  const Sample s2 = inject_manual_neighbor(s, Eigen::RowVector2d(1.5, 0.0), Eigen::RowVector2d(-0.5, 0.2));
  ad::Tape t1, t2;
  const auto a = run(model, p, s, model.zero_noise(), t1);
  const auto b = run(model, p, s2, model.zero_noise(), t2);
  EXPECT_EQ((a.delta_non.value() - b.delta_non.value()).norm(), 0.0);
  EXPECT_GT((a.delta_soc.value() - b.delta_soc.value()).norm(), 0.0);
}

TEST(Model, ZeroNeighborsStillWellDefined) {
  const RevModel model(small_config());
  const nn::Parameters p = model.init(8);
  Sample s = toy_sample(model.config(), 8);
  s.neighbors.clear();
  const PredictionBatch out = model.predict(p, s, model.zero_noise());
  for (const Matrix& m : out.values) EXPECT_TRUE(m.allFinite());
}

TEST(Model, TiedEmbeddingsCancelOnLinearInput) {
  ModelConfig c = small_config();
  c.tied_embeddings = true;
  const RevModel model(c);
  const nn::Parameters p = model.init(9);
  Matrix x(8, 2);
  for (int i = 0; i < 8; ++i) x.row(i) << 0.4 * i - 3.0, -0.1 * i + 1.0;
  const TimeSeq X{x, 0.4};
  ad::Tape t;
  nn::Binder b(t, p, false);
  const Matrix e = model.encode_non(b, X, linear_fit(X, c.t_f)).value();
  EXPECT_LT(e.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Model, TranslationEquivariance) {
  const RevModel model(small_config());
  const nn::Parameters p = model.init(10);
  nn::Rng rng(10);
  const ModelNoise z = model.sample_noise(rng);
  Sample s = untranslate(toy_sample(model.config(), 10));
  Sample shifted = s;
  const Eigen::RowVector2d v(12.5, -7.25);
  shifted.ego.values.rowwise() += v;
  shifted.gt.values.rowwise() += v;
  for (TimeSeq& nb : shifted.neighbors) nb.values.rowwise() += v;
  const PredictionBatch a = model.predict(p, s, z), b = model.predict(p, shifted, z);
  for (std::size_t k = 0; k < a.values.size(); ++k) {
    const Matrix diff = b.values[k].rowwise() - v;
    EXPECT_LT((diff - a.values[k]).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Model, GenerationsDifferIffGeneratingColumnsDiffer) {
  ModelConfig c = small_config();
  c.use_G = false;
  const RevModel model(c);
  nn::Parameters p = model.init(11);
  for (const char* n : {"non.G_static", "soc.G_static"}) p.at(n).col(1) = p.at(n).col(0);
  const PredictionBatch out = model.predict(p, toy_sample(c, 11), model.zero_noise());
  EXPECT_EQ((out.values[0] - out.values[1]).norm(), 0.0);
  EXPECT_GT((out.values[0] - out.values[2]).norm(), 0.0);
  p.at("non.G_static")(0, 1) += 0.1;
  const PredictionBatch moved = model.predict(p, toy_sample(c, 11), model.zero_noise());
  EXPECT_GT((moved.values[0] - moved.values[1]).norm(), 0.0);
}

TEST(Model, DisabledReverberationKernelIsUniform) {
  ModelConfig c = small_config();
  c.use_R = false;
  const RevModel model(c);
  const PredictionBatch out = model.predict(model.init(12), toy_sample(c, 12), model.zero_noise());
  EXPECT_LT((out.non.R.array() - 0.25).abs().maxCoeff(), 1e-15);
  EXPECT_LT((out.soc.R.array() - 1.0 / 16).abs().maxCoeff(), 1e-15);
}

TEST(Model, BranchDecoupledGradients) {
  const ModelConfig base = small_config();
  const RevModel full(base);
  const nn::Parameters p = full.init(13);
  const Sample s = toy_sample(base, 13);
  for (bool drop_soc : {true, false}) {
    ModelConfig c = base;
    (drop_soc ? c.use_soc : c.use_non) = false;
    const RevModel model(c);
    ad::Tape t;
    nn::Binder b(t, p, true);
    t.backward(best_of_k_loss(model.forward(b, s, model.zero_noise()).prediction, s.gt.values).loss);
    const nn::Gradients g = b.gradients();
    for (const auto& [name, m] : p.tensors()) {
      const bool soc_only = name.rfind("soc.", 0) == 0;
      const bool non_only = name.rfind("non.", 0) == 0 && name.rfind("non.e_", 0) != 0;
      if ((drop_soc && soc_only) || (!drop_soc && non_only)) {
        auto it = g.find(name);
        EXPECT_TRUE(it == g.end() || it->second.norm() == 0.0) << name;
      }
    }
  }
}

TEST(Model, EndToEndGradientCheck) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const nn::GradCheckReport r = model_grad_check(tiny_model_config(), seed);
    EXPECT_LT(r.max_rel_error, 1e-3) << "seed " << seed << ": " << r.worst_parameter << "[" << r.worst_index << "]";
  }
}

TEST(Loss, BestOfKExamples) {
  ad::Tape t;
  Matrix gt(4, 2);
  gt << 0, 0, 1, 1, 2, 2, 3, 3;
  Matrix far = gt, near = gt;
  far.col(0).array() += 6.0;   // ||.||_F = 12, divided by t_f = 4 -> 3
  near.col(0).array() += 2.0;  // -> 1
  const BestOfK l = best_of_k_loss(t.constant(stack({far, near})), gt);
  EXPECT_DOUBLE_EQ(l.loss.value()(0, 0), 1.0);
  EXPECT_EQ(l.index, 1);
  EXPECT_DOUBLE_EQ(best_of_k_loss(t.constant(stack({far, gt})), gt).loss.value()(0, 0), 0.0);
  EXPECT_EQ(best_of_k_loss(t.constant(stack({near, near})), gt).index, 0);

  PredictionBatch pb;
  pb.values = {far};
  const double one = best_of_k_loss(pb, gt);
  pb.values.push_back(near);
  EXPECT_LE(best_of_k_loss(pb, gt), one);
  EXPECT_THROW(best_of_k_loss(t.constant(Matrix::Ones(5, 2)), gt), ShapeError);
}

TEST(Config, ModelValidation) {
  ModelConfig c;
  c.t_h = 7;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.K_g = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.n_theta = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.tf_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}
