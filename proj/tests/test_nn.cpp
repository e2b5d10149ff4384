#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "rev/autodiff.hpp"
#include "rev/nn.hpp"

using namespace rev;
using namespace rev::nn;

namespace {

Matrix randn(Rng& rng, int r, int c) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// Checks a scalar function of parameter tensors "a" (and "b") by finite differences.
void expect_gradients(const LossFn& f, const Parameters& p, double tol = 1e-6) {
  const GradCheckReport r = grad_check(f, p, 1e-6);
  EXPECT_GT(r.checked, 0u);
  EXPECT_LT(r.max_rel_error, tol) << "worst " << r.worst_parameter << "[" << r.worst_index << "] analytic "
                                  << r.worst_analytic << " numeric " << r.worst_numeric;
}

Parameters two(Rng& rng, int r1, int c1, int r2, int c2) {
  Parameters p;
  p.add("a", randn(rng, r1, c1));
  p.add("b", randn(rng, r2, c2));
  return p;
}

Var weighted_sum(Binder& b, Var x, std::uint64_t seed = 99) {
  Rng rng(seed);
  return ad::sum(ad::mul(x, b.constant(randn(rng, static_cast<int>(x.rows()), static_cast<int>(x.cols())))));
}

}  // namespace

TEST(Autodiff, ElementaryOps) {
  Rng rng(1);
  const Parameters p = two(rng, 3, 4, 4, 2);
  expect_gradients([](Binder& b) { return weighted_sum(b, ad::matmul(b("a"), b("b"))); }, p);
  expect_gradients([](Binder& b) { return weighted_sum(b, ad::tanh(b("a"))); }, p);
  expect_gradients([](Binder& b) { return weighted_sum(b, ad::transpose(b("a"))); }, p);
  expect_gradients([](Binder& b) { return weighted_sum(b, ad::softmax_rows(b("a"))); }, p);
  expect_gradients([](Binder& b) { return weighted_sum(b, ad::scale(ad::sub(b("a"), ad::mul(b("a"), b("a"))), 0.3)); }, p);
  expect_gradients([](Binder& b) { return ad::frobenius_norm(b("a")); }, p);
  expect_gradients([](Binder& b) { return weighted_sum(b, ad::tile_rows(b("a"), 3)); }, p);
  expect_gradients([](Binder& b) { return weighted_sum(b, ad::slice_cols(ad::slice_rows(b("a"), 1, 2), 1, 3)); }, p);
  expect_gradients([](Binder& b) { return weighted_sum(b, ad::concat_cols({b("a"), ad::transpose(b("b"))})); },
                   two(rng, 2, 3, 4, 2));
  expect_gradients([](Binder& b) { return weighted_sum(b, ad::concat_rows({b("a"), ad::transpose(b("b"))})); },
                   two(rng, 2, 4, 4, 3));
  expect_gradients([](Binder& b) { return weighted_sum(b, ad::add_bias(b("a"), b("b"))); }, two(rng, 3, 4, 1, 4));
  expect_gradients([](Binder& b) { return weighted_sum(b, ad::outer_field(b("a"), b("b"))); }, two(rng, 3, 4, 5, 4));
}

TEST(Autodiff, LayerNormAndBlockLinear) {
  Rng rng(2);
  Parameters p;
  p.add("x", randn(rng, 3, 5));
  p.add("g", randn(rng, 1, 5));
  p.add("b", randn(rng, 1, 5));
  expect_gradients([](Binder& b) { return weighted_sum(b, ad::layer_norm(b("x"), b("g"), b("b"))); }, p);

  Parameters q;
  q.add("x", randn(rng, 6, 4));
  const Matrix P = randn(rng, 12, 12);
  expect_gradients([P](Binder& b) { return weighted_sum(b, ad::block_linear(b("x"), P, 3, 4, 3)); }, q);
}

TEST(Autodiff, ReluAwayFromKink) {
  Parameters p;
  Matrix a(2, 2);
  a << 0.5, -0.7, 1.2, -0.1;
  p.add("a", a);
  expect_gradients([](Binder& b) { return weighted_sum(b, ad::relu(b("a"))); }, p);
}

TEST(Autodiff, SharedSubexpressionAccumulates) {
  ad::Tape t;
  Matrix v(1, 1);
  v << 3.0;
  const Var x = t.variable(v);
  const Var y = ad::sum(ad::add(ad::mul(x, x), x));  // x^2 + x
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 7.0);
}

TEST(Autodiff, ShapeErrors) {
  ad::Tape t;
  const Var a = t.constant(Matrix::Ones(2, 3));
  EXPECT_THROW(ad::matmul(a, a), ShapeError);
  EXPECT_THROW(ad::add(a, t.constant(Matrix::Ones(3, 2))), ShapeError);
}

TEST(Nn, DenseTransformerGradients) {
  Rng rng(3);
  Parameters p;
  const Transformer tf("tf", TransformerSpec{2, 2, 4, 8});
  tf.init(p, rng);
  const Dense head{"head", 4, 3, Activation::tanh};
  head.init(p, rng);
  const Matrix qk = randn(rng, 5, 4), v = randn(rng, 5, 4);
  const LossFn f = [&](Binder& b) { return weighted_sum(b, head(b, tf(b, b.constant(qk), b.constant(v)))); };
  const GradCheckReport r = grad_check(f, p, 1e-5);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst_parameter;
}

TEST(Nn, TransformerShapesAndErrors) {
  Rng rng(4);
  Parameters p;
  const Transformer tf("tf", TransformerSpec{1, 4, 8, 16});
  tf.init(p, rng);
  ad::Tape t;
  Binder b(t, p, false);
  const Var out = tf(b, b.constant(randn(rng, 7, 8)), b.constant(randn(rng, 7, 8)));
  EXPECT_EQ(out.rows(), 7);
  EXPECT_EQ(out.cols(), 8);
  EXPECT_THROW(tf(b, b.constant(randn(rng, 7, 8)), b.constant(randn(rng, 6, 8))), ShapeError);
  EXPECT_THROW(Transformer("bad", TransformerSpec{1, 3, 8, 16}), ConfigError);
}

TEST(Nn, ParametersRejectDuplicates) {
  Parameters p;
  p.add("w", Matrix::Ones(1, 1));
  EXPECT_THROW(p.add("w", Matrix::Ones(1, 1)), ConfigError);
  p.at("w")(0, 0) = std::nan("");
  EXPECT_THROW(p.check_finite(), NumericError);
}

TEST(Adam, MatchesHandComputedSteps) {
  AdamConfig cfg;
  cfg.lr = 0.1;
  Adam opt(cfg);
  Parameters p;
  Matrix w(1, 2);
  w << 1.0, -2.0;
  p.add("w", w);
  double m[2] = {0, 0}, v[2] = {0, 0}, x[2] = {1.0, -2.0};
  for (int t = 1; t <= 5; ++t) {
    Gradients g;
    Matrix gm(1, 2);
    gm << 2.0 * x[0], std::sin(x[1]);
    g.emplace("w", gm);
    for (int i = 0; i < 2; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * gm(0, i);
      v[i] = 0.999 * v[i] + 0.001 * gm(0, i) * gm(0, i);
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      x[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    }
    opt.step(p, g);
    EXPECT_NEAR(p.at("w")(0, 0), x[0], 1e-12);
    EXPECT_NEAR(p.at("w")(0, 1), x[1], 1e-12);
  }
  EXPECT_EQ(opt.steps(), 5);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Adam opt;
  Parameters p;
  p.add("w", Matrix::Constant(2, 2, 1.0));
  Gradients g;
  g.emplace("w", Matrix::Constant(2, 2, 5.0));
  opt.step(p, g);
  EXPECT_NEAR(p.at("w")(0, 0), 1.0 - 3e-4, 1e-10);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  Adam opt;
  Parameters p;
  p.add("layer.w", Matrix::Ones(1, 1));
  Gradients g;
  g.emplace("layer.w", Matrix::Constant(1, 1, std::nan("")));
  try {
    opt.step(p, g);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.w"), std::string::npos);
  }
}

TEST(Checkpoint, RoundTripIsFloat32Exact) {
  Rng rng(5);
  Checkpoint ck;
  ck.meta["seed"] = "7";
  ck.tensors.emplace("a", randn(rng, 3, 4));
  ck.tensors.emplace("b/c", randn(rng, 1, 5));
  const auto base = std::filesystem::temp_directory_path() / "rev_ckpt_test";
  save_checkpoint(base, ck);
  const Checkpoint back = load_checkpoint(base);
  EXPECT_EQ(back.meta.at("seed"), "7");
  for (const auto& [name, m] : ck.tensors) {
    const Matrix& r = back.tensors.at(name);
    ASSERT_EQ(r.rows(), m.rows());
    for (Eigen::Index i = 0; i < m.size(); ++i) EXPECT_EQ(r.data()[i], static_cast<double>(static_cast<float>(m.data()[i])));
  }
  // Saving the loaded checkpoint again reproduces the bytes.
  const auto base2 = std::filesystem::temp_directory_path() / "rev_ckpt_test2";
  save_checkpoint(base2, back);
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  EXPECT_EQ(slurp(base.string() + ".bin"), slurp(base2.string() + ".bin"));
  EXPECT_EQ(slurp(base.string() + ".manifest"), slurp(base2.string() + ".manifest"));
}

TEST(Checkpoint, CorruptManifestRaisesDataError) {
  const auto base = std::filesystem::temp_directory_path() / "rev_ckpt_bad";
  {
    std::ofstream(base.string() + ".manifest") << "rev-checkpoint 1\ntensor a 2 2 float32 0\n";
    std::ofstream(base.string() + ".bin", std::ios::binary) << "abc";
  }
  EXPECT_THROW(load_checkpoint(base), DataError);
  { std::ofstream(base.string() + ".manifest") << "something else\n"; }
  EXPECT_THROW(load_checkpoint(base), DataError);
}
