#pragma once

// Small differentiable building blocks on top of rev::ad: a named parameter
// store, dense layers, MLPs, a pre-norm Transformer encoder-decoder, Adam,
// finite-difference gradient checking and the checkpoint format.

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rev/autodiff.hpp"
#include "rev/errors.hpp"

namespace rev::nn {

using ad::Tape;
using ad::Var;

using Rng = std::mt19937_64;
using Gradients = std::map<std::string, Matrix>;

class Parameters {
 public:
  void add(const std::string& name, Matrix value) {
    if (tensors_.count(name) != 0) throw ConfigError("duplicate parameter name '" + name + "'");
    tensors_.emplace(name, std::move(value));
  }

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  const Matrix& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }
  Matrix& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return it->second;
  }

  const std::map<std::string, Matrix>& tensors() const { return tensors_; }
  std::map<std::string, Matrix>& tensors() { return tensors_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, m] : tensors_) n += static_cast<std::size_t>(m.size());
    return n;
  }

  void check_finite() const {
    for (const auto& [name, m] : tensors_)
      if (!m.allFinite()) throw NumericError("parameter '" + name + "' became non-finite");
  }

 private:
  std::map<std::string, Matrix> tensors_;
};

// Binds parameters to a tape on first use and collects their gradients.
class Binder {
 public:
  Binder(Tape& tape, const Parameters& params, bool trainable = true)
      : tape_(tape), params_(params), trainable_(trainable) {}

  Var operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const Matrix& value = params_.at(name);
    Var v = trainable_ ? tape_.variable(value) : tape_.constant(value);
    bound_.emplace(name, v);
    return v;
  }

  Tape& tape() { return tape_; }
  const Parameters& parameters() const { return params_; }

  Var constant(Matrix m) { return tape_.constant(std::move(m)); }

  // Gradients of every bound parameter; call after tape().backward().
  Gradients gradients() const {
    Gradients g;
    for (const auto& [name, v] : bound_) g.emplace(name, tape_.grad(v));
    return g;
  }

 private:
  Tape& tape_;
  const Parameters& params_;
  bool trainable_;
  std::map<std::string, Var> bound_;
};

enum class Activation { none, relu, tanh };

inline Var activate(Var x, Activation act) {
  switch (act) {
    case Activation::relu: return ad::relu(x);
    case Activation::tanh: return ad::tanh(x);
    case Activation::none: return x;
  }
  return x;
}

inline Matrix xavier_uniform(int in, int out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(in, out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return w;
}

struct Dense {
  std::string name;
  int in = 0;
  int out = 0;
  Activation act = Activation::none;
  double init_gain = 1.0;

  void init(Parameters& p, Rng& rng) const {
    p.add(name + ".w", init_gain * xavier_uniform(in, out, rng));
    p.add(name + ".b", Matrix::Zero(1, out));
  }

  Var operator()(Binder& b, Var x) const {
    if (x.cols() != in) {
      throw ShapeError(name + ": expected input width " + std::to_string(in) + ", got " + std::to_string(x.cols()));
    }
    return activate(ad::add_bias(ad::matmul(x, b(name + ".w")), b(name + ".b")), act);
  }
};

struct Mlp {
  std::vector<Dense> layers;

  // dims = {in, hidden..., out}; act applies to every layer.
  static Mlp make(const std::string& name, const std::vector<int>& dims, Activation act) {
    Mlp m;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i)
      m.layers.push_back(Dense{name + ".l" + std::to_string(i), dims[i], dims[i + 1], act});
    return m;
  }

  void init(Parameters& p, Rng& rng) const {
    for (const Dense& d : layers) d.init(p, rng);
  }

  Var operator()(Binder& b, Var x) const {
    for (const Dense& d : layers) x = d(b, x);
    return x;
  }
};

struct TransformerSpec {
  int layers = 2;
  int heads = 8;
  int model_dim = 128;
  int ff_dim = 512;
};

// Sinusoidal position encodings, one row per position.
inline Matrix positional_encoding(int length, int dim) {
  Matrix pe(length, dim);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  }
  return pe;
}

// Multi-head attention with projections <name>.{wq,wk,wv,wo,bo}.
struct Attention {
  std::string name;
  int dim = 0;
  int heads = 1;

  void init(Parameters& p, Rng& rng) const {
    p.add(name + ".wq", xavier_uniform(dim, dim, rng));
    p.add(name + ".wk", xavier_uniform(dim, dim, rng));
    p.add(name + ".wv", xavier_uniform(dim, dim, rng));
    p.add(name + ".wo", xavier_uniform(dim, dim, rng));
    p.add(name + ".bo", Matrix::Zero(1, dim));
  }

  Var operator()(Binder& b, Var queries, Var keys, Var values) const {
    if (keys.rows() != values.rows()) throw ShapeError(name + ": key and value lengths differ");
    const Var Q = ad::matmul(queries, b(name + ".wq"));
    const Var K = ad::matmul(keys, b(name + ".wk"));
    const Var V = ad::matmul(values, b(name + ".wv"));
    const int head_dim = dim / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<Var> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      const Var q = ad::slice_cols(Q, h * head_dim, head_dim);
      const Var k = ad::slice_cols(K, h * head_dim, head_dim);
      const Var v = ad::slice_cols(V, h * head_dim, head_dim);
      const Var scores = ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt);
      outs.push_back(ad::matmul(ad::softmax_rows(scores), v));
    }
    const Var merged = heads == 1 ? outs.front() : ad::concat_cols(outs);
    return ad::add_bias(ad::matmul(merged, b(name + ".wo")), b(name + ".bo"));
  }
};

struct LayerNorm {
  std::string name;
  int dim = 0;

  void init(Parameters& p, Rng&) const {
    p.add(name + ".g", Matrix::Ones(1, dim));
    p.add(name + ".b", Matrix::Zero(1, dim));
  }

  Var operator()(Binder& b, Var x) const { return ad::layer_norm(x, b(name + ".g"), b(name + ".b")); }
};

// Pre-norm encoder-decoder. The encoder self-attends over the query/key
// sequence; every decoder layer attends with queries and keys taken from the
// encoder memory and values taken from the decoder stream, which starts at
// the embedded value sequence. Output length equals the query length; there
// is no autoregressive unrolling.
class Transformer {
 public:
  Transformer() = default;
  Transformer(std::string name, TransformerSpec spec) : name_(std::move(name)), spec_(spec) {
    if (spec_.heads < 1 || spec_.model_dim % spec_.heads != 0) {
      throw ConfigError(name_ + ": model_dim " + std::to_string(spec_.model_dim) + " not divisible by heads " +
                        std::to_string(spec_.heads));
    }
    for (int l = 0; l < spec_.layers; ++l) {
      const std::string e = name_ + ".enc" + std::to_string(l);
      enc_.push_back(Block{LayerNorm{e + ".ln1", d()}, Attention{e + ".att", d(), spec_.heads}, LayerNorm{e + ".ln2", d()},
                           Dense{e + ".ff1", d(), spec_.ff_dim, Activation::relu},
                           Dense{e + ".ff2", spec_.ff_dim, d(), Activation::none}});
      const std::string dn = name_ + ".dec" + std::to_string(l);
      dec_.push_back(Block{LayerNorm{dn + ".ln1", d()}, Attention{dn + ".att", d(), spec_.heads},
                           LayerNorm{dn + ".ln2", d()}, Dense{dn + ".ff1", d(), spec_.ff_dim, Activation::relu},
                           Dense{dn + ".ff2", spec_.ff_dim, d(), Activation::none}});
    }
    enc_norm_ = LayerNorm{name_ + ".enc_norm", d()};
    dec_norm_ = LayerNorm{name_ + ".dec_norm", d()};
  }

  const TransformerSpec& spec() const { return spec_; }

  void init(Parameters& p, Rng& rng) const {
    for (const Block& blk : enc_) blk.init(p, rng);
    for (const Block& blk : dec_) blk.init(p, rng);
    enc_norm_.init(p, rng);
    dec_norm_.init(p, rng);
  }

  Var operator()(Binder& b, Var queries_keys, Var values) const {
    if (queries_keys.cols() != d() || values.cols() != d()) throw ShapeError(name_ + ": input width must equal model_dim");
    if (queries_keys.rows() != values.rows()) throw ShapeError(name_ + ": query and value sequence lengths differ");
    const int L = static_cast<int>(queries_keys.rows());
    Var x = ad::add(queries_keys, b.constant(positional_encoding(L, d())));
    for (const Block& blk : enc_) {
      const Var h = blk.ln1(b, x);
      x = ad::add(x, blk.att(b, h, h, h));
      x = ad::add(x, blk.ff2(b, blk.ff1(b, blk.ln2(b, x))));
    }
    const Var memory = enc_norm_(b, x);
    Var y = values;
    for (const Block& blk : dec_) {
      y = ad::add(y, blk.att(b, memory, memory, blk.ln1(b, y)));
      y = ad::add(y, blk.ff2(b, blk.ff1(b, blk.ln2(b, y))));
    }
    return dec_norm_(b, y);
  }

 private:
  struct Block {
    LayerNorm ln1;
    Attention att;
    LayerNorm ln2;
    Dense ff1;
    Dense ff2;

    void init(Parameters& p, Rng& rng) const {
      ln1.init(p, rng);
      att.init(p, rng);
      ln2.init(p, rng);
      ff1.init(p, rng);
      ff2.init(p, rng);
    }
  };

  int d() const { return spec_.model_dim; }

  std::string name_;
  TransformerSpec spec_;
  std::vector<Block> enc_;
  std::vector<Block> dec_;
  LayerNorm enc_norm_;
  LayerNorm dec_norm_;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Parameters missing from a gradient map are
// treated as having zero gradient.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(Parameters& params, const Gradients& grads) {
    for (const auto& [name, g] : grads) {
      if (!g.allFinite()) throw NumericError("non-finite gradient for parameter '" + name + "'");
    }
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params.tensors()) {
      Matrix& m = moment(m_, name, p);
      Matrix& v = moment(v_, name, p);
      auto it = grads.find(name);
      if (it != grads.end()) {
        if (it->second.rows() != p.rows() || it->second.cols() != p.cols())
          throw ShapeError("gradient shape mismatch for parameter '" + name + "'");
        m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * it->second;
        v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * it->second.cwiseAbs2();
      } else {
        m *= cfg_.beta1;
        v *= cfg_.beta2;
      }
      p.array() -= cfg_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.eps);
    }
  }

  const AdamConfig& config() const { return cfg_; }
  AdamConfig& config() { return cfg_; }
  long steps() const { return t_; }
  void set_steps(long t) { t_ = t; }
  std::map<std::string, Matrix>& first_moments() { return m_; }
  std::map<std::string, Matrix>& second_moments() { return v_; }
  const std::map<std::string, Matrix>& first_moments() const { return m_; }
  const std::map<std::string, Matrix>& second_moments() const { return v_; }

 private:
  static Matrix& moment(std::map<std::string, Matrix>& store, const std::string& name, const Matrix& like) {
    auto it = store.find(name);
    if (it == store.end()) it = store.emplace(name, Matrix::Zero(like.rows(), like.cols())).first;
    return it->second;
  }

  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, Matrix> m_;
  std::map<std::string, Matrix> v_;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  Eigen::Index worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;

  bool passed(double tol) const { return max_rel_error <= tol; }
};

using LossFn = std::function<Var(Binder&)>;

// Central-difference check of d(loss)/d(params). Relative error per entry is
// |a - n| / max(|a|, |n|, abs_floor). `max_per_tensor` caps the entries
// probed per tensor (evenly strided); 0 probes all of them.
inline GradCheckReport grad_check(const LossFn& loss, const Parameters& params, double h = 1e-5,
                                  std::size_t max_per_tensor = 0, double abs_floor = 1e-6) {
  Gradients analytic;
  {
    Tape tape;
    Binder b(tape, params, true);
    const Var l = loss(b);
    tape.backward(l);
    analytic = b.gradients();
  }
  auto eval = [&](const Parameters& p) {
    Tape tape;
    Binder b(tape, p, false);
    return loss(b).value()(0, 0);
  };

  GradCheckReport rep;
  Parameters probe = params;
  for (const auto& [name, a] : analytic) {
    Matrix& w = probe.at(name);
    const Eigen::Index n = w.size();
    const Eigen::Index stride =
        max_per_tensor == 0 ? 1 : std::max<Eigen::Index>(1, n / static_cast<Eigen::Index>(max_per_tensor));
    for (Eigen::Index i = 0; i < n; i += stride) {
      const double orig = w.data()[i];
      w.data()[i] = orig + h;
      const double up = eval(probe);
      w.data()[i] = orig - h;
      const double down = eval(probe);
      w.data()[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double an = a.data()[i];
      const double rel = std::abs(an - numeric) / std::max({std::abs(an), std::abs(numeric), abs_floor});
      ++rep.checked;
      if (rel > rep.max_rel_error || rep.worst_index < 0) {
        rep.max_rel_error = rel;
        rep.worst_parameter = name;
        rep.worst_index = i;
        rep.worst_analytic = an;
        rep.worst_numeric = numeric;
      }
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Checkpoint format
//
// <base>.manifest is UTF-8 text:
//   rev-checkpoint 1
//   meta <key> <value...>                      (zero or more)
//   tensor <name> <rows> <cols> float32 <byte offset>
// <base>.bin is the concatenation of every tensor as little-endian IEEE-754
// float32, row-major, in manifest order (names sorted), with no padding.
// ---------------------------------------------------------------------------

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::map<std::string, Matrix> tensors;
};

namespace detail {

inline void append_f32_le(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

inline float read_f32_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

inline void write_atomic(const std::filesystem::path& path, const std::string& data) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& base, const Checkpoint& ckpt) {
  std::ostringstream manifest;
  std::string blob;
  manifest << "rev-checkpoint 1\n";
  for (const auto& [k, v] : ckpt.meta) manifest << "meta " << k << ' ' << v << '\n';
  for (const auto& [name, m] : ckpt.tensors) {
    if (name.find_first_of(" \t\n") != std::string::npos) throw ConfigError("tensor name contains whitespace: " + name);
    manifest << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << " float32 " << blob.size() << '\n';
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) detail::append_f32_le(blob, m(r, c));
  }
  detail::write_atomic(base.string() + ".bin", blob);
  detail::write_atomic(base.string() + ".manifest", manifest.str());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& base) {
  const std::string mpath = base.string() + ".manifest";
  const std::string bpath = base.string() + ".bin";
  std::ifstream min(mpath);
  if (!min) throw DataError("cannot open checkpoint manifest " + mpath);
  std::ifstream bin(bpath, std::ios::binary);
  if (!bin) throw DataError("cannot open checkpoint blob " + bpath);
  const std::string blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  Checkpoint ckpt;
  std::string line;
  int lineno = 0;
  while (std::getline(min, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (lineno == 1) {
      int version = 0;
      ls >> version;
      if (tag != "rev-checkpoint" || version != 1) throw DataError("not a rev checkpoint manifest", lineno);
      continue;
    }
    if (tag == "meta") {
      std::string key, value;
      ls >> key;
      std::getline(ls >> std::ws, value);
      ckpt.meta[key] = value;
    } else if (tag == "tensor") {
      std::string name, dtype;
      long rows = 0, cols = 0;
      std::size_t offset = 0;
      if (!(ls >> name >> rows >> cols >> dtype >> offset) || rows < 0 || cols < 0)
        throw DataError("malformed tensor entry", lineno);
      if (dtype != "float32") throw DataError("unsupported dtype " + dtype, lineno);
      const std::size_t bytes = static_cast<std::size_t>(rows * cols) * 4;
      if (offset + bytes > blob.size()) throw DataError("tensor " + name + " overruns the blob", lineno);
      Matrix m(rows, cols);
      const auto* p = reinterpret_cast<const unsigned char*>(blob.data() + offset);
      for (long r = 0; r < rows; ++r)
        for (long c = 0; c < cols; ++c) m(r, c) = detail::read_f32_le(p + 4 * (r * cols + c));
      ckpt.tensors.emplace(name, std::move(m));
    } else {
      throw DataError("unknown manifest entry '" + tag + "'", lineno);
    }
  }
  if (lineno == 0) throw DataError("empty checkpoint manifest " + mpath);
  return ckpt;
}

}  // namespace rev::nn
