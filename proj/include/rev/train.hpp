#pragma once

// Training, evaluation and curve extraction on top of RevModel.
//
// Reproducibility: the epoch order is a shuffle seeded by (seed, epoch) and
// the latent noise of every sample is seeded by (seed, epoch, sample index),
// so results do not depend on how samples are distributed over worker
// threads. Per-sample gradients are reduced in batch order.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "rev/config.hpp"
#include "rev/data.hpp"
#include "rev/metrics.hpp"
#include "rev/model.hpp"
#include "rev/nn.hpp"

namespace rev {

inline nn::Rng derived_rng(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0, std::uint64_t d = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b),
                    static_cast<std::uint32_t>(b >> 32), static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32),
                    static_cast<std::uint32_t>(d), static_cast<std::uint32_t>(d >> 32)};
  return nn::Rng(seq);
}

// ----------------------------------------------------------------------------
// Data assembly

struct Splits {
  std::vector<Sample> train, val, test;
  std::vector<SynthLabel> labels;  // synthetic corpora only
};

inline std::vector<Sample> windows_of(const std::vector<Scene>& scenes, const RunConfig& c) {
  std::vector<Sample> out;
  for (const Scene& s : scenes) {
    std::vector<Sample> w = make_windows(s, c.model.t_h, c.model.t_f, c.stride);
    out.insert(out.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  return out;
}

inline std::vector<Scene> load_scenes(const std::vector<std::filesystem::path>& files, double dt) {
  std::vector<Scene> out;
  for (const auto& f : files) out.push_back(load_scene(f, dt));
  return out;
}

inline Splits load_splits(const RunConfig& c) {
  Splits sp;
  if (c.use_synth) {
    SynthCorpus corpus = synth_latency_scenes(c.synth);
    const auto n_train = static_cast<std::size_t>(c.synth.scenes - c.synth_test_scenes);
    std::vector<Scene> train(corpus.scenes.begin(), corpus.scenes.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<Scene> test(corpus.scenes.begin() + static_cast<std::ptrdiff_t>(n_train), corpus.scenes.end());
    sp.train = windows_of(train, c);
    sp.test = windows_of(test, c);
    sp.labels = std::move(corpus.labels);
    return sp;
  }
  std::vector<std::filesystem::path> tr = c.train, va = c.val, te = c.test;
  if (!c.manifest.empty()) {
    const SplitManifest m = load_split_manifest(c.manifest);
    tr.insert(tr.end(), m.train.begin(), m.train.end());
    va.insert(va.end(), m.val.begin(), m.val.end());
    te.insert(te.end(), m.test.begin(), m.test.end());
  }
  sp.train = windows_of(load_scenes(tr, c.model.dt), c);
  sp.val = windows_of(load_scenes(va, c.model.dt), c);
  sp.test = windows_of(load_scenes(te, c.model.dt), c);
  return sp;
}

// ----------------------------------------------------------------------------
// Training

struct TrainOptions {
  int batch_size = 1000;
  int epochs = 200;
  std::uint64_t seed = 1;
  int threads = 1;
  nn::AdamConfig adam;
};

inline TrainOptions train_options(const RunConfig& c) { return {c.batch_size, c.epochs, c.seed, c.threads, c.adam}; }

struct TrainState {
  nn::Parameters params;
  nn::Adam adam;
  int epoch = 0;  // completed epochs
};

struct SampleGradient {
  double loss = 0.0;
  nn::Gradients grads;
};

// Loss and parameter gradients of one preprocessed sample, with the loss
// scaled by `weight`.
inline SampleGradient sample_gradient(const RevModel& model, const nn::Parameters& params, const Sample& s,
                                      const ModelNoise& z, double weight) {
  ad::Tape tape;
  nn::Binder b(tape, params, true);
  const RevModel::Forward f = model.forward(b, s, z);
  const BestOfK l = best_of_k_loss(f.prediction, s.gt.values);
  SampleGradient out;
  out.loss = l.loss.value()(0, 0);
  const ad::Var scaled = ad::scale(l.loss, weight);
  tape.backward(scaled);
  out.grads = b.gradients();
  return out;
}

inline void run_parallel(std::size_t n, int threads, const std::function<void(std::size_t)>& job) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) job(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// One pass over `samples` (already preprocessed). Returns the mean loss.
inline double train_epoch(const RevModel& model, TrainState& state, const std::vector<Sample>& samples,
                          const TrainOptions& opt) {
  if (samples.empty()) throw InsufficientDataError("train: no training samples");
  const int epoch = state.epoch + 1;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  nn::Rng shuffle_rng = derived_rng(opt.seed, 0x5eedULL, static_cast<std::uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  double total = 0.0;
  const auto bs = static_cast<std::size_t>(opt.batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t n = std::min(bs, order.size() - start);
    std::vector<SampleGradient> parts(n);
    run_parallel(n, opt.threads, [&](std::size_t j) {
      const std::size_t idx = order[start + j];
      nn::Rng rng = derived_rng(opt.seed, 0x2015eULL, static_cast<std::uint64_t>(epoch), idx);
      parts[j] = sample_gradient(model, state.params, samples[idx], model.sample_noise(rng), 1.0 / static_cast<double>(n));
    });
    nn::Gradients sum;
    for (const SampleGradient& p : parts) {
      total += p.loss;
      for (const auto& [name, g] : p.grads) {
        auto it = sum.find(name);
        if (it == sum.end()) {
          sum.emplace(name, g);
        } else {
          it->second += g;
        }
      }
    }
    state.adam.step(state.params, sum);
  }
  state.params.check_finite();
  state.epoch = epoch;
  return total / static_cast<double>(samples.size());
}

inline std::vector<Sample> preprocess_all(const std::vector<Sample>& samples) {
  std::vector<Sample> out;
  out.reserve(samples.size());
  for (const Sample& s : samples) out.push_back(preprocess(s));
  return out;
}

// ----------------------------------------------------------------------------
// Checkpoints: parameters, Adam moments and bookkeeping.

inline nn::Checkpoint make_checkpoint(const TrainState& st, const std::map<std::string, std::string>& meta) {
  nn::Checkpoint ck;
  ck.meta = meta;
  ck.meta["epoch"] = std::to_string(st.epoch);
  ck.meta["adam_steps"] = std::to_string(st.adam.steps());
  for (const auto& [name, m] : st.params.tensors()) ck.tensors.emplace("param/" + name, m);
  for (const auto& [name, m] : st.adam.first_moments()) ck.tensors.emplace("adam_m/" + name, m);
  for (const auto& [name, m] : st.adam.second_moments()) ck.tensors.emplace("adam_v/" + name, m);
  return ck;
}

inline nn::Parameters checkpoint_parameters(const nn::Checkpoint& ck) {
  nn::Parameters p;
  for (const auto& [name, m] : ck.tensors)
    if (name.rfind("param/", 0) == 0) p.add(name.substr(6), m);
  return p;
}

// Compares checkpoint tensors against a freshly initialized model and
// reports every missing, extra or differently shaped tensor.
inline void check_compatible(const nn::Parameters& expected, const nn::Parameters& actual) {
  std::string diff;
  for (const auto& [name, m] : expected.tensors()) {
    if (!actual.contains(name)) {
      diff += "\n  missing " + name + " (" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
    } else if (const Matrix& a = actual.at(name); a.rows() != m.rows() || a.cols() != m.cols()) {
      diff += "\n  " + name + ": config expects " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
              ", checkpoint has " + std::to_string(a.rows()) + "x" + std::to_string(a.cols());
    }
  }
  for (const auto& [name, m] : actual.tensors())
    if (!expected.contains(name)) diff += "\n  unexpected " + name;
  if (!diff.empty()) throw ConfigError("checkpoint does not match the model configuration:" + diff);
}

inline TrainState restore_state(const RevModel& model, const nn::Checkpoint& ck, const nn::AdamConfig& adam) {
  TrainState st{model.init(0), nn::Adam(adam), 0};
  nn::Parameters loaded = checkpoint_parameters(ck);
  check_compatible(st.params, loaded);
  st.params = std::move(loaded);
  std::map<std::string, Matrix> m1, m2;
  for (const auto& [name, m] : ck.tensors) {
    if (name.rfind("adam_m/", 0) == 0) m1.emplace(name.substr(7), m);
    if (name.rfind("adam_v/", 0) == 0) m2.emplace(name.substr(7), m);
  }
  st.adam.first_moments() = std::move(m1);
  st.adam.second_moments() = std::move(m2);
  if (auto it = ck.meta.find("adam_steps"); it != ck.meta.end()) st.adam.set_steps(std::stol(it->second));
  if (auto it = ck.meta.find("epoch"); it != ck.meta.end()) st.epoch = std::stoi(it->second);
  return st;
}

// ----------------------------------------------------------------------------
// Evaluation

struct SampleMetrics {
  std::string scene;
  long agent = 0;
  long frame = 0;
  AdeFde min;
  AdeFdeStats stats;
};

struct EvalReport {
  int K = 0;
  std::size_t count = 0;
  AdeFde min;         // mean over samples of minADE_K / minFDE_K
  AdeFdeStats stats;  // mean over samples of meanADE_K etc.
  std::vector<SampleMetrics> per_sample;
  std::map<std::string, AdeFde> per_scene;
};

// K generations out of the model's K_g: the first K, or when `sample` is set
// a random choice (without replacement when K <= K_g, with replacement above).
inline std::vector<Matrix> select_generations(const std::vector<Matrix>& all, int K, bool sample, nn::Rng& rng) {
  const auto Kg = static_cast<int>(all.size());
  if (!sample) {
    if (K > Kg) throw ConfigError("K=" + std::to_string(K) + " exceeds K_g=" + std::to_string(Kg));
    return {all.begin(), all.begin() + K};
  }
  std::vector<Matrix> out;
  if (K <= Kg) {
    std::vector<int> idx(static_cast<std::size_t>(Kg));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int i = 0; i < K; ++i) out.push_back(all[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
  } else {
    std::uniform_int_distribution<int> pick(0, Kg - 1);
    for (int i = 0; i < K; ++i) out.push_back(all[static_cast<std::size_t>(pick(rng))]);
  }
  return out;
}

inline EvalReport summarize(int K, std::vector<SampleMetrics> rows) {
  if (rows.empty()) throw InsufficientDataError("evaluate: empty split");
  EvalReport r;
  r.K = K;
  r.count = rows.size();
  std::map<std::string, std::pair<AdeFde, int>> scene;
  for (const SampleMetrics& m : rows) {
    r.min.ade += m.min.ade;
    r.min.fde += m.min.fde;
    r.stats.mean_ade += m.stats.mean_ade;
    r.stats.std_ade += m.stats.std_ade;
    r.stats.mean_fde += m.stats.mean_fde;
    r.stats.std_fde += m.stats.std_fde;
    auto& [acc, n] = scene[m.scene];
    acc.ade += m.min.ade;
    acc.fde += m.min.fde;
    ++n;
  }
  const auto n = static_cast<double>(rows.size());
  r.min.ade /= n;
  r.min.fde /= n;
  r.stats.mean_ade /= n;
  r.stats.std_ade /= n;
  r.stats.mean_fde /= n;
  r.stats.std_fde /= n;
  for (const auto& [id, v] : scene) r.per_scene[id] = AdeFde{v.first.ade / v.second, v.first.fde / v.second};
  r.per_sample = std::move(rows);
  return r;
}

// Samples are in world coordinates.
inline EvalReport evaluate(const RevModel& model, const nn::Parameters& params, const std::vector<Sample>& samples, int K,
                           bool sample_generations, std::uint64_t seed, int threads = 1) {
  std::vector<SampleMetrics> rows(samples.size());
  run_parallel(samples.size(), threads, [&](std::size_t i) {
    nn::Rng rng = derived_rng(seed, 0xe7a1ULL, i);
    const PredictionBatch p = model.predict(params, samples[i], rng);
    const std::vector<Matrix> preds = select_generations(p.values, K, sample_generations, rng);
    const Sample& s = samples[i];
    rows[i] = SampleMetrics{s.scene_id, s.agent, s.frame, min_ade_fde(preds, s.gt.values), stat_ade_fde(preds, s.gt.values)};
  });
  return summarize(K, std::move(rows));
}

// Least-squares extrapolation as the single prediction, fitted in the same
// translated frame the model uses so that a linear-only model matches it
// bit for bit.
inline EvalReport evaluate_linear(const std::vector<Sample>& samples, int t_f) {
  std::vector<SampleMetrics> rows;
  for (const Sample& s : samples) {
    const Sample local = preprocess(s);
    Matrix pred = linear_fit(local.ego, t_f).predicted.values;
    pred.rowwise() += local.origin - s.origin;
    const std::vector<Matrix> preds{std::move(pred)};
    rows.push_back(SampleMetrics{s.scene_id, s.agent, s.frame, min_ade_fde(preds, s.gt.values), stat_ade_fde(preds, s.gt.values)});
  }
  return summarize(1, std::move(rows));
}

// ----------------------------------------------------------------------------
// Curves

inline std::vector<CurveSet> sample_curves(const RevModel& model, const nn::Parameters& params, const Sample& s,
                                           const ModelNoise& z) {
  const PredictionBatch p = model.predict(params, s, z);
  const int T_h = model.config().obs_spectral_steps();
  return all_curves(p.non.present ? &p.non.R : nullptr, p.non.present ? &p.non.G : nullptr,
                    p.soc.present ? &p.soc.R : nullptr, p.soc.present ? &p.soc.G : nullptr, T_h);
}

// Dataset average; latent noise is zero so that curves are reproducible.
inline std::vector<CurveSet> dataset_average_curves(const RevModel& model, const nn::Parameters& params,
                                                    const std::vector<Sample>& samples) {
  if (samples.empty()) throw InsufficientDataError("average_curves: empty split");
  std::vector<std::vector<CurveSet>> all;
  all.reserve(samples.size());
  for (const Sample& s : samples) all.push_back(sample_curves(model, params, s, model.zero_noise()));
  return average_curves(all);
}

}  // namespace rev

namespace rev {

// ----------------------------------------------------------------------------
// End-to-end gradient check on a small random scene.

inline ModelConfig tiny_model_config() {
  ModelConfig m;
  m.t_h = 8;
  m.t_f = 12;
  m.d = 8;
  m.K_g = 4;
  m.n_theta = 4;
  m.tf_layers = 1;
  m.tf_heads = 2;
  return m;
}

inline Sample toy_sample(const ModelConfig& m, std::uint64_t seed, int neighbors = 3) {
  nn::Rng rng = derived_rng(seed, 0x70bULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto walk = [&](int steps, Eigen::RowVector2d p) {
    Matrix out(steps, 2);
    Eigen::RowVector2d v(gauss(rng), gauss(rng));
    for (int i = 0; i < steps; ++i) {
      v += 0.2 * Eigen::RowVector2d(gauss(rng), gauss(rng));
      p += m.dt * v;
      out.row(i) = p;
    }
    return out;
  };
  const Matrix ego = walk(m.t_h + m.t_f, Eigen::RowVector2d::Zero());
  Sample s;
  s.scene_id = "toy";
  s.ego = TimeSeq{ego.topRows(m.t_h), m.dt};
  s.gt = TimeSeq{ego.bottomRows(m.t_f), m.dt};
  for (int j = 0; j < neighbors; ++j)
    s.neighbors.push_back(TimeSeq{walk(m.t_h, Eigen::RowVector2d(3.0 * gauss(rng), 3.0 * gauss(rng))), m.dt});
  return preprocess(s);
}

// The value-projection biases sit in a region of high curvature, so a step
// of 1e-5 leaves O(h^2) truncation error near 1e-2; 1e-6 keeps both that and
// round-off well below 1e-3.
inline nn::GradCheckReport model_grad_check(const ModelConfig& cfg, std::uint64_t seed, double h = 1e-6) {
  const RevModel model(cfg);
  const nn::Parameters params = model.init(seed);
  const Sample s = toy_sample(cfg, seed);
  nn::Rng rng = derived_rng(seed, 0x9cULL);
  const ModelNoise z = model.sample_noise(rng);
  const nn::LossFn loss = [&](nn::Binder& b) {
    return best_of_k_loss(model.forward(b, s, z).prediction, s.gt.values).loss;
  };
  return nn::grad_check(loss, params, h);
}

}  // namespace rev
