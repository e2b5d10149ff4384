// rev: train, evaluate and inspect Rev trajectory models.
//
// Exit codes: 0 ok, 1 usage or configuration error, 2 data error,
// 3 numeric failure (non-finite values, failed gradient check).

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rev/config.hpp"
#include "rev/data.hpp"
#include "rev/metrics.hpp"
#include "rev/model.hpp"
#include "rev/train.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

void write_file_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw rev::DataError("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

std::string header_line(const rev::RunConfig& c, std::uint64_t seed) {
  return "# config_hash=" + rev::config_hash(c) + " seed=" + std::to_string(seed) + "\n";
}

json report_json(const rev::EvalReport& r, const rev::RunConfig& c, std::uint64_t seed, const std::string& split) {
  json j;
  j["config_hash"] = rev::config_hash(c);
  j["seed"] = seed;
  j["split"] = split;
  j["K"] = r.K;
  j["samples"] = r.count;
  j["minADE"] = r.min.ade;
  j["minFDE"] = r.min.fde;
  j["meanADE"] = r.stats.mean_ade;
  j["stdADE"] = r.stats.std_ade;
  j["meanFDE"] = r.stats.mean_fde;
  j["stdFDE"] = r.stats.std_fde;
  json scenes = json::object();
  for (const auto& [id, m] : r.per_scene) scenes[id] = {{"minADE", m.ade}, {"minFDE", m.fde}};
  j["per_scene"] = scenes;
  return j;
}

const std::vector<rev::Sample>& pick_split(const rev::Splits& sp, const std::string& name) {
  if (name == "train") return sp.train;
  if (name == "val") return sp.val;
  if (name == "test") return sp.test;
  throw rev::ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

struct Loaded {
  rev::RunConfig cfg;
  rev::Splits splits;
};

Loaded load_all(const std::string& config_path) {
  Loaded l{rev::load_run_config(config_path), {}};
  l.splits = rev::load_splits(l.cfg);
  return l;
}

// Loads a checkpoint and verifies it against the configured model.
rev::nn::Parameters load_params(const rev::RevModel& model, const std::string& base) {
  const rev::nn::Checkpoint ck = rev::nn::load_checkpoint(base);
  rev::nn::Parameters p = rev::checkpoint_parameters(ck);
  rev::check_compatible(model.init(0), p);
  return p;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string resume;
  std::string out;
  bool deterministic = false;
  int threads = 0;
};

int cmd_train(const TrainArgs& a) {
  Loaded l = load_all(a.config);
  rev::RunConfig& c = l.cfg;
  if (!a.out.empty()) c.output_dir = a.out;
  if (a.threads > 0) c.threads = a.threads;
  if (a.deterministic) c.threads = 1;
  if (l.splits.train.empty()) throw rev::InsufficientDataError("no training windows in the configured data");

  const rev::RevModel model(c.model);
  rev::TrainState st{model.init(c.seed), rev::nn::Adam(c.adam), 0};
  if (!a.resume.empty()) st = rev::restore_state(model, rev::nn::load_checkpoint(a.resume), c.adam);
  if (st.epoch >= c.epochs) throw rev::ConfigError("checkpoint already completed " + std::to_string(st.epoch) + " epochs");

  const std::vector<rev::Sample> train = rev::preprocess_all(l.splits.train);
  const rev::TrainOptions opt = rev::train_options(c);
  const std::map<std::string, std::string> meta{{"config_hash", rev::config_hash(c)}, {"seed", std::to_string(c.seed)}};
  const fs::path out = c.output_dir;
  fs::create_directories(out);
  write_file_atomic(out / "config.txt", header_line(c, c.seed) + rev::canonical_text(c));

  std::string log = header_line(c, c.seed) + "epoch,loss\n";
  const fs::path log_path = out / "train_log.csv";
  if (!a.resume.empty() && fs::exists(log_path)) {
    std::ifstream in(log_path);
    std::stringstream ss;
    ss << in.rdbuf();
    log = ss.str();
  }
  while (st.epoch < c.epochs) {
    const double loss = rev::train_epoch(model, st, train, opt);
    std::ostringstream row;
    row << st.epoch << ',' << std::setprecision(17) << loss << '\n';
    log += row.str();
    std::cerr << "epoch " << st.epoch << "/" << c.epochs << " loss " << loss << '\n';
    write_file_atomic(log_path, log);
    if (c.checkpoint_every > 0 && st.epoch % c.checkpoint_every == 0)
      rev::nn::save_checkpoint(out / ("checkpoint_epoch" + std::to_string(st.epoch)), rev::make_checkpoint(st, meta));
  }
  rev::nn::save_checkpoint(out / "model", rev::make_checkpoint(st, meta));

  const bool has_test = !l.splits.test.empty();
  const auto& eval_set = has_test ? l.splits.test : l.splits.train;
  const int K = std::min(c.eval_K, c.model.K_g);
  const rev::EvalReport r = rev::evaluate(model, st.params, eval_set, K, false, c.seed, c.threads);
  write_file_atomic(out / "metrics.json", report_json(r, c, c.seed, has_test ? "test" : "train").dump(2) + "\n");
  std::cout << "minADE_" << K << "=" << r.min.ade << " minFDE_" << K << "=" << r.min.fde << '\n';
  return 0;
}

struct EvalArgs {
  std::string config;
  std::string checkpoint;
  std::string split = "test";
  std::string out;
  int K = 0;
  bool sample = false;
  bool linear = false;
};

int cmd_eval(const EvalArgs& a) {
  Loaded l = load_all(a.config);
  const rev::RunConfig& c = l.cfg;
  const int K = a.K > 0 ? a.K : c.eval_K;
  const bool sample = a.sample || c.eval_sample;
  if (K > c.model.K_g && !sample) throw rev::ConfigError("K exceeds K_g; pass --sample to draw with replacement");
  const auto& samples = pick_split(l.splits, a.split);
  rev::EvalReport r;
  if (a.linear) {
    r = rev::evaluate_linear(samples, c.model.t_f);
  } else {
    if (a.checkpoint.empty()) throw rev::ConfigError("--checkpoint is required unless --linear is given");
    const rev::RevModel model(c.model);
    const rev::nn::Parameters params = load_params(model, a.checkpoint);
    r = rev::evaluate(model, params, samples, K, sample, c.seed, c.threads);
  }
  json j = report_json(r, c, c.seed, a.split);
  json rows = json::array();
  for (const rev::SampleMetrics& m : r.per_sample)
    rows.push_back({{"scene", m.scene}, {"agent", m.agent}, {"frame", m.frame}, {"minADE", m.min.ade}, {"minFDE", m.min.fde},
                    {"meanADE", m.stats.mean_ade}, {"stdADE", m.stats.std_ade}, {"meanFDE", m.stats.mean_fde},
                    {"stdFDE", m.stats.std_fde}});
  j["per_sample"] = rows;
  const std::string text = j.dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_file_atomic(a.out, text);
  }
  return 0;
}

struct CurvesArgs {
  std::string config;
  std::string checkpoint;
  std::string split = "test";
  std::string scene;
  std::string out;
  long agent = -1;
  long frame = -1;
  std::vector<double> manual;
};

int cmd_curves(const CurvesArgs& a) {
  if (!a.manual.empty() && a.manual.size() != 4) throw rev::ConfigError("--manual-neighbor takes dx dy vx vy");
  Loaded l = load_all(a.config);
  const rev::RunConfig& c = l.cfg;
  const rev::RevModel model(c.model);
  const rev::nn::Parameters params = load_params(model, a.checkpoint);

  std::vector<rev::Sample> chosen;
  for (const rev::Sample& s : pick_split(l.splits, a.split)) {
    if (!a.scene.empty() && s.scene_id != a.scene) continue;
    if (a.agent >= 0 && s.agent != a.agent) continue;
    if (a.frame >= 0 && s.frame != a.frame) continue;
    chosen.push_back(a.manual.empty() ? s
                                      : rev::inject_manual_neighbor(s, Eigen::RowVector2d(a.manual[0], a.manual[1]),
                                                                    Eigen::RowVector2d(a.manual[2], a.manual[3])));
  }
  if (chosen.empty()) throw rev::InsufficientDataError("curves: the selection matched no samples");

  std::ostringstream csv;
  csv << header_line(c, c.seed);
  bool header = true;
  std::vector<std::vector<rev::CurveSet>> all;
  for (const rev::Sample& s : chosen) {
    all.push_back(rev::sample_curves(model, params, s, model.zero_noise()));
    rev::write_curves_csv(csv, all.back(), s.scene_id + ":" + std::to_string(s.agent) + ":" + std::to_string(s.frame), header);
    header = false;
  }
  rev::write_curves_csv(csv, rev::average_curves(all), "avg", false);
  if (a.out.empty()) {
    std::cout << csv.str();
  } else {
    write_file_atomic(a.out, csv.str());
  }
  return 0;
}

struct AblateArgs {
  std::string config;
  std::string out;
  std::vector<std::string> variants;
  std::vector<std::uint64_t> seeds;
};

int cmd_ablate(const AblateArgs& a) {
  Loaded l = load_all(a.config);
  rev::RunConfig& c = l.cfg;
  if (!a.variants.empty()) c.ablate_variants = a.variants;
  if (!a.seeds.empty()) c.ablate_seeds = a.seeds;
  for (const std::string& v : c.ablate_variants) rev::apply_variant(c.model, v);
  if (l.splits.train.empty() || l.splits.test.empty()) throw rev::InsufficientDataError("ablate needs train and test windows");
  const std::vector<rev::Sample> train = rev::preprocess_all(l.splits.train);
  const int K = std::min(c.eval_K, c.model.K_g);

  std::ostringstream csv;
  csv << "# config_hash=" << rev::config_hash(c) << " seeds=" << rev::detail::join(c.ablate_seeds) << '\n';
  csv << "variant,seed,minADE,minFDE\n" << std::setprecision(17);
  for (const std::string& v : c.ablate_variants) {
    const rev::RevModel model(rev::apply_variant(c.model, v));
    double ade = 0.0, fde = 0.0;
    for (std::uint64_t seed : c.ablate_seeds) {
      rev::TrainOptions opt = rev::train_options(c);
      opt.seed = seed;
      rev::TrainState st{model.init(seed), rev::nn::Adam(c.adam), 0};
      for (int e = 0; e < c.epochs; ++e) rev::train_epoch(model, st, train, opt);
      const rev::EvalReport r = rev::evaluate(model, st.params, l.splits.test, K, false, seed, c.threads);
      csv << v << ',' << seed << ',' << r.min.ade << ',' << r.min.fde << '\n';
      std::cerr << v << " seed " << seed << " minADE " << r.min.ade << " minFDE " << r.min.fde << '\n';
      ade += r.min.ade;
      fde += r.min.fde;
    }
    const auto n = static_cast<double>(c.ablate_seeds.size());
    csv << v << ",mean," << ade / n << ',' << fde / n << '\n';
  }
  const fs::path out = a.out.empty() ? c.output_dir / "ablation.csv" : fs::path(a.out);
  write_file_atomic(out, csv.str());
  std::cout << csv.str();
  return 0;
}

struct SynthArgs {
  std::string config;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  rev::RunConfig c;
  if (!a.config.empty()) c = rev::load_run_config(a.config);
  c.synth.validate();
  const rev::SynthCorpus corpus = rev::synth_latency_scenes(c.synth);
  const fs::path out = a.out.empty() ? c.output_dir / "synth" : fs::path(a.out);
  const std::string tag = "config_hash=" + rev::config_hash(c) + " seed=" + std::to_string(c.synth.seed);

  fs::create_directories(out);
  std::ostringstream manifest;
  manifest << "# " << tag << '\n';
  const int n_train = c.synth.scenes - c.synth_test_scenes;
  for (std::size_t i = 0; i < corpus.scenes.size(); ++i) {
    const std::string file = corpus.scenes[i].id + ".txt";
    const fs::path tmp = out / (file + ".tmp");
    {
      std::ofstream f(tmp, std::ios::trunc);
      if (!f) throw rev::DataError("cannot write " + tmp.string());
      f << rev::format_scene(corpus.scenes[i], {tag, "frame agent x y"});
    }
    fs::rename(tmp, out / file);
    manifest << (static_cast<int>(i) < n_train ? "train " : "test ") << file << '\n';
  }
  json labels = json::array();
  for (const rev::SynthLabel& lb : corpus.labels)
    labels.push_back({{"scene", lb.scene_id}, {"agent", lb.agent}, {"event_frame", lb.event_frame}, {"delay", lb.delay},
                      {"onset_frame", lb.onset_frame}, {"direction", lb.direction}});
  json doc{{"config_hash", rev::config_hash(c)}, {"seed", c.synth.seed}, {"labels", labels}};
  write_file_atomic(out / "labels.json", doc.dump(2) + "\n");
  write_file_atomic(out / "manifest.txt", manifest.str());
  std::cout << "wrote " << corpus.scenes.size() << " scenes to " << out.string() << '\n';
  return 0;
}

struct GradcheckArgs {
  std::string config;
  double tol = 1e-3;
  std::uint64_t seed = 1;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  rev::ModelConfig m = rev::tiny_model_config();
  if (!a.config.empty()) m = rev::load_run_config(a.config).model;
  const rev::nn::GradCheckReport r = rev::model_grad_check(m, a.seed);
  std::cout << "checked " << r.checked << " entries, max relative error " << r.max_rel_error << " at " << r.worst_parameter
            << "[" << r.worst_index << "] (analytic " << r.worst_analytic << ", numeric " << r.worst_numeric << ")\n";
  if (!r.passed(a.tol)) {
    std::cout << "FAIL: tolerance " << a.tol << '\n';
    return kExitNumeric;
  }
  std::cout << "PASS: tolerance " << a.tol << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rev trajectory prediction: training, evaluation and latency curves"};
  app.require_subcommand(1);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "train a model from a config file");
  train->add_option("-c,--config", ta.config, "config file")->required();
  train->add_option("--resume", ta.resume, "checkpoint base path to resume from");
  train->add_option("-o,--out", ta.out, "output directory (overrides output.dir)");
  train->add_option("--threads", ta.threads, "worker threads");
  train->add_flag("--deterministic", ta.deterministic, "force the single-threaded reference path");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("-c,--config", ea.config, "config file")->required();
  eval->add_option("--checkpoint", ea.checkpoint, "checkpoint base path");
  eval->add_option("-K", ea.K, "number of generations to score");
  eval->add_option("--split", ea.split, "train, val or test");
  eval->add_option("-o,--out", ea.out, "write the JSON report here instead of stdout");
  eval->add_flag("--sample", ea.sample, "draw generations at random instead of taking the first K");
  eval->add_flag("--linear", ea.linear, "score the least-squares extrapolation baseline");

  CurvesArgs ca;
  auto* curves = app.add_subcommand("curves", "export reverberation curves as CSV");
  curves->add_option("-c,--config", ca.config, "config file")->required();
  curves->add_option("--checkpoint", ca.checkpoint, "checkpoint base path")->required();
  curves->add_option("--split", ca.split, "train, val or test");
  curves->add_option("--scene", ca.scene, "scene id");
  curves->add_option("--agent", ca.agent, "agent id");
  curves->add_option("--frame", ca.frame, "first observed frame");
  curves->add_option("--manual-neighbor", ca.manual, "inject a neighbor: dx dy vx vy")->expected(4);
  curves->add_option("-o,--out", ca.out, "output CSV (default stdout)");

  AblateArgs aa;
  auto* ablate = app.add_subcommand("ablate", "train and evaluate the ablation grid");
  ablate->add_option("-c,--config", aa.config, "config file")->required();
  ablate->add_option("--variants", aa.variants, "variants, e.g. a1 a4 full")->delimiter(',');
  ablate->add_option("--seeds", aa.seeds, "seeds")->delimiter(',');
  ablate->add_option("-o,--out", aa.out, "output CSV");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "write a synthetic latency corpus");
  synth->add_option("-c,--config", sa.config, "config file ([synth] section)");
  synth->add_option("-o,--out", sa.out, "output directory");

  GradcheckArgs ga;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the model gradient");
  grad->add_option("-c,--config", ga.config, "config file (default: tiny built-in model)");
  grad->add_option("--tol", ga.tol, "maximum relative error");
  grad->add_option("--seed", ga.seed, "initialization seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ea);
    if (*curves) return cmd_curves(ca);
    if (*ablate) return cmd_ablate(aa);
    if (*synth) return cmd_synth(sa);
    if (*grad) return cmd_gradcheck(ga);
  } catch (const rev::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const rev::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const rev::Error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
