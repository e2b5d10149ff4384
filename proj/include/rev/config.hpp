#pragma once

// Run configuration.
//
// Grammar (one item per line):
//
//   # comment            ; comment
//   [section]
//   key = value
//
// Keys are addressed as "section.key". Lists are comma separated. Unknown
// keys and malformed values are rejected with the offending line number.
//
//   [model]   t_h t_f dt d K_g n_theta transform use_linear use_non use_soc
//             use_R use_G per_step_partitions tf_layers tf_heads ff_dim
//   [optim]   lr beta1 beta2 eps batch_size epochs seed threads checkpoint_every
//   [data]    manifest train val test stride synth
//   [synth]   t_h t_f dt scenes agents event_frame delays duration turn
//             noise speed slowdown arena seed test_scenes
//   [eval]    K sample
//   [ablate]  variants seeds
//   [output]  dir
//
// The environment variable REV_OUTPUT_DIR overrides output.dir.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rev/data.hpp"
#include "rev/errors.hpp"
#include "rev/model.hpp"
#include "rev/nn.hpp"

namespace rev {

struct RunConfig {
  ModelConfig model;
  nn::AdamConfig adam;
  int batch_size = 1000;
  int epochs = 200;
  std::uint64_t seed = 1;
  int threads = 1;
  int checkpoint_every = 0;

  std::filesystem::path manifest;
  std::vector<std::filesystem::path> train, val, test;
  int stride = 1;
  bool use_synth = false;
  SynthLatencySpec synth;
  int synth_test_scenes = 50;

  int eval_K = 20;
  bool eval_sample = false;

  std::vector<std::string> ablate_variants = {"a1", "a2", "a3", "a4", "a5", "a6", "a7", "a8", "a9", "a10", "full"};
  std::vector<std::uint64_t> ablate_seeds = {1, 2, 3, 4, 5};

  std::filesystem::path output_dir = "rev_out";

  void validate() const {
    model.validate();
    if (adam.lr <= 0.0) throw ConfigError("optim.lr must be positive");
    if (batch_size < 1) throw ConfigError("optim.batch_size must be >= 1");
    if (epochs < 1 || epochs > 200) throw ConfigError("optim.epochs must be in 1..200");
    if (threads < 1) throw ConfigError("optim.threads must be >= 1");
    if (checkpoint_every < 0) throw ConfigError("optim.checkpoint_every must be >= 0");
    if (stride < 1) throw ConfigError("data.stride must be >= 1");
    if (eval_K < 1) throw ConfigError("eval.K must be >= 1");
    if (eval_K > model.K_g && !eval_sample)
      throw ConfigError("eval.K=" + std::to_string(eval_K) + " exceeds model.K_g=" + std::to_string(model.K_g) +
                        "; set eval.sample = true to sample generations with replacement");
    if (use_synth) {
      synth.validate();
      if (synth.t_h != model.t_h || synth.t_f != model.t_f)
        throw ConfigError("synth.t_h/t_f must match model.t_h/t_f");
      if (synth_test_scenes < 0 || synth_test_scenes >= synth.scenes)
        throw ConfigError("synth.test_scenes must be in [0, synth.scenes)");
    }
    if (ablate_seeds.empty()) throw ConfigError("ablate.seeds must not be empty");
  }
};

namespace detail {

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string fmt_double(double v) {
  std::ostringstream o;
  o << std::setprecision(17) << v;
  return o.str();
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::ostringstream o;
  for (std::size_t i = 0; i < xs.size(); ++i) o << (i ? "," : "") << xs[i];
  return o.str();
}

// Paths print unquoted.
inline std::string join(const std::vector<std::filesystem::path>& xs) {
  std::string o;
  for (std::size_t i = 0; i < xs.size(); ++i) o += (i ? "," : "") + xs[i].generic_string();
  return o;
}

}  // namespace detail

// Parsed "section.key" -> (value, line).
using ConfigMap = std::map<std::string, std::pair<std::string, int>>;

inline ConfigMap parse_config_text(std::istream& in) {
  ConfigMap out;
  std::string section, line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": unterminated section header");
      section = detail::trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (out.contains(full)) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + full + "'");
    out.emplace(full, std::make_pair(detail::trim(t.substr(eq + 1)), lineno));
  }
  return out;
}

namespace detail {

struct ConfigReader {
  const ConfigMap& map;

  [[noreturn]] void bad(const std::string& key, const std::string& why) const {
    const auto& [v, line] = map.at(key);
    throw ConfigError("line " + std::to_string(line) + ": " + key + " = '" + v + "': " + why);
  }

  void get(const std::string& key, int& out) const {
    auto it = map.find(key);
    if (it == map.end()) return;
    try {
      std::size_t used = 0;
      const long v = std::stol(it->second.first, &used);
      if (used != it->second.first.size()) bad(key, "not an integer");
      out = static_cast<int>(v);
    } catch (const std::logic_error&) {
      bad(key, "not an integer");
    }
  }
  void get(const std::string& key, std::uint64_t& out) const {
    auto it = map.find(key);
    if (it == map.end()) return;
    try {
      std::size_t used = 0;
      const auto v = std::stoull(it->second.first, &used);
      if (used != it->second.first.size()) bad(key, "not an unsigned integer");
      out = v;
    } catch (const std::logic_error&) {
      bad(key, "not an unsigned integer");
    }
  }
  void get(const std::string& key, double& out) const {
    auto it = map.find(key);
    if (it == map.end()) return;
    try {
      std::size_t used = 0;
      const double v = std::stod(it->second.first, &used);
      if (used != it->second.first.size()) bad(key, "not a number");
      out = v;
    } catch (const std::logic_error&) {
      bad(key, "not a number");
    }
  }
  void get(const std::string& key, bool& out) const {
    auto it = map.find(key);
    if (it == map.end()) return;
    const std::string& v = it->second.first;
    if (v == "true" || v == "1" || v == "yes" || v == "on") {
      out = true;
    } else if (v == "false" || v == "0" || v == "no" || v == "off") {
      out = false;
    } else {
      bad(key, "not a boolean");
    }
  }
  void get(const std::string& key, std::string& out) const {
    if (auto it = map.find(key); it != map.end()) out = it->second.first;
  }
};

}  // namespace detail

inline RunConfig run_config_from_map(const ConfigMap& map, const std::filesystem::path& base_dir = {}) {
  static const std::vector<std::string> known = {
      "model.t_h", "model.t_f", "model.dt", "model.d", "model.K_g", "model.n_theta", "model.transform",
      "model.use_linear", "model.use_non", "model.use_soc", "model.use_R", "model.use_G", "model.per_step_partitions",
      "model.tf_layers", "model.tf_heads", "model.ff_dim", "optim.lr", "optim.beta1", "optim.beta2", "optim.eps",
      "optim.batch_size", "optim.epochs", "optim.seed", "optim.threads", "optim.checkpoint_every", "data.manifest",
      "data.train", "data.val", "data.test", "data.stride", "data.synth", "synth.t_h", "synth.t_f", "synth.dt",
      "synth.scenes", "synth.agents", "synth.event_frame", "synth.delays", "synth.duration", "synth.turn",
      "synth.noise", "synth.speed", "synth.slowdown", "synth.arena", "synth.seed", "synth.test_scenes", "eval.K",
      "eval.sample", "ablate.variants", "ablate.seeds", "output.dir"};
  for (const auto& [key, v] : map) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("line " + std::to_string(v.second) + ": unknown key '" + key + "'");
  }

  RunConfig c;
  const detail::ConfigReader r{map};
  r.get("model.t_h", c.model.t_h);
  r.get("model.t_f", c.model.t_f);
  r.get("model.dt", c.model.dt);
  r.get("model.d", c.model.d);
  r.get("model.K_g", c.model.K_g);
  r.get("model.n_theta", c.model.n_theta);
  if (auto it = map.find("model.transform"); it != map.end()) {
    try {
      c.model.transform = parse_transform_kind(it->second.first);
    } catch (const ConfigError&) {
      r.bad("model.transform", "expected haar, db2, dft or none");
    }
  }
  r.get("model.use_linear", c.model.use_linear);
  r.get("model.use_non", c.model.use_non);
  r.get("model.use_soc", c.model.use_soc);
  r.get("model.use_R", c.model.use_R);
  r.get("model.use_G", c.model.use_G);
  r.get("model.per_step_partitions", c.model.per_step_partitions);
  r.get("model.tf_layers", c.model.tf_layers);
  r.get("model.tf_heads", c.model.tf_heads);
  r.get("model.ff_dim", c.model.ff_dim);

  r.get("optim.lr", c.adam.lr);
  r.get("optim.beta1", c.adam.beta1);
  r.get("optim.beta2", c.adam.beta2);
  r.get("optim.eps", c.adam.eps);
  r.get("optim.batch_size", c.batch_size);
  r.get("optim.epochs", c.epochs);
  r.get("optim.seed", c.seed);
  r.get("optim.threads", c.threads);
  r.get("optim.checkpoint_every", c.checkpoint_every);

  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };
  if (auto it = map.find("data.manifest"); it != map.end()) c.manifest = resolve(it->second.first);
  for (auto [key, dst] : {std::pair{"data.train", &c.train}, std::pair{"data.val", &c.val}, std::pair{"data.test", &c.test}}) {
    if (auto it = map.find(key); it != map.end())
      for (const std::string& p : detail::split_list(it->second.first)) dst->push_back(resolve(p));
  }
  r.get("data.stride", c.stride);
  r.get("data.synth", c.use_synth);

  c.synth.t_h = c.model.t_h;
  c.synth.t_f = c.model.t_f;
  c.synth.dt = c.model.dt;
  r.get("synth.t_h", c.synth.t_h);
  r.get("synth.t_f", c.synth.t_f);
  r.get("synth.dt", c.synth.dt);
  r.get("synth.scenes", c.synth.scenes);
  r.get("synth.agents", c.synth.agents);
  r.get("synth.event_frame", c.synth.event_frame);
  if (auto it = map.find("synth.delays"); it != map.end()) {
    c.synth.delays.clear();
    for (const std::string& s : detail::split_list(it->second.first)) {
      try {
        c.synth.delays.push_back(std::stoi(s));
      } catch (const std::logic_error&) {
        r.bad("synth.delays", "not a list of integers");
      }
    }
  }
  r.get("synth.duration", c.synth.duration);
  r.get("synth.turn", c.synth.turn);
  r.get("synth.noise", c.synth.noise);
  r.get("synth.speed", c.synth.speed);
  r.get("synth.slowdown", c.synth.slowdown);
  r.get("synth.arena", c.synth.arena);
  r.get("synth.seed", c.synth.seed);
  r.get("synth.test_scenes", c.synth_test_scenes);

  r.get("eval.K", c.eval_K);
  r.get("eval.sample", c.eval_sample);
  if (auto it = map.find("ablate.variants"); it != map.end()) c.ablate_variants = detail::split_list(it->second.first);
  if (auto it = map.find("ablate.seeds"); it != map.end()) {
    c.ablate_seeds.clear();
    for (const std::string& s : detail::split_list(it->second.first)) {
      try {
        c.ablate_seeds.push_back(std::stoull(s));
      } catch (const std::logic_error&) {
        r.bad("ablate.seeds", "not a list of integers");
      }
    }
  }
  if (auto it = map.find("output.dir"); it != map.end()) c.output_dir = resolve(it->second.first);
  if (const char* env = std::getenv("REV_OUTPUT_DIR"); env != nullptr && *env != '\0') c.output_dir = env;
  c.validate();
  return c;
}

inline RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {}) {
  std::istringstream in(text);
  return run_config_from_map(parse_config_text(in), base_dir);
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return run_config_from_map(parse_config_text(in), path.parent_path());
}

// Canonical text of every setting that affects results; the output
// directory and thread count are excluded.
inline std::string canonical_text(const RunConfig& c) {
  using detail::fmt_double;
  std::ostringstream o;
  const ModelConfig& m = c.model;
  o << "[model]\n"
    << "t_h = " << m.t_h << "\nt_f = " << m.t_f << "\ndt = " << fmt_double(m.dt) << "\nd = " << m.d
    << "\nK_g = " << m.K_g << "\nn_theta = " << m.n_theta << "\ntransform = " << to_string(m.transform)
    << "\nuse_linear = " << m.use_linear << "\nuse_non = " << m.use_non << "\nuse_soc = " << m.use_soc
    << "\nuse_R = " << m.use_R << "\nuse_G = " << m.use_G << "\nper_step_partitions = " << m.per_step_partitions
    << "\ntf_layers = " << m.tf_layers << "\ntf_heads = " << m.tf_heads << "\nff_dim = " << m.feedforward_dim() << '\n';
  o << "[optim]\n"
    << "lr = " << fmt_double(c.adam.lr) << "\nbeta1 = " << fmt_double(c.adam.beta1) << "\nbeta2 = " << fmt_double(c.adam.beta2)
    << "\neps = " << fmt_double(c.adam.eps) << "\nbatch_size = " << c.batch_size << "\nepochs = " << c.epochs
    << "\nseed = " << c.seed << '\n';
  o << "[data]\n"
    << "manifest = " << c.manifest.generic_string() << "\ntrain = " << detail::join(c.train) << "\nval = " << detail::join(c.val)
    << "\ntest = " << detail::join(c.test) << "\nstride = " << c.stride << "\nsynth = " << c.use_synth << '\n';
  if (c.use_synth) {
    const SynthLatencySpec& s = c.synth;
    o << "[synth]\n"
      << "t_h = " << s.t_h << "\nt_f = " << s.t_f << "\ndt = " << fmt_double(s.dt) << "\nscenes = " << s.scenes
      << "\nagents = " << s.agents << "\nevent_frame = " << s.event_frame << "\ndelays = " << detail::join(s.delays)
      << "\nduration = " << s.duration << "\nturn = " << fmt_double(s.turn) << "\nnoise = " << fmt_double(s.noise)
      << "\nspeed = " << fmt_double(s.speed) << "\nslowdown = " << fmt_double(s.slowdown)
      << "\narena = " << fmt_double(s.arena) << "\nseed = " << s.seed << "\ntest_scenes = " << c.synth_test_scenes << '\n';
  }
  o << "[eval]\nK = " << c.eval_K << "\nsample = " << c.eval_sample << '\n';
  return o.str();
}

// 64-bit FNV-1a of the canonical text, as 16 hex digits.
inline std::string config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_text(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << h;
  return o.str();
}

// Ablation grid. a1-a4 use a single social backbone without the linear
// part; a5-a10 remove one component from the full model.
inline ModelConfig apply_variant(ModelConfig m, const std::string& variant) {
  auto backbone = [&](bool R, bool G) {
    m.use_linear = false;
    m.use_non = false;
    m.use_soc = true;
    m.use_R = R;
    m.use_G = G;
  };
  if (variant == "full") {
    m.use_linear = m.use_non = m.use_soc = m.use_R = m.use_G = true;
  } else if (variant == "a1") {
    backbone(false, false);
  } else if (variant == "a2") {
    backbone(true, false);
  } else if (variant == "a3") {
    backbone(false, true);
  } else if (variant == "a4") {
    backbone(true, true);
  } else if (variant == "a5") {
    m.use_linear = false;
  } else if (variant == "a6") {
    m.use_non = false;
  } else if (variant == "a7") {
    m.use_soc = false;
  } else if (variant == "a8") {
    m.use_non = m.use_soc = false;
  } else if (variant == "a9") {
    m.use_G = false;
  } else if (variant == "a10") {
    m.use_R = false;
  } else {
    throw ConfigError("unknown ablation variant '" + variant + "' (expected a1..a10 or full)");
  }
  return m;
}

}  // namespace rev
