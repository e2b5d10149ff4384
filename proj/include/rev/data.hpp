#pragma once

// Trajectory data: the whitespace TSV scene format, windowing into training
// samples, origin translation, split manifests, the synthetic latency-scene
// generator and counterfactual neighbor injection.
//
// Scene file format: one record per line, four whitespace-separated fields
//
//   <frame_id> <agent_id> <x> <y>
//
// frame and agent ids are integers (a trailing ".0" is accepted, as in the
// ETH-UCY text files); x and y are meters. Blank lines and lines starting
// with '#' are ignored. (agent_id, frame_id) pairs must be unique.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rev/errors.hpp"
#include "rev/transforms.hpp"

namespace rev {

struct Record {
  long frame = 0;
  long agent = 0;
  double x = 0.0;
  double y = 0.0;
};

struct Scene {
  std::string id;
  double dt = 0.4;  // seconds between consecutive frame steps
  std::vector<Record> records;

  std::size_t agent_count() const {
    std::vector<long> ids;
    for (const Record& r : records) ids.push_back(r.agent);
    std::sort(ids.begin(), ids.end());
    return static_cast<std::size_t>(std::unique(ids.begin(), ids.end()) - ids.begin());
  }
};

// A contiguous run of one agent's frames.
struct Track {
  long agent = 0;
  int segment = 0;
  long first_frame = 0;
  Matrix positions;  // steps x 2

  long last_frame(long step) const { return first_frame + step * (positions.rows() - 1); }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline long parse_integral(const std::string& tok, int line, int column, const char* what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    throw DataError(std::string("cannot parse ") + what + " '" + tok + "'", line, column);
  }
  if (used != tok.size() || !std::isfinite(v) || v != std::floor(v))
    throw DataError(std::string(what) + " must be an integer, got '" + tok + "'", line, column);
  return static_cast<long>(v);
}

inline double parse_real(const std::string& tok, int line, int column, const char* what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    throw DataError(std::string("cannot parse ") + what + " '" + tok + "'", line, column);
  }
  if (used != tok.size() || !std::isfinite(v)) throw DataError(std::string("invalid ") + what + " '" + tok + "'", line, column);
  return v;
}

}  // namespace detail

inline Scene parse_scene(std::istream& in, std::string id, double dt = 0.4) {
  Scene scene;
  scene.id = std::move(id);
  scene.dt = dt;
  std::map<std::pair<long, long>, int> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream ls(t);
    std::vector<std::string> tok;
    for (std::string s; ls >> s;) tok.push_back(s);
    if (tok.size() < 4) throw DataError("expected 4 fields (frame agent x y), got " + std::to_string(tok.size()), lineno, static_cast<int>(tok.size()) + 1);
    if (tok.size() > 4) throw DataError("unexpected extra field '" + tok[4] + "'", lineno, 5);
    Record r;
    r.frame = detail::parse_integral(tok[0], lineno, 1, "frame id");
    r.agent = detail::parse_integral(tok[1], lineno, 2, "agent id");
    r.x = detail::parse_real(tok[2], lineno, 3, "x");
    r.y = detail::parse_real(tok[3], lineno, 4, "y");
    const auto key = std::make_pair(r.agent, r.frame);
    if (auto it = seen.find(key); it != seen.end()) {
      throw DataError("duplicate record for agent " + std::to_string(r.agent) + " at frame " + std::to_string(r.frame) +
                          " (first seen on line " + std::to_string(it->second) + ")",
                      lineno);
    }
    seen.emplace(key, lineno);
    scene.records.push_back(r);
  }
  return scene;
}

inline Scene load_scene(const std::filesystem::path& path, double dt = 0.4) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scene file " + path.string());
  return parse_scene(in, path.stem().string(), dt);
}

inline std::string format_scene(const Scene& scene, const std::vector<std::string>& header = {}) {
  std::ostringstream out;
  for (const std::string& h : header) out << "# " << h << '\n';
  out.precision(17);
  for (const Record& r : scene.records) out << r.frame << '\t' << r.agent << '\t' << r.x << '\t' << r.y << '\n';
  return out.str();
}

inline void write_scene(const std::filesystem::path& path, const Scene& scene, const std::vector<std::string>& header = {}) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw DataError("cannot write scene file " + tmp.string());
    out << format_scene(scene, header);
  }
  std::filesystem::rename(tmp, path);
}

// Smallest positive frame difference between consecutive records of any agent.
inline long frame_step(const Scene& scene) {
  std::map<long, std::vector<long>> frames;
  for (const Record& r : scene.records) frames[r.agent].push_back(r.frame);
  long step = 0;
  for (auto& [_, f] : frames) {
    std::sort(f.begin(), f.end());
    for (std::size_t i = 1; i < f.size(); ++i) {
      const long d = f[i] - f[i - 1];
      if (d > 0 && (step == 0 || d < step)) step = d;
    }
  }
  return step == 0 ? 1 : step;
}

// Per-agent tracks; an agent is split wherever its frame gap differs from the
// scene frame step.
inline std::vector<Track> tracks(const Scene& scene) {
  const long step = frame_step(scene);
  std::map<long, std::vector<Record>> by_agent;
  for (const Record& r : scene.records) by_agent[r.agent].push_back(r);
  std::vector<Track> out;
  for (auto& [agent, recs] : by_agent) {
    std::sort(recs.begin(), recs.end(), [](const Record& a, const Record& b) { return a.frame < b.frame; });
    std::size_t start = 0;
    int segment = 0;
    for (std::size_t i = 1; i <= recs.size(); ++i) {
      if (i == recs.size() || recs[i].frame - recs[i - 1].frame != step) {
        Track t;
        t.agent = agent;
        t.segment = segment++;
        t.first_frame = recs[start].frame;
        t.positions.resize(static_cast<Eigen::Index>(i - start), 2);
        for (std::size_t k = start; k < i; ++k) {
          t.positions(static_cast<Eigen::Index>(k - start), 0) = recs[k].x;
          t.positions(static_cast<Eigen::Index>(k - start), 1) = recs[k].y;
        }
        out.push_back(std::move(t));
        start = i;
      }
    }
  }
  return out;
}

struct Sample {
  TimeSeq ego;                   // t_h x 2
  std::vector<TimeSeq> neighbors;  // each t_h x 2, fully observed
  TimeSeq gt;                    // t_f x 2
  std::string scene_id;
  long frame = 0;  // first observed frame
  long agent = 0;
  Eigen::RowVector2d origin = Eigen::RowVector2d::Zero();  // translation removed by preprocess()
};

// One sample per ego track per admissible start index (every `stride` steps).
// Neighbors are the other agents' tracks covering all observed frames.
inline std::vector<Sample> make_windows(const Scene& scene, int t_h, int t_f, int stride = 1) {
  if (stride < 1) throw ConfigError("make_windows: stride must be >= 1");
  if (t_h < 2 || t_f < 1) throw ConfigError("make_windows: need t_h >= 2 and t_f >= 1");
  const long step = frame_step(scene);
  const std::vector<Track> all = tracks(scene);
  std::vector<Sample> out;
  for (const Track& ego : all) {
    const Eigen::Index len = ego.positions.rows();
    for (Eigen::Index s = 0; s + t_h + t_f <= len; s += stride) {
      Sample smp;
      smp.scene_id = scene.id;
      smp.agent = ego.agent;
      smp.frame = ego.first_frame + step * s;
      smp.ego = TimeSeq{ego.positions.middleRows(s, t_h), scene.dt};
      smp.gt = TimeSeq{ego.positions.middleRows(s + t_h, t_f), scene.dt};
      const long obs_last = smp.frame + step * (t_h - 1);
      for (const Track& nb : all) {
        if (nb.agent == ego.agent) continue;
        if (nb.first_frame > smp.frame || nb.last_frame(step) < obs_last) continue;
        const long offset = (smp.frame - nb.first_frame) / step;
        smp.neighbors.push_back(TimeSeq{nb.positions.middleRows(offset, t_h), scene.dt});
      }
      out.push_back(std::move(smp));
    }
  }
  return out;
}

// Moves the ego's last observed point to the origin; neighbors and ground
// truth receive the same shift, recorded in `origin`.
inline Sample preprocess(const Sample& s) {
  Sample out = s;
  const Eigen::RowVector2d shift = s.ego.values.row(s.ego.steps() - 1);
  out.ego.values.rowwise() -= shift;
  out.gt.values.rowwise() -= shift;
  for (TimeSeq& nb : out.neighbors) nb.values.rowwise() -= shift;
  out.origin = s.origin + shift;
  return out;
}

inline Sample untranslate(const Sample& s) {
  Sample out = s;
  out.ego.values.rowwise() += s.origin;
  out.gt.values.rowwise() += s.origin;
  for (TimeSeq& nb : out.neighbors) nb.values.rowwise() += s.origin;
  out.origin.setZero();
  return out;
}

// Appends a constant-velocity neighbor (velocity in m/s) that sits exactly at
// ego_last + offset on the final observed frame.
inline Sample inject_manual_neighbor(const Sample& s, Eigen::RowVector2d offset, Eigen::RowVector2d velocity) {
  Sample out = s;
  const int t_h = s.ego.steps();
  const Eigen::RowVector2d anchor = s.ego.values.row(t_h - 1) + offset;
  Matrix nb(t_h, 2);
  for (int i = 0; i < t_h; ++i) nb.row(i) = anchor + velocity * (s.ego.dt * static_cast<double>(i - (t_h - 1)));
  out.neighbors.push_back(TimeSeq{nb, s.ego.dt});
  return out;
}

struct SplitManifest {
  std::vector<std::filesystem::path> train;
  std::vector<std::filesystem::path> val;
  std::vector<std::filesystem::path> test;
};

// Lines of "<train|val|test> <path>"; relative paths resolve against the
// manifest's directory.
inline SplitManifest load_split_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split manifest " + path.string());
  SplitManifest m;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::istringstream ls(t);
    std::string tag, file;
    if (!(ls >> tag >> file)) throw DataError("expected '<split> <path>'", lineno);
    std::filesystem::path p(file);
    if (p.is_relative()) p = path.parent_path() / p;
    if (tag == "train") {
      m.train.push_back(p);
    } else if (tag == "val") {
      m.val.push_back(p);
    } else if (tag == "test") {
      m.test.push_back(p);
    } else {
      throw DataError("unknown split tag '" + tag + "'", lineno, 1);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic latency scenes
//
// Every agent walks in a straight line at constant speed. At frame t_e
// (1-based) it visibly hesitates: the step arriving at frame t_e is scaled by
// `slowdown`. Exactly `delay` frames later its heading starts to rotate: the
// step leaving frame t_e + delay is the first turned one, and the heading
// changes by turn / duration per step for `duration` steps (direction drawn
// at random), then stays constant.
// ---------------------------------------------------------------------------

struct SynthLatencySpec {
  int t_h = 8;
  int t_f = 12;
  double dt = 0.4;
  int scenes = 200;
  int agents = 3;
  int event_frame = 6;            // t_e, 1-based
  std::vector<int> delays = {0, 1, 2, 3};
  int duration = 4;               // frames over which the turn is spread
  double turn = 1.0;              // radians
  double noise = 0.05;            // position noise sigma, meters
  double speed = 1.2;             // m/s
  double slowdown = 0.3;          // step scale at the event frame
  double arena = 8.0;             // start positions uniform in [-arena, arena]^2
  std::uint64_t seed = 7;

  int frames() const { return t_h + t_f; }

  void validate() const {
    if (t_h < 2 || t_f < 1) throw ConfigError("synth: need t_h >= 2 and t_f >= 1");
    if (scenes < 1 || agents < 1) throw ConfigError("synth: scenes and agents must be positive");
    if (delays.empty()) throw ConfigError("synth: at least one delay is required");
    if (event_frame < 2) throw ConfigError("synth: event_frame must be >= 2");
    if (duration < 1) throw ConfigError("synth: duration must be >= 1");
    if (noise < 0.0 || speed <= 0.0 || slowdown <= 0.0) throw ConfigError("synth: noise >= 0, speed > 0, slowdown > 0 required");
    for (int d : delays) {
      if (d < 0) throw ConfigError("synth: delays must be non-negative");
      if (event_frame + d + duration > frames())
        throw ConfigError("synth: event_frame + delay + duration exceeds the " + std::to_string(frames()) + "-frame horizon");
    }
  }
};

struct SynthLabel {
  std::string scene_id;
  long agent = 0;
  int event_frame = 0;
  int delay = 0;
  int onset_frame = 0;  // 1-based frame where the first turned step starts
  int direction = 1;
};

struct SynthCorpus {
  std::vector<Scene> scenes;
  std::vector<SynthLabel> labels;
};

inline SynthCorpus synth_latency_scenes(const SynthLatencySpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_delay(0, spec.delays.size() - 1);
  const int n = spec.frames();
  const double step_len = spec.speed * spec.dt;

  SynthCorpus corpus;
  for (int s = 0; s < spec.scenes; ++s) {
    Scene scene;
    scene.id = "synth_" + std::to_string(s);
    scene.dt = spec.dt;
    for (int a = 0; a < spec.agents; ++a) {
      const int delay = spec.delays[pick_delay(rng)];
      const int direction = unit(rng) < 0.5 ? -1 : 1;
      double heading = 2.0 * std::numbers::pi * unit(rng);
      Eigen::RowVector2d p(spec.arena * (2.0 * unit(rng) - 1.0), spec.arena * (2.0 * unit(rng) - 1.0));
      const int onset = spec.event_frame + delay;
      std::vector<Eigen::RowVector2d> pos{p};
      // Step i moves the agent from frame i to frame i + 1 (1-based).
      for (int i = 1; i < n; ++i) {
        if (i >= onset && i < onset + spec.duration) heading += direction * spec.turn / spec.duration;
        const double len = (i + 1 == spec.event_frame) ? step_len * spec.slowdown : step_len;
        p += len * Eigen::RowVector2d(std::cos(heading), std::sin(heading));
        pos.push_back(p);
      }
      for (int i = 0; i < n; ++i) {
        Record r;
        r.frame = i;
        r.agent = a;
        r.x = pos[static_cast<std::size_t>(i)](0) + spec.noise * gauss(rng);
        r.y = pos[static_cast<std::size_t>(i)](1) + spec.noise * gauss(rng);
        scene.records.push_back(r);
      }
      corpus.labels.push_back(SynthLabel{scene.id, a, spec.event_frame, delay, onset, direction});
    }
    corpus.scenes.push_back(std::move(scene));
  }
  return corpus;
}

// Max-curvature change point: the first 1-based frame whose turning angle
// (between the incoming and outgoing steps) is maximal, or nullopt when no
// frame turns by more than `min_angle`.
inline std::optional<int> detect_turn_onset(const Matrix& positions, double min_angle = 1e-9) {
  const Eigen::Index n = positions.rows();
  std::vector<double> angle(static_cast<std::size_t>(n), 0.0);
  double best = 0.0;
  for (Eigen::Index i = 1; i + 1 < n; ++i) {
    const Eigen::RowVector2d a = positions.row(i) - positions.row(i - 1);
    const Eigen::RowVector2d b = positions.row(i + 1) - positions.row(i);
    const double cross = a(0) * b(1) - a(1) * b(0);
    const double dot = a.dot(b);
    angle[static_cast<std::size_t>(i)] = std::abs(std::atan2(cross, dot));
    best = std::max(best, angle[static_cast<std::size_t>(i)]);
  }
  if (best <= min_angle) return std::nullopt;
  for (Eigen::Index i = 1; i + 1 < n; ++i)
    if (angle[static_cast<std::size_t>(i)] >= best - 1e-9) return static_cast<int>(i + 1);
  return std::nullopt;
}

}  // namespace rev
