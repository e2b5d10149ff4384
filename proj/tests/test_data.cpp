#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "rev/data.hpp"

using namespace rev;

namespace {

Scene parse(const std::string& text) {
  std::istringstream in(text);
  return parse_scene(in, "t");
}

}  // namespace

TEST(Data, ParsesEthStyleFloats) {
  const Scene s = parse("# header\n10.0\t1.0\t1.5\t2.5\n\n20 1 1.6 2.6\n10 2 -3 4\n");
  ASSERT_EQ(s.records.size(), 3u);
  EXPECT_EQ(s.records[0].frame, 10);
  EXPECT_EQ(s.records[0].agent, 1);
  EXPECT_DOUBLE_EQ(s.records[2].x, -3.0);
  EXPECT_EQ(s.agent_count(), 2u);
  EXPECT_EQ(frame_step(s), 10);
}

TEST(Data, MalformedLineReportsPosition) {
  try {
    parse("1 1 0 0\n2 1 abc 0\n");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.line(), 2);
    EXPECT_EQ(e.column(), 3);
  }
  try {
    parse("1 1 0\n");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.line(), 1);
    EXPECT_EQ(e.column(), 4);
  }
  EXPECT_THROW(parse("1.5 1 0 0\n"), DataError);
  EXPECT_THROW(parse("1 1 nan 0\n"), DataError);
}

TEST(Data, DuplicateRecordRejected) {
  try {
    parse("1 1 0 0\n2 1 0 0\n1 1 5 5\n");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_EQ(e.line(), 3);
  }
}

TEST(Data, RoundTripThroughFile) {
  Scene s = parse("0 1 0.125 -1\n1 1 0.25 -2\n0 2 3 3\n");
  s.id = "rt";
  const auto path = std::filesystem::temp_directory_path() / "rev_scene_rt.txt";
  write_scene(path, s, {"comment"});
  const Scene back = load_scene(path);
  ASSERT_EQ(back.records.size(), s.records.size());
  for (std::size_t i = 0; i < s.records.size(); ++i) {
    EXPECT_EQ(back.records[i].frame, s.records[i].frame);
    EXPECT_EQ(back.records[i].agent, s.records[i].agent);
    EXPECT_EQ(back.records[i].x, s.records[i].x);
    EXPECT_EQ(back.records[i].y, s.records[i].y);
  }
}

TEST(Data, TracksSplitAtGaps) {
  const Scene s = parse("0 1 0 0\n10 1 1 0\n20 1 2 0\n50 1 5 0\n60 1 6 0\n");
  const auto t = tracks(s);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0].positions.rows(), 3);
  EXPECT_EQ(t[1].first_frame, 50);
  EXPECT_EQ(t[1].segment, 1);
}

TEST(Data, WindowsAndNeighbors) {
  std::ostringstream text;
  for (int f = 0; f < 6; ++f) {
    text << f << " 1 " << f << " 0\n";
    if (f >= 1) text << f << " 2 " << f << " 1\n";  // misses frame 0
    text << f << " 3 " << f << " -1\n";
  }
  const Scene s = parse(text.str());
  const auto w = make_windows(s, 2, 2);
  // Agents 1 and 3 have 6 frames -> 3 windows each, agent 2 has 5 -> 2.
  EXPECT_EQ(w.size(), 8u);
  const Sample& first = w.front();
  EXPECT_EQ(first.agent, 1);
  EXPECT_EQ(first.frame, 0);
  EXPECT_EQ(first.neighbors.size(), 1u);  // agent 2 not fully observed at frames 0-1
  EXPECT_EQ(first.gt.values(0, 0), 2.0);
  EXPECT_EQ(w[1].neighbors.size(), 2u);
}

TEST(Data, PreprocessAndUntranslate) {
  Sample s;
  Matrix e(3, 2);
  e << 1, 1, 2, 2, 3, 5;
  s.ego = TimeSeq{e, 0.4};
  s.gt = TimeSeq{Matrix::Constant(2, 2, 7.0), 0.4};
  s.neighbors.push_back(TimeSeq{Matrix::Constant(3, 2, 4.0), 0.4});
  const Sample p = preprocess(s);
  EXPECT_EQ(p.ego.values.row(2).norm(), 0.0);
  EXPECT_EQ(p.origin, Eigen::RowVector2d(3, 5));
  EXPECT_EQ(p.neighbors[0].values(0, 0), 1.0);
  EXPECT_EQ(preprocess(p).origin, p.origin);
  const Sample u = untranslate(p);
  EXPECT_EQ((u.ego.values - e).norm(), 0.0);
  EXPECT_EQ((u.gt.values - s.gt.values).norm(), 0.0);
}

TEST(Data, ManualNeighborSitsAtOffset) {
  Sample s;
  Matrix e(4, 2);
  e << 0, 0, 1, 0, 2, 0, 3, 0;
  s.ego = TimeSeq{e, 0.5};
  const Sample o = inject_manual_neighbor(s, Eigen::RowVector2d(2, 0), Eigen::RowVector2d(-1, 0));
  ASSERT_EQ(o.neighbors.size(), 1u);
  EXPECT_EQ(o.neighbors[0].values.row(3), Eigen::RowVector2d(5, 0));
  EXPECT_EQ(o.neighbors[0].values.row(0), Eigen::RowVector2d(6.5, 0));
}

TEST(Data, SplitManifest) {
  const auto dir = std::filesystem::temp_directory_path() / "rev_manifest";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "m.txt") << "# splits\ntrain a.txt\nval /abs/b.txt\ntest c.txt\n";
  const SplitManifest m = load_split_manifest(dir / "m.txt");
  ASSERT_EQ(m.train.size(), 1u);
  EXPECT_EQ(m.train[0], dir / "a.txt");
  EXPECT_EQ(m.val[0], std::filesystem::path("/abs/b.txt"));
  std::ofstream(dir / "bad.txt") << "holdout x.txt\n";
  EXPECT_THROW(load_split_manifest(dir / "bad.txt"), DataError);
}

TEST(Synth, NoiselessLabelsRecoveredByChangePoint) {
  SynthLatencySpec spec;
  spec.noise = 0.0;
  spec.scenes = 20;
  spec.agents = 4;
  spec.delays = {0, 1, 2, 3};
  const SynthCorpus c = synth_latency_scenes(spec);
  ASSERT_EQ(c.labels.size(), 80u);
  std::size_t li = 0;
  for (const Scene& s : c.scenes) {
    for (const Track& t : tracks(s)) {
      const SynthLabel& lb = c.labels[li++];
      ASSERT_EQ(lb.agent, t.agent);
      EXPECT_EQ(lb.onset_frame, lb.event_frame + lb.delay);
      const auto onset = detect_turn_onset(t.positions);
      ASSERT_TRUE(onset.has_value());
      EXPECT_EQ(*onset, lb.onset_frame);
    }
  }
}

TEST(Synth, DeterministicAndValidated) {
  SynthLatencySpec spec;
  spec.scenes = 3;
  const SynthCorpus a = synth_latency_scenes(spec), b = synth_latency_scenes(spec);
  EXPECT_EQ(format_scene(a.scenes[2]), format_scene(b.scenes[2]));
  spec.event_frame = 18;
  EXPECT_THROW(synth_latency_scenes(spec), ConfigError);
}

TEST(Synth, OutputLoadsBack) {
  SynthLatencySpec spec;
  spec.scenes = 1;
  const SynthCorpus c = synth_latency_scenes(spec);
  const auto path = std::filesystem::temp_directory_path() / "rev_synth_one.txt";
  write_scene(path, c.scenes[0], {"synthetic"});
  const Scene back = load_scene(path);
  EXPECT_EQ(back.records.size(), c.scenes[0].records.size());
  EXPECT_EQ(make_windows(back, spec.t_h, spec.t_f).size(), static_cast<std::size_t>(spec.agents));
}
