#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "spikegraph/errors.hpp"
#include "spikegraph/ops.hpp"
#include "spikegraph/skeleton.hpp"
#include "support.hpp"

namespace spikegraph {
namespace {

namespace fs = std::filesystem;

std::string read_fixture(const std::string& name) {
  std::ifstream in(fs::path(SPIKEGRAPH_FIXTURES) / name, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t idx3(const Tensor& j, std::size_t c, std::size_t t, std::size_t v) {
  return (c * j.dim(1) + t) * j.dim(2) + v;
}

Real joint_at(const Tensor& j, std::size_t c, std::size_t t, std::size_t v) { return j[idx3(j, c, t, v)]; }

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("spikegraph_skeleton_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TEST(Topology, ReferenceSkeletonsAreSpanningTrees) {
  EXPECT_NO_THROW(SkeletonTopology::ntu25().validate());
  EXPECT_NO_THROW(SkeletonTopology::ucla20().validate());
  EXPECT_EQ(SkeletonTopology::ntu25().edges.size(), 24u);
  EXPECT_EQ(SkeletonTopology::ucla20().edges.size(), 19u);
  EXPECT_EQ(SkeletonTopology::for_joints(7).edges.size(), 6u);
}

TEST(Topology, NtuParentsFollowKinectLayout) {
  const auto p = SkeletonTopology::ntu25().parents();
  EXPECT_EQ(p[0], 0u);
  EXPECT_EQ(p[1], 0u);    // spine mid -> spine base
  EXPECT_EQ(p[20], 1u);   // spine shoulder -> spine mid
  EXPECT_EQ(p[3], 2u);    // head -> neck
  EXPECT_EQ(p[23], 11u);  // right hand tip -> right hand
}

TEST(Topology, RandomTreesValidate) {
  Rng rng(1);
  for (int i = 0; i < 50; ++i)
    EXPECT_NO_THROW(SkeletonTopology::random_tree(2 + rng.index(30), rng).validate());
}

TEST(Topology, RejectsMalformedTrees) {
  SkeletonTopology t = SkeletonTopology::chain(4);
  t.edges.pop_back();
  EXPECT_THROW(t.validate(), InvalidInputError);

  t = SkeletonTopology::chain(4);
  t.edges[2] = {1, 2};  // 1 now has two parents
  EXPECT_THROW(t.validate(), InvalidInputError);

  t = SkeletonTopology::chain(3);
  t.edges = {{1, 2}, {2, 1}};  // cycle detached from the root
  EXPECT_THROW(t.validate(), InvalidInputError);

  t = SkeletonTopology::chain(3);
  t.edges[0] = {0, 1};
  EXPECT_THROW(t.validate(), InvalidInputError);

  t = SkeletonTopology::chain(3);
  t.edges[1] = {5, 0};
  EXPECT_THROW(t.validate(), InvalidInputError);
}

TEST(ParseNtu, SingleZeroFrame) {
  const SkeletonSequence s = parse_ntu(read_fixture("single_frame_zero.skeleton"));
  EXPECT_EQ(s.joints.shape(), (Shape{3, 1, 25}));
  EXPECT_TRUE(test::all_equal(s.joints, Tensor::zeros({3, 1, 25})));
}

TEST(ParseNtu, CoordinatesLandInChannelFrameJointOrder) {
  const SkeletonSequence s = parse_ntu(read_fixture("two_frame_moving.skeleton"));
  ASSERT_EQ(s.joints.shape(), (Shape{3, 2, 25}));
  EXPECT_FLOAT_EQ(joint_at(s.joints, 0, 0, 3), 0.3f);
  EXPECT_FLOAT_EQ(joint_at(s.joints, 1, 1, 4), -0.2f);
  EXPECT_FLOAT_EQ(joint_at(s.joints, 2, 0, 10), 2.1f);
  EXPECT_EQ(joint_at(s.joints, 0, 0, 7), 0.25f);
  EXPECT_EQ(joint_at(s.joints, 0, 1, 7), 0.75f);
  EXPECT_EQ(joint_at(s.joints, 1, 1, 7), -0.125f);
  EXPECT_EQ(joint_at(s.joints, 2, 1, 7), 3.0625f);
}

TEST(ParseNtu, KeepsFirstBodyAndDropsEmptyFrames) {
  const SkeletonSequence s = parse_ntu(read_fixture("two_bodies_gap.skeleton"));
  ASSERT_EQ(s.frames(), 2u);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t v = 0; v < 25; ++v) {
      EXPECT_EQ(joint_at(s.joints, 0, t, v), 1);
      EXPECT_EQ(joint_at(s.joints, 1, t, v), 2);
      EXPECT_EQ(joint_at(s.joints, 2, t, v), 3);
    }
}

TEST(ParseNtu, ErrorsCarryKindAndLine) {
  EXPECT_THROW(parse_ntu(read_fixture("empty.skeleton")), ParseError);
  EXPECT_THROW(parse_ntu(read_fixture("bad_joint_count.skeleton")), FormatError);
  EXPECT_THROW(parse_ntu(""), ParseError);
  EXPECT_THROW(parse_ntu("1\nx\n"), ParseError);
  try {
    parse_ntu(read_fixture("truncated.skeleton"));
    FAIL() << "truncated file parsed";
  } catch (const ParseError& e) {
    EXPECT_GT(e.line(), 1u);
  }
}

TEST(ParseNtu, SerializeRoundTripIsExact) {
  SynthParams p;
  p.classes = 2;
  p.samples_per_class = 2;
  p.frames = 5;
  for (const SkeletonSequence& s : synthesize(p)) {
    const SkeletonSequence back = parse_ntu(serialize_ntu(s));
    EXPECT_TRUE(test::all_equal(back.joints, s.joints));
  }
  SkeletonSequence small;
  small.joints = Tensor::zeros({3, 2, 20});
  EXPECT_THROW(serialize_ntu(small), FormatError);
}

TEST(LabelFromFilename, ZeroBasedActionId) {
  EXPECT_EQ(label_from_filename("S001C002P003R002A060.skeleton"), 59);
  EXPECT_EQ(label_from_filename("S017C003P020R002A001.skeleton"), 0);
  EXPECT_EQ(label_from_filename("S001C002P003R002.skeleton"), std::nullopt);
  EXPECT_EQ(label_from_filename("A000.skeleton"), std::nullopt);
}

TEST(Modalities, BonesAndMotionsFromParents) {
  const auto topo = SkeletonTopology::ntu25();
  const SkeletonSequence s = parse_ntu(read_fixture("two_frame_moving.skeleton"));
  const ModalityBundle m = derive_modalities(s, topo);
  const auto parent = topo.parents();
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < 2; ++t) {
      EXPECT_EQ(joint_at(m.bone, c, t, 0), 0);
      for (std::size_t v = 1; v < 25; ++v)
        EXPECT_EQ(joint_at(m.bone, c, t, v),
                  joint_at(s.joints, c, t, v) - joint_at(s.joints, c, t, parent[v]));
    }
  // Only joint 7 moves: one forward difference, then the zero-filled last frame.
  EXPECT_EQ(joint_at(m.joint_motion, 0, 0, 7), 0.5f);
  EXPECT_EQ(joint_at(m.joint_motion, 1, 0, 7), -0.25f);
  EXPECT_EQ(joint_at(m.joint_motion, 2, 0, 7), 0.0625f);
  EXPECT_EQ(joint_at(m.joint_motion, 0, 0, 6), 0);
  for (std::size_t v = 0; v < 25; ++v) EXPECT_EQ(joint_at(m.joint_motion, 0, 1, v), 0);
  // In the Kinect v2 tree joint 7 hangs off 6 and carries 21.
  EXPECT_EQ(joint_at(m.bone_motion, 0, 0, 7), 0.5f);
  EXPECT_EQ(joint_at(m.bone_motion, 0, 0, 21), -0.5f);
  EXPECT_EQ(joint_at(m.bone_motion, 0, 0, 6), 0);
}

TEST(Modalities, RejectMismatchedInputs) {
  SkeletonSequence s;
  s.joints = Tensor::zeros({3, 4, 20});
  EXPECT_THROW(derive_modalities(s, SkeletonTopology::ntu25()), InvalidInputError);
  s.joints = Tensor::zeros({2, 4, 25});
  EXPECT_THROW(derive_modalities(s, SkeletonTopology::ntu25()), DimensionError);
}

TEST(Modalities, FusionOrderStartsWithBone) {
  ModalityBundle m;
  m.bone = Tensor::full({1}, 1);
  m.joint = Tensor::full({1}, 2);
  m.bone_motion = Tensor::full({1}, 3);
  m.joint_motion = Tensor::full({1}, 4);
  const auto o = m.fusion_order();
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(o[i][0], Real(i + 1));
  EXPECT_STREQ(kModalityNames[0], "bone");
}

TEST(Synthesize, BalancedDeterministicAndShaped) {
  SynthParams p;
  p.classes = 3;
  p.samples_per_class = 4;
  p.frames = 9;
  p.seed = 11;
  const auto a = synthesize(p), b = synthesize(p);
  ASSERT_EQ(a.size(), 12u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].label, static_cast<int>(i / 4));
    EXPECT_EQ(a[i].joints.shape(), (Shape{3, 9, 25}));
    EXPECT_TRUE(test::all_equal(a[i].joints, b[i].joints));
  }
  p.seed = 12;
  EXPECT_FALSE(test::all_equal(synthesize(p)[0].joints, a[0].joints));
}

TEST(Synthesize, ClassTemplatesDiffer) {
  SynthParams p;
  p.frames = 16;
  for (std::size_t a = 0; a < p.classes; ++a)
    for (std::size_t b = a + 1; b < p.classes; ++b)
      EXPECT_FALSE(test::all_close(synth_class_mean(p, a), synth_class_mean(p, b), 0.05))
          << a << " vs " << b;
}

TEST(Synthesize, RejectsUnsupportedParameters) {
  SynthParams p;
  p.classes = 1;
  EXPECT_THROW(synthesize(p), InvalidInputError);
  p = {};
  p.num_joints = 13;
  EXPECT_THROW(synthesize(p), InvalidInputError);
  p = {};
  p.frames = 0;
  EXPECT_THROW(synthesize(p), InvalidInputError);
}

TEST(Preprocess, CenterZeroesFrameZeroRoot) {
  SynthParams p;
  p.samples_per_class = 1;
  const SkeletonSequence c = center(synthesize(p)[2], SkeletonTopology::ntu25());
  for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(joint_at(c.joints, ch, 0, 0), 0);
}

TEST(Preprocess, ResampleIntegerRatioPicksFrames) {
  Rng rng(2);
  SkeletonSequence s;
  s.joints = test::random_tensor({3, 32, 25}, rng);
  const SkeletonSequence r = resample(s, 16);
  ASSERT_EQ(r.frames(), 16u);
  for (std::size_t t = 0; t < 16; ++t)
    for (std::size_t v = 0; v < 25; ++v)
      EXPECT_EQ(joint_at(r.joints, 1, t, v), joint_at(s.joints, 1, 2 * t, v));
}

TEST(Preprocess, ResampleInterpolatesLinearly) {
  SkeletonSequence s;
  s.joints = Tensor::zeros({3, 3, 2});
  for (std::size_t t = 0; t < 3; ++t) s.joints[idx3(s.joints, 0, t, 1)] = Real(t * 10);
  // t_i = i * 3 / 2: 0 and 1.5.
  const SkeletonSequence r = resample(s, 2);
  EXPECT_EQ(joint_at(r.joints, 0, 0, 1), 0);
  EXPECT_FLOAT_EQ(joint_at(r.joints, 0, 1, 1), 15);
}

TEST(Preprocess, ShortSequencesAreZeroPadded) {
  Rng rng(3);
  SkeletonSequence s;
  s.joints = test::random_tensor({3, 3, 25}, rng);
  const SkeletonSequence r = resample(s, 8);
  ASSERT_EQ(r.frames(), 8u);
  for (std::size_t v = 0; v < 25; ++v) {
    EXPECT_EQ(joint_at(r.joints, 2, 2, v), joint_at(s.joints, 2, 2, v));
    for (std::size_t t = 3; t < 8; ++t) EXPECT_EQ(joint_at(r.joints, 2, t, v), 0);
  }
  EXPECT_THROW(resample(s, 0), InvalidInputError);
}

TEST(Preprocess, BatchesCoverTheSetInOrder) {
  SynthParams p;
  p.classes = 2;
  p.samples_per_class = 5;
  p.frames = 12;
  const auto seqs = synthesize(p);
  const auto topo = SkeletonTopology::ntu25();
  const auto batches = preprocess_batch(seqs, 6, 4, topo);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[2].size(), 2u);
  EXPECT_EQ(batches[0].streams.bone.shape(), (Shape{4, 3, 6, 25}));
  EXPECT_EQ(batches[1].labels, (std::vector<int>{0, 1, 1, 1}));

  const std::size_t idx[] = {7};
  const ModalityBatch one = make_batch(seqs, idx, 6, topo);
  const auto m = derive_modalities(resample(center(seqs[7], topo), 6), topo);
  EXPECT_TRUE(test::all_equal(one.streams.joint_motion, ops::reshape(m.joint_motion, {1, 3, 6, 25})));
  EXPECT_TRUE(test::all_equal(ops::slice(batches[1].streams.joint_motion, 0, 3, 4),
                              one.streams.joint_motion));

  EXPECT_THROW(preprocess_batch({}, 6, 4, topo), InvalidInputError);
  EXPECT_THROW(preprocess_batch(seqs, 6, 0, topo), InvalidInputError);
  const std::size_t bad[] = {10};
  EXPECT_THROW(make_batch(seqs, bad, 6, topo), InvalidInputError);
}

TEST(Preprocess, NonFiniteCoordinatesRejected) {
  SkeletonSequence s;
  s.joints = Tensor::zeros({3, 4, 25});
  s.joints[idx3(s.joints, 1, 2, 3)] = std::numeric_limits<Real>::infinity();
  const std::vector<SkeletonSequence> seqs{s};
  const std::size_t idx[] = {0};
  EXPECT_THROW(make_batch(seqs, idx, 4, SkeletonTopology::ntu25()), NumericalError);
}

TEST(Fnv1a, KnownVectors) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ULL);
}

TEST(DatasetCacheTest, StoresLoadsAndIgnoresCorruptEntries) {
  const DatasetCache cache(scratch_dir("cache"));
  const auto k = DatasetCache::key("abc", 16);
  EXPECT_NE(k, DatasetCache::key("abc", 32));
  EXPECT_NE(k, DatasetCache::key("abd", 16));
  EXPECT_FALSE(cache.load(k).has_value());
  Rng rng(4);
  const Tensor t = test::random_tensor({3, 4, 5}, rng);
  cache.store(k, t);
  const auto back = cache.load(k);
  ASSERT_TRUE(back.has_value());
  EXPECT_TRUE(test::all_equal(*back, t));
  for (const auto& e : fs::directory_iterator(cache.dir())) std::ofstream(e.path()) << "junk";
  EXPECT_FALSE(cache.load(k).has_value());
}

TEST(LoadNtuDirectory, LabelsSortsAndCaches) {
  const fs::path dir = scratch_dir("ntu");
  SynthParams p;
  p.classes = 2;
  p.samples_per_class = 1;
  p.frames = 10;
  const auto seqs = synthesize(p);
  std::ofstream(dir / "S001C001P001R001A004.skeleton") << serialize_ntu(seqs[1]);
  std::ofstream(dir / "S001C001P001R001A002.skeleton") << serialize_ntu(seqs[0]);
  std::ofstream(dir / "notes.txt") << "ignored";
  const DatasetCache cache(dir / "cache");
  const auto loaded = load_ntu_directory(dir, 5, &cache);
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(loaded[0].label, 1);
  EXPECT_EQ(loaded[1].label, 3);
  const auto topo = SkeletonTopology::ntu25();
  EXPECT_TRUE(test::all_equal(loaded[1].joints, resample(center(seqs[1], topo), 5).joints));
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "cache")) ++entries;
  EXPECT_EQ(entries, 2u);
  const auto again = load_ntu_directory(dir, 5, &cache);
  EXPECT_TRUE(test::all_equal(again[0].joints, loaded[0].joints));
  EXPECT_THROW(load_ntu_directory(dir / "missing", 5), IoError);
  std::ofstream(dir / "unlabelled.skeleton") << serialize_ntu(seqs[0]);
  EXPECT_THROW(load_ntu_directory(dir, 5), FormatError);
}

}  // namespace
}  // namespace spikegraph
