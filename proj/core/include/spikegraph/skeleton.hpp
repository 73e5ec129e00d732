#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spikegraph/nn.hpp"
#include "spikegraph/tensor.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

/// Tree over V joints given as (child, parent) pairs, 0-based.
struct SkeletonTopology {
  std::size_t num_joints = 0;
  std::size_t root = 0;
  std::vector<std::pair<std::size_t, std::size_t>> edges;

  /// Kinect v2, 25 joints, rooted at spine base (index 0).
  static SkeletonTopology ntu25();
  /// Kinect v1, 20 joints, rooted at hip center (index 0).
  static SkeletonTopology ucla20();
  /// Chain 0 <- 1 <- ... <- V-1.
  static SkeletonTopology chain(std::size_t num_joints);
  /// Uniformly random recursive tree rooted at 0.
  static SkeletonTopology random_tree(std::size_t num_joints, Rng& rng);
  static SkeletonTopology for_joints(std::size_t num_joints);

  /// parent[v]; the root maps to itself.
  std::vector<std::size_t> parents() const;
  /// Throws InvalidInputError unless the edges form a spanning tree.
  void validate() const;
};

struct SkeletonSequence {
  Tensor joints;  // [3, T, V], metres
  int label = -1;
  std::optional<int> subject;
  std::optional<int> camera;

  std::size_t frames() const { return joints.dim(1); }
  std::size_t num_joints() const { return joints.dim(2); }
};

/// The four streams, each [C, T, V] (or [B, C, T, V] when batched).
struct ModalityBundle {
  Tensor joint;
  Tensor bone;
  Tensor joint_motion;
  Tensor bone_motion;

  /// Fusion order: bone, joint, bone motion, joint motion.
  std::array<Tensor, 4> fusion_order() const { return {bone, joint, bone_motion, joint_motion}; }
};

inline constexpr std::array<const char*, 4> kModalityNames = {"bone", "joint", "bone_motion",
                                                              "joint_motion"};

/// Parses the NTU `.skeleton` text layout, keeping the first body per frame
/// and dropping frames with no body.
SkeletonSequence parse_ntu(std::string_view text);
std::string serialize_ntu(const SkeletonSequence& seq);

/// Action label encoded as `A###` in an NTU file name, 0-based; nullopt if absent.
std::optional<int> label_from_filename(const std::string& name);

ModalityBundle derive_modalities(const SkeletonSequence& seq, const SkeletonTopology& topo);

struct SynthParams {
  std::size_t classes = 4;
  std::size_t samples_per_class = 50;
  std::size_t num_joints = 25;
  std::size_t frames = 32;
  std::uint64_t seed = 0;
  double noise = 0.01;
  double amplitude = 0.25;
};

/// Motion signature of one synthetic class: a primary limb subtree
/// oscillating along one axis and a secondary limb at half amplitude.
struct SynthClassSpec {
  std::size_t limb = 0;
  std::size_t axis = 0;
  double freq = 1.0;
  std::size_t secondary_limb = 0;
  std::size_t secondary_axis = 0;
};
SynthClassSpec synth_class_spec(std::size_t cls, std::size_t num_joints);

/// Deterministic per-class limb oscillations plus Gaussian jitter, balanced
/// labels, ordered class-major.
std::vector<SkeletonSequence> synthesize(const SynthParams& params);

/// Noise-free class template trajectory [3, frames, V] (generator parameters
/// at zero jitter); used to reason about class separation.
Tensor synth_class_mean(const SynthParams& params, std::size_t cls);

/// Subtracts the frame-0 root joint from every coordinate.
SkeletonSequence center(const SkeletonSequence& seq, const SkeletonTopology& topo);
/// Linear resampling at t_i = i * T / target_T when T >= target_T; zero
/// padding of the trailing frames otherwise.
SkeletonSequence resample(const SkeletonSequence& seq, std::size_t target_frames);

struct ModalityBatch {
  ModalityBundle streams;  // each [B, 3, T, V]
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

/// Centers, resamples and derives modalities for `indices` of `sequences`.
ModalityBatch make_batch(std::span<const SkeletonSequence> sequences,
                         std::span<const std::size_t> indices, std::size_t target_frames,
                         const SkeletonTopology& topo);

/// Splits the whole set, in order, into batches of at most `batch_size`.
std::vector<ModalityBatch> preprocess_batch(std::span<const SkeletonSequence> sequences,
                                            std::size_t target_frames, std::size_t batch_size,
                                            const SkeletonTopology& topo);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// On-disk cache of preprocessed joint tensors keyed by source content and
/// preprocessing parameters.
class DatasetCache {
 public:
  explicit DatasetCache(std::filesystem::path dir);
  static std::uint64_t key(std::string_view source_bytes, std::size_t target_frames);
  std::optional<Tensor> load(std::uint64_t key) const;
  void store(std::uint64_t key, const Tensor& joints) const;
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path path_for(std::uint64_t key) const;
  std::filesystem::path dir_;
};

/// Loads every `*.skeleton` file in `dir` (sorted by name), labels from the
/// file name, centered and resampled to `target_frames`. Uses `cache` if given.
std::vector<SkeletonSequence> load_ntu_directory(const std::filesystem::path& dir,
                                                 std::size_t target_frames,
                                                 const DatasetCache* cache = nullptr);

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
