#include "spikegraph/skeleton.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <regex>
#include <sstream>

#include "spikegraph/errors.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

namespace {

SkeletonTopology from_one_based(std::size_t v, std::initializer_list<std::pair<int, int>> pairs) {
  SkeletonTopology t;
  t.num_joints = v;
  t.root = 0;
  for (auto [c, p] : pairs) t.edges.emplace_back(c - 1, p - 1);
  return t;
}

std::size_t at(std::size_t c, std::size_t t, std::size_t v, std::size_t T, std::size_t V) {
  return (c * T + t) * V + v;
}

// Line cursor over the NTU text layout with 1-based line tracking.
class LineReader {
 public:
  explicit LineReader(std::string_view text) : text_(text) {}

  std::string_view next(const char* what) {
    while (pos_ <= text_.size()) {
      if (pos_ == text_.size()) break;
      const std::size_t end = std::min(text_.find('\n', pos_), text_.size());
      std::string_view line = text_.substr(pos_, end - pos_);
      pos_ = end + 1;
      ++line_;
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t'))
        line.remove_suffix(1);
      while (!line.empty() && (line.front() == ' ' || line.front() == '\t')) line.remove_prefix(1);
      if (!line.empty()) return line;
    }
    throw ParseError(std::string("truncated file: expected ") + what, line_ + 1);
  }

  long integer(const char* what) {
    const std::string_view s = next(what);
    long value = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw ParseError(std::string("expected integer ") + what + ", got '" + std::string(s) + "'",
                       line_);
    }
    return value;
  }

  std::size_t line() const { return line_; }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 0;
};

std::array<float, 3> parse_xyz(std::string_view line, std::size_t lineno) {
  std::array<float, 3> xyz{};
  const char* p = line.data();
  const char* end = line.data() + line.size();
  for (int k = 0; k < 3; ++k) {
    while (p < end && (*p == ' ' || *p == '\t')) ++p;
    const auto [q, ec] = std::from_chars(p, end, xyz[k]);
    if (ec != std::errc()) throw ParseError("expected joint coordinates", lineno);
    p = q;
  }
  for (float c : xyz)
    if (!std::isfinite(c)) throw ParseError("non-finite joint coordinate", lineno);
  return xyz;
}

// Subtree membership: desc[j] is true when j lies under `top` (inclusive).
std::vector<bool> subtree(const std::vector<std::size_t>& parent, std::size_t root,
                          std::size_t top) {
  std::vector<bool> in(parent.size(), false);
  for (std::size_t j = 0; j < parent.size(); ++j) {
    std::size_t k = j;
    while (true) {
      if (k == top) {
        in[j] = true;
        break;
      }
      if (k == root) break;
      k = parent[k];
    }
  }
  return in;
}

struct ClassMotion {
  std::size_t limb;  // joint whose subtree oscillates
  std::size_t axis;
  double freq;
};

ClassMotion class_motion(std::size_t cls, std::size_t v) {
  return {1 + (cls * 7) % (v - 1), cls % 3, 1.0 + static_cast<double>((cls / 3) % 2)};
}

// Deterministic rest pose: each child sits 0.15 m from its parent in a fixed
// pseudo-random direction biased upward.
std::vector<std::array<double, 3>> rest_pose(const SkeletonTopology& topo) {
  const auto parent = topo.parents();
  Rng rng(0x5eed5eedULL + topo.num_joints);
  std::vector<std::array<double, 3>> dir(topo.num_joints);
  for (auto& d : dir) {
    d = {rng.normal(), rng.normal() + 1.0, rng.normal()};
    const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    for (double& c : d) c *= 0.15 / n;
  }
  std::vector<std::array<double, 3>> pos(topo.num_joints, {0.0, 0.0, 0.0});
  std::vector<bool> done(topo.num_joints, false);
  done[topo.root] = true;
  bool progress = true;
  while (progress) {
    progress = false;
    for (std::size_t j = 0; j < topo.num_joints; ++j) {
      if (done[j] || !done[parent[j]]) continue;
      for (int k = 0; k < 3; ++k) pos[j][k] = pos[parent[j]][k] + dir[j][k];
      done[j] = true;
      progress = true;
    }
  }
  return pos;
}

struct Jitter {
  double phase = 0.0;
  double amp_scale = 1.0;
  std::array<double, 3> offset{0.0, 0.0, 0.0};
};

Tensor render(const SynthParams& p, const SkeletonTopology& topo,
              const std::vector<std::array<double, 3>>& rest, std::size_t cls, const Jitter& jit,
              Rng* noise) {
  const std::size_t T = p.frames, V = p.num_joints;
  const auto parent = topo.parents();
  const ClassMotion m = class_motion(cls, V);
  const auto moving = subtree(parent, topo.root, m.limb);
  // A second, weaker limb gives each class a distinct secondary signature.
  const ClassMotion m2 = class_motion(cls + 5, V);
  const auto moving2 = subtree(parent, topo.root, m2.limb);
  Tensor x = Tensor::zeros({3, T, V});
  for (std::size_t t = 0; t < T; ++t) {
    const double ph = 2.0 * std::numbers::pi * static_cast<double>(t) / static_cast<double>(T);
    const double d1 = p.amplitude * jit.amp_scale * std::sin(m.freq * ph + jit.phase);
    const double d2 = 0.5 * p.amplitude * jit.amp_scale * std::sin(m2.freq * ph + jit.phase);
    for (std::size_t v = 0; v < V; ++v) {
      for (std::size_t c = 0; c < 3; ++c) {
        double val = rest[v][c] + jit.offset[c];
        if (moving[v] && c == m.axis) val += d1;
        if (moving2[v] && c == (m2.axis + 1) % 3) val += d2;
        if (noise) val += noise->normal(0.0, p.noise);
        x[at(c, t, v, T, V)] = static_cast<Real>(val);
      }
    }
  }
  return x;
}

}  // namespace

SkeletonTopology SkeletonTopology::ntu25() {
  return from_one_based(25, {{2, 1},  {21, 2},  {3, 21},  {4, 3},   {5, 21},  {6, 5},
                             {7, 6},  {8, 7},   {9, 21},  {10, 9},  {11, 10}, {12, 11},
                             {13, 1}, {14, 13}, {15, 14}, {16, 15}, {17, 1},  {18, 17},
                             {19, 18}, {20, 19}, {22, 8}, {23, 7},  {24, 12}, {25, 11}});
}

SkeletonTopology SkeletonTopology::ucla20() {
  return from_one_based(20, {{2, 1},   {3, 2},   {4, 3},   {5, 3},   {6, 5},
                             {7, 6},   {8, 7},   {9, 3},   {10, 9},  {11, 10},
                             {12, 11}, {13, 1},  {14, 13}, {15, 14}, {16, 15},
                             {17, 1},  {18, 17}, {19, 18}, {20, 19}});
}

SkeletonTopology SkeletonTopology::chain(std::size_t num_joints) {
  SkeletonTopology t;
  t.num_joints = num_joints;
  for (std::size_t v = 1; v < num_joints; ++v) t.edges.emplace_back(v, v - 1);
  return t;
}

SkeletonTopology SkeletonTopology::random_tree(std::size_t num_joints, Rng& rng) {
  SkeletonTopology t;
  t.num_joints = num_joints;
  for (std::size_t v = 1; v < num_joints; ++v) t.edges.emplace_back(v, rng.index(v));
  return t;
}

SkeletonTopology SkeletonTopology::for_joints(std::size_t num_joints) {
  if (num_joints == 25) return ntu25();
  if (num_joints == 20) return ucla20();
  return chain(num_joints);
}

std::vector<std::size_t> SkeletonTopology::parents() const {
  std::vector<std::size_t> p(num_joints);
  for (std::size_t v = 0; v < num_joints; ++v) p[v] = v;
  for (auto [c, par] : edges) {
    if (c >= num_joints || par >= num_joints)
      throw InvalidInputError("topology edge index out of range");
    p[c] = par;
  }
  return p;
}

void SkeletonTopology::validate() const {
  if (num_joints == 0) throw InvalidInputError("topology has no joints");
  if (root >= num_joints) throw InvalidInputError("topology root out of range");
  if (edges.size() != num_joints - 1)
    throw InvalidInputError("a spanning tree over " + std::to_string(num_joints) + " joints needs " +
                            std::to_string(num_joints - 1) + " edges, got " +
                            std::to_string(edges.size()));
  std::vector<int> has_parent(num_joints, 0);
  for (auto [c, p] : edges) {
    if (c >= num_joints || p >= num_joints)
      throw InvalidInputError("topology edge index out of range");
    if (c == root) throw InvalidInputError("root joint cannot have a parent");
    if (has_parent[c]++) throw InvalidInputError("joint " + std::to_string(c) + " has two parents");
  }
  const auto parent = parents();
  for (std::size_t v = 0; v < num_joints; ++v) {
    std::size_t k = v, steps = 0;
    while (k != root) {
      k = parent[k];
      if (++steps > num_joints) throw InvalidInputError("topology contains a cycle");
    }
  }
}

SkeletonSequence parse_ntu(std::string_view text) {
  LineReader r(text);
  const long frames = r.integer("frame count");
  if (frames <= 0) throw ParseError("empty sequence (frame count " + std::to_string(frames) + ")", r.line());
  std::vector<std::array<float, 3>> coords;
  std::size_t kept = 0;
  for (long f = 0; f < frames; ++f) {
    const long bodies = r.integer("body count");
    if (bodies < 0) throw ParseError("negative body count", r.line());
    for (long b = 0; b < bodies; ++b) {
      r.next("body info line");
      const long joints = r.integer("joint count");
      if (joints != 25)
        throw FormatError("expected 25 joints per body, got " + std::to_string(joints) +
                          " at line " + std::to_string(r.line()));
      for (long j = 0; j < joints; ++j) {
        const std::string_view line = r.next("joint line");
        const auto xyz = parse_xyz(line, r.line());
        if (b == 0) coords.push_back(xyz);
      }
    }
    if (bodies > 0) ++kept;
  }
  if (kept == 0) throw ParseError("no frame contains a body", r.line());
  const std::size_t T = kept, V = 25;
  SkeletonSequence seq;
  seq.joints = Tensor::zeros({3, T, V});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t v = 0; v < V; ++v)
      for (std::size_t c = 0; c < 3; ++c) seq.joints[at(c, t, v, T, V)] = coords[t * V + v][c];
  return seq;
}

std::string serialize_ntu(const SkeletonSequence& seq) {
  const std::size_t T = seq.frames(), V = seq.num_joints();
  if (V != 25) throw FormatError("NTU layout requires 25 joints, got " + std::to_string(V));
  std::string out = std::to_string(T) + "\n";
  char buf[128];
  for (std::size_t t = 0; t < T; ++t) {
    out += "1\n0 0 0 0 0 0 0 0 0 2\n25\n";
    for (std::size_t v = 0; v < V; ++v) {
      std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g 0 0 0 0 0 0 0 0 2\n",
                    static_cast<double>(static_cast<float>(seq.joints[at(0, t, v, T, V)])),
                    static_cast<double>(static_cast<float>(seq.joints[at(1, t, v, T, V)])),
                    static_cast<double>(static_cast<float>(seq.joints[at(2, t, v, T, V)])));
      out += buf;
    }
  }
  return out;
}

std::optional<int> label_from_filename(const std::string& name) {
  static const std::regex re("A(\\d{3})");
  std::smatch m;
  if (!std::regex_search(name, m, re)) return std::nullopt;
  const int id = std::stoi(m[1].str());
  if (id < 1) return std::nullopt;
  return id - 1;
}

ModalityBundle derive_modalities(const SkeletonSequence& seq, const SkeletonTopology& topo) {
  const Tensor& j = seq.joints;
  if (j.rank() != 3 || j.dim(0) != 3)
    throw DimensionError("joints must be [3, T, V], got " + to_string(j.shape()));
  const std::size_t T = j.dim(1), V = j.dim(2);
  if (topo.num_joints != V)
    throw InvalidInputError("topology covers " + std::to_string(topo.num_joints) +
                            " joints, sequence has " + std::to_string(V));
  const auto parent = topo.parents();
  ModalityBundle b;
  b.joint = j.clone();
  b.bone = Tensor::zeros(j.shape());
  b.joint_motion = Tensor::zeros(j.shape());
  b.bone_motion = Tensor::zeros(j.shape());
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t v = 0; v < V; ++v)
        if (v != topo.root)
          b.bone[at(c, t, v, T, V)] = j[at(c, t, v, T, V)] - j[at(c, t, parent[v], T, V)];
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t t = 0; t + 1 < T; ++t)
      for (std::size_t v = 0; v < V; ++v) {
        b.joint_motion[at(c, t, v, T, V)] = j[at(c, t + 1, v, T, V)] - j[at(c, t, v, T, V)];
        b.bone_motion[at(c, t, v, T, V)] = b.bone[at(c, t + 1, v, T, V)] - b.bone[at(c, t, v, T, V)];
      }
  return b;
}

Tensor synth_class_mean(const SynthParams& params, std::size_t cls) {
  const auto topo = SkeletonTopology::for_joints(params.num_joints);
  return render(params, topo, rest_pose(topo), cls, Jitter{}, nullptr);
}

SynthClassSpec synth_class_spec(std::size_t cls, std::size_t num_joints) {
  if (num_joints < 2) throw InvalidInputError("synthetic skeletons need at least 2 joints");
  const ClassMotion m = class_motion(cls, num_joints);
  const ClassMotion m2 = class_motion(cls + 5, num_joints);
  return {m.limb, m.axis, m.freq, m2.limb, (m2.axis + 1) % 3};
}

std::vector<SkeletonSequence> synthesize(const SynthParams& params) {
  if (params.classes < 2) throw InvalidInputError("synthesize needs at least 2 classes");
  if (params.num_joints != 20 && params.num_joints != 25)
    throw InvalidInputError("synthetic skeletons have 20 or 25 joints, got " +
                            std::to_string(params.num_joints));
  if (params.frames == 0) throw InvalidInputError("synthesize needs at least one frame");
  const auto topo = SkeletonTopology::for_joints(params.num_joints);
  const auto rest = rest_pose(topo);
  Rng rng(params.seed);
  std::vector<SkeletonSequence> out;
  out.reserve(params.classes * params.samples_per_class);
  for (std::size_t c = 0; c < params.classes; ++c) {
    for (std::size_t s = 0; s < params.samples_per_class; ++s) {
      Jitter jit;
      jit.phase = rng.uniform(-0.3, 0.3);
      jit.amp_scale = rng.uniform(0.9, 1.1);
      for (double& o : jit.offset) o = rng.uniform(-0.5, 0.5);
      SkeletonSequence seq;
      seq.joints = render(params, topo, rest, c, jit, &rng);
      seq.label = static_cast<int>(c);
      seq.subject = static_cast<int>(s % 10);
      out.push_back(std::move(seq));
    }
  }
  return out;
}

SkeletonSequence center(const SkeletonSequence& seq, const SkeletonTopology& topo) {
  SkeletonSequence out = seq;
  out.joints = seq.joints.clone();
  const std::size_t T = seq.frames(), V = seq.num_joints();
  for (std::size_t c = 0; c < 3; ++c) {
    const Real r = seq.joints[at(c, 0, topo.root, T, V)];
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t v = 0; v < V; ++v) out.joints[at(c, t, v, T, V)] -= r;
  }
  return out;
}

SkeletonSequence resample(const SkeletonSequence& seq, std::size_t target_frames) {
  if (target_frames == 0) throw InvalidInputError("target frame count must be >= 1");
  const std::size_t T = seq.frames(), V = seq.num_joints();
  SkeletonSequence out = seq;
  out.joints = Tensor::zeros({3, target_frames, V});
  if (T < target_frames) {
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t v = 0; v < V; ++v)
          out.joints[at(c, t, v, target_frames, V)] = seq.joints[at(c, t, v, T, V)];
    return out;
  }
  for (std::size_t i = 0; i < target_frames; ++i) {
    // Exact rational position i*T/target avoids drift on integer ratios.
    const std::size_t num = i * T;
    const std::size_t lo = num / target_frames;
    const double frac = static_cast<double>(num % target_frames) / static_cast<double>(target_frames);
    const std::size_t hi = std::min(lo + 1, T - 1);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t v = 0; v < V; ++v) {
        const double a = seq.joints[at(c, lo, v, T, V)];
        const double b = seq.joints[at(c, hi, v, T, V)];
        out.joints[at(c, i, v, target_frames, V)] =
            static_cast<Real>(frac == 0.0 ? a : a + frac * (b - a));
      }
  }
  return out;
}

ModalityBatch make_batch(std::span<const SkeletonSequence> sequences,
                         std::span<const std::size_t> indices, std::size_t target_frames,
                         const SkeletonTopology& topo) {
  if (indices.empty()) throw InvalidInputError("cannot build an empty batch");
  if (target_frames == 0) throw InvalidInputError("target frame count must be >= 1");
  const std::size_t B = indices.size(), V = topo.num_joints;
  const std::size_t per = 3 * target_frames * V;
  ModalityBatch batch;
  const Shape shape{B, 3, target_frames, V};
  batch.streams.joint = Tensor::zeros(shape);
  batch.streams.bone = Tensor::zeros(shape);
  batch.streams.joint_motion = Tensor::zeros(shape);
  batch.streams.bone_motion = Tensor::zeros(shape);
  for (std::size_t b = 0; b < B; ++b) {
    if (indices[b] >= sequences.size()) throw InvalidInputError("batch index out of range");
    const SkeletonSequence& raw = sequences[indices[b]];
    if (raw.num_joints() != V)
      throw InvalidInputError("sequence joint count does not match the topology");
    const auto m = derive_modalities(resample(center(raw, topo), target_frames), topo);
    const std::pair<const Tensor*, Tensor*> pairs[] = {
        {&m.joint, &batch.streams.joint},
        {&m.bone, &batch.streams.bone},
        {&m.joint_motion, &batch.streams.joint_motion},
        {&m.bone_motion, &batch.streams.bone_motion}};
    for (auto [src, dst] : pairs) {
      for (Real x : src->data())
        if (!std::isfinite(x)) throw NumericalError("non-finite coordinate after preprocessing");
      std::copy(src->data().begin(), src->data().end(), dst->data().begin() + b * per);
    }
    batch.labels.push_back(raw.label);
  }
  return batch;
}

std::vector<ModalityBatch> preprocess_batch(std::span<const SkeletonSequence> sequences,
                                            std::size_t target_frames, std::size_t batch_size,
                                            const SkeletonTopology& topo) {
  if (sequences.empty()) throw InvalidInputError("preprocess_batch: empty input set");
  if (batch_size == 0) throw InvalidInputError("preprocess_batch: batch size must be >= 1");
  std::vector<ModalityBatch> out;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < sequences.size(); begin += batch_size) {
    idx.clear();
    for (std::size_t i = begin; i < std::min(begin + batch_size, sequences.size()); ++i)
      idx.push_back(i);
    out.push_back(make_batch(sequences, idx, target_frames, topo));
  }
  return out;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

DatasetCache::DatasetCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create cache directory " + dir_.string() + ": " + ec.message());
}

std::uint64_t DatasetCache::key(std::string_view source_bytes, std::size_t target_frames) {
  const std::string params = "center=root0;resample=linear;T=" + std::to_string(target_frames);
  return fnv1a(params, fnv1a(source_bytes));
}

std::filesystem::path DatasetCache::path_for(std::uint64_t key) const {
  char name[32];
  std::snprintf(name, sizeof name, "%016llx.sgt", static_cast<unsigned long long>(key));
  return dir_ / name;
}

std::optional<Tensor> DatasetCache::load(std::uint64_t key) const {
  std::ifstream in(path_for(key), std::ios::binary);
  if (!in) return std::nullopt;
  try {
    return read_tensor(in);
  } catch (const Error&) {
    return std::nullopt;  // stale or corrupt entry: recompute
  }
}

void DatasetCache::store(std::uint64_t key, const Tensor& joints) const {
  const auto path = path_for(key);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write cache entry " + tmp);
    write_tensor(out, joints);
  }
  std::filesystem::rename(tmp, path);
}

std::vector<SkeletonSequence> load_ntu_directory(const std::filesystem::path& dir,
                                                 std::size_t target_frames,
                                                 const DatasetCache* cache) {
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec))
    throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".skeleton") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  const auto topo = SkeletonTopology::ntu25();
  std::vector<SkeletonSequence> out;
  out.reserve(files.size());
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw IoError("cannot read " + f.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    SkeletonSequence seq;
    const auto label = label_from_filename(f.filename().string());
    if (!label) throw FormatError("no A### label in file name " + f.filename().string());
    seq.label = *label;
    const std::uint64_t k = DatasetCache::key(bytes, target_frames);
    std::optional<Tensor> cached = cache ? cache->load(k) : std::nullopt;
    if (cached && cached->shape() == Shape{3, target_frames, 25}) {
      seq.joints = *cached;
    } else {
      const SkeletonSequence parsed = parse_ntu(bytes);
      seq.joints = resample(center(parsed, topo), target_frames).joints;
      if (cache) cache->store(k, seq.joints);
    }
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
