#include "spikegraph/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include "spikegraph/errors.hpp"

namespace spikegraph::inline SPIKEGRAPH_PRECISION {

namespace {

constexpr char kMagic[4] = {'S', 'G', 'C', 'K'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get_raw(std::istream& in, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError(std::string("checkpoint truncated in ") + what);
  return v;
}

}  // namespace

const Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.tensor;
  throw FormatError("checkpoint has no tensor named '" + name + "'");
}

void save_checkpoint(const std::filesystem::path& path, std::uint64_t plan_hash, const NamedTensors& tensors) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  const std::string tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out.write(kMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, plan_hash);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
      out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      write_tensor(out, t.tensor);
    }
    if (!out) throw IoError("failed writing checkpoint " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError(path.string() + " is not a checkpoint");
  Checkpoint c;
  c.version = get_raw<std::uint32_t>(in, "version");
  if (c.version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(c.version));
  c.plan_hash = get_raw<std::uint64_t>(in, "plan hash");
  const auto count = get_raw<std::uint32_t>(in, "tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get_raw<std::uint32_t>(in, "name length");
    if (len > 4096) throw FormatError("checkpoint tensor name too long");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw FormatError("checkpoint truncated in tensor name");
    c.tensors.push_back({std::move(name), read_tensor(in)});
  }
  return c;
}

void require_plan(const Checkpoint& ckpt, std::uint64_t expected) {
  if (ckpt.plan_hash != expected) {
    std::ostringstream s;
    s << "checkpoint layer-plan hash " << std::hex << ckpt.plan_hash << " does not match configuration " << expected;
    throw ConfigError(s.str());
  }
}

void restore_into(const Checkpoint& ckpt, const NamedTensors& targets, const std::string& prefix) {
  for (const auto& t : targets) {
    const Tensor& src = ckpt.get(prefix + t.name);
    if (src.shape() != t.tensor.shape())
      throw FormatError("checkpoint tensor '" + prefix + t.name + "' has shape " + to_string(src.shape()) +
                        ", expected " + to_string(t.tensor.shape()));
    Tensor dst = t.tensor;
    std::copy(src.data().begin(), src.data().end(), dst.data().begin());
  }
}

}  // namespace spikegraph::inline SPIKEGRAPH_PRECISION
