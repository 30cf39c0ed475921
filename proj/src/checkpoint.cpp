#include "vqunet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace vqunet {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'V', 'Q', 'U', 'N', 'E', 'T', 'C', 'K'};

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  Reader(const std::vector<char>& bytes, const std::filesystem::path& path) : bytes_(bytes), path_(path) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  void read(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) throw CheckpointError(path_.string() + ": truncated checkpoint");
  }

  const std::vector<char>& bytes_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, ModelKind kind, const std::string& config_json,
                      std::span<const Parameter* const> params) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(kind));
  put<std::uint64_t>(out, config_json.size());
  out += config_json;
  put<std::uint64_t>(out, params.size());
  for (const Parameter* p : params) {
    const auto& shape = p->tensor.shape();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put<std::uint64_t>(out, d);
    const auto data = p->tensor.data();
    out.append(reinterpret_cast<const char*>(data.data()), data.size_bytes());
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw CheckpointError("cannot write checkpoint " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw CheckpointError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::vector<char> bytes{std::istreambuf_iterator<char>(file), std::istreambuf_iterator<char>()};
  Reader in(bytes, path);

  char magic[8];
  in.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw CheckpointError(path.string() + ": bad magic");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": unsupported format version " + std::to_string(version));
  }
  Checkpoint ckpt;
  const auto kind = in.get<std::uint32_t>();
  if (kind != 1 && kind != 2) throw CheckpointError(path.string() + ": unknown model kind " + std::to_string(kind));
  ckpt.kind = static_cast<ModelKind>(kind);
  const auto config_len = in.get<std::uint64_t>();
  if (config_len > in.remaining()) throw CheckpointError(path.string() + ": truncated checkpoint");
  ckpt.config_json.resize(config_len);
  in.read(ckpt.config_json.data(), config_len);
  const auto count = in.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto rank = in.get<std::uint32_t>();
    if (rank > 8) throw CheckpointError(path.string() + ": implausible tensor rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& d : shape) d = in.get<std::uint64_t>();
    const auto n = shape_size(shape);
    if (n > in.remaining() / sizeof(double)) throw CheckpointError(path.string() + ": truncated checkpoint");
    std::vector<double> values(n);
    in.read(values.data(), n * sizeof(double));
    ckpt.tensors.emplace_back(std::move(shape), std::move(values));
  }
  if (in.remaining() != 0) throw CheckpointError(path.string() + ": trailing bytes after parameters");
  return ckpt;
}

void assign_parameters(const Checkpoint& ckpt, std::span<Parameter* const> params) {
  if (ckpt.tensors.size() != params.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                          std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (ckpt.tensors[i].shape() != params[i]->tensor.shape()) {
      throw CheckpointError("shape mismatch for '" + params[i]->name + "': checkpoint " +
                            shape_string(ckpt.tensors[i].shape()) + ", model " +
                            shape_string(params[i]->tensor.shape()));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto src = ckpt.tensors[i].data();
    std::copy(src.begin(), src.end(), params[i]->tensor.mutable_data().begin());
  }
}

}  // namespace vqunet
