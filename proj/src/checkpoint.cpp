#include "dfmsd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dfmsd {

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

namespace {

std::uint64_t fnv1a(const char *data, std::size_t n) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T> void put(std::string &out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Cursor {
public:
  Cursor(const std::string &bytes, std::size_t pos, std::size_t end) : bytes_(bytes), pos_(pos), end_(end) {}

  template <typename T> T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  const char *raw(std::size_t n) {
    need(n);
    const char *p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  bool done() const { return pos_ == end_; }

private:
  void need(std::size_t n) const {
    if (n > end_ - pos_)
      throw CheckpointError("checkpoint truncated");
  }
  const std::string &bytes_;
  std::size_t pos_, end_;
};

} // namespace

std::string encode_checkpoint(const CheckpointBlob &blob) {
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(blob.kind));
  put<std::uint64_t>(out, blob.header.size());
  out += blob.header;
  put<std::uint64_t>(out, blob.tensors.size());
  for (const auto &[name, m] : blob.tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    out.append(reinterpret_cast<const char *>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  put<std::uint64_t>(out, fnv1a(out.data() + kCheckpointMagic.size(), out.size() - kCheckpointMagic.size()));
  return out;
}

CheckpointBlob decode_checkpoint(const std::string &bytes) {
  if (bytes.size() < kCheckpointMagic.size() ||
      std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0)
    throw CheckpointError("not a checkpoint (magic header mismatch)");
  if (bytes.size() < kCheckpointMagic.size() + sizeof(std::uint64_t))
    throw CheckpointError("checkpoint truncated");
  const std::size_t body_end = bytes.size() - sizeof(std::uint64_t);
  std::uint64_t digest;
  std::memcpy(&digest, bytes.data() + body_end, sizeof(digest));
  if (digest != fnv1a(bytes.data() + kCheckpointMagic.size(), body_end - kCheckpointMagic.size()))
    throw CheckpointError("checkpoint digest mismatch (truncated or corrupt)");

  Cursor cur(bytes, kCheckpointMagic.size(), body_end);
  CheckpointBlob blob;
  const auto kind = cur.get<std::uint32_t>();
  if (kind != static_cast<std::uint32_t>(CheckpointKind::model) &&
      kind != static_cast<std::uint32_t>(CheckpointKind::train_state))
    throw CheckpointError("unknown checkpoint kind " + std::to_string(kind));
  blob.kind = static_cast<CheckpointKind>(kind);
  blob.header = cur.take(cur.get<std::uint64_t>());
  const auto count = cur.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = cur.take(cur.get<std::uint32_t>());
    const auto rows = cur.get<std::uint64_t>();
    const auto cols = cur.get<std::uint64_t>();
    if (rows > (1ULL << 31) || cols > (1ULL << 31))
      throw CheckpointError("implausible tensor extent in checkpoint");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    const std::size_t n = static_cast<std::size_t>(m.size()) * sizeof(double);
    std::memcpy(m.data(), cur.raw(n), n);
    blob.tensors.emplace(std::move(name), std::move(m));
  }
  if (!cur.done())
    throw CheckpointError("trailing bytes in checkpoint");
  return blob;
}

void write_checkpoint(const CheckpointBlob &blob, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw CheckpointError("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(blob);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

CheckpointBlob read_checkpoint(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw CheckpointError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

} // namespace dfmsd
