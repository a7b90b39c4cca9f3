#include "dfmsd/checkpoint.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace dfmsd;
namespace fs = std::filesystem;

namespace {

CheckpointBlob sample_blob() {
  CheckpointBlob b;
  b.kind = CheckpointKind::train_state;
  b.header = R"({"step":3})";
  b.tensors["a"] = Eigen::MatrixXd::NullaryExpr(3, 4, [](Eigen::Index i, Eigen::Index j) { return std::sin(3.0 * i + j) / 7.0; });
  b.tensors["b/c"] = Eigen::MatrixXd::Constant(1, 1, -0.0);
  b.tensors["empty"] = Eigen::MatrixXd(0, 2);
  return b;
}

fs::path temp_file(const std::string &name) {
  const fs::path dir = fs::temp_directory_path() / "dfmsd_test_checkpoint";
  fs::create_directories(dir);
  return dir / name;
}

} // namespace

TEST_CASE("encode and decode round trip bit-exactly") {
  const CheckpointBlob b = sample_blob();
  const std::string bytes = encode_checkpoint(b);
  CHECK(bytes.compare(0, 8, std::string(kCheckpointMagic.begin(), kCheckpointMagic.end())) == 0);
  const CheckpointBlob d = decode_checkpoint(bytes);
  CHECK(d.kind == b.kind);
  CHECK(d.header == b.header);
  REQUIRE(d.tensors.size() == 3);
  for (const auto &[name, m] : b.tensors) {
    CHECK(d.tensors.at(name).rows() == m.rows());
    CHECK(d.tensors.at(name).cols() == m.cols());
    CHECK(d.tensors.at(name) == m);
  }
  CHECK(std::signbit(d.tensors.at("b/c")(0, 0)));
  CHECK(encode_checkpoint(d) == bytes);
}

TEST_CASE("files round trip") {
  const fs::path p = temp_file("ok.ckpt");
  write_checkpoint(sample_blob(), p);
  CHECK(read_checkpoint(p).tensors.at("a") == sample_blob().tensors.at("a"));
  CHECK_THROWS_AS(read_checkpoint(temp_file("missing.ckpt")), CheckpointError);
}

TEST_CASE("truncation, corruption and a bad magic are rejected") {
  const std::string bytes = encode_checkpoint(sample_blob());
  for (std::size_t cut : {std::size_t{0}, std::size_t{4}, std::size_t{12}, bytes.size() / 2, bytes.size() - 1})
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, cut)), CheckpointError);

  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  CHECK_THROWS_AS(decode_checkpoint(flipped), CheckpointError);

  std::string magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(magic), CheckpointError);

  std::string version = bytes;
  version[6] = '\x02';
  CHECK_THROWS_AS(decode_checkpoint(version), CheckpointError);

  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), CheckpointError);

  const fs::path p = temp_file("short.ckpt");
  std::ofstream(p, std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  CHECK_THROWS_AS(read_checkpoint(p), CheckpointError);
}
