#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

namespace dfmsd {

/// 8-byte header every checkpoint starts with: "DFMSD" NUL, format major 1, minor 0.
inline constexpr std::array<char, 8> kCheckpointMagic = {'D', 'F', 'M', 'S', 'D', '\x00', '\x01', '\x00'};

class CheckpointError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class CheckpointKind : std::uint32_t { model = 1, train_state = 2 };

/**
 * Versioned blob: a JSON header plus named dense matrices.
 *
 * Layout after the magic: u32 kind, u64 header length, header bytes, u64
 * tensor count, then per tensor (u32 name length, name, u64 rows, u64 cols,
 * rows*cols little-endian doubles, column-major), and a trailing u64 FNV-1a
 * digest of everything between the magic and the digest.
 */
struct CheckpointBlob {
  CheckpointKind kind = CheckpointKind::model;
  std::string header;
  std::map<std::string, Eigen::MatrixXd> tensors;
};

std::string encode_checkpoint(const CheckpointBlob &blob);
CheckpointBlob decode_checkpoint(const std::string &bytes);

void write_checkpoint(const CheckpointBlob &blob, const std::filesystem::path &path);
CheckpointBlob read_checkpoint(const std::filesystem::path &path);

} // namespace dfmsd
