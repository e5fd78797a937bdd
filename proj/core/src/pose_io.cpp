#include "masc/pose_io.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "masc/errors.hpp"

namespace masc {

namespace le {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[offset + i]) << (8 * i);
  return v;
}

double get_f64(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return std::bit_cast<double>(get_u64(bytes, offset));
}

}  // namespace le

std::vector<std::uint8_t> encode_pose_sequence(const PoseSequence& seq) {
  if (seq.data.size() != seq.frames * seq.joints * seq.channels) {
    throw DimensionError("pose sequence data does not match its declared shape");
  }
  std::vector<std::uint8_t> out{'P', 'S', 'E', 'Q'};
  out.reserve(kPoseHeaderBytes + seq.data.size() * 8);
  le::put_u32(out, kPoseFormatVersion);
  le::put_u32(out, static_cast<std::uint32_t>(seq.frames));
  le::put_u32(out, static_cast<std::uint32_t>(seq.joints));
  le::put_u32(out, static_cast<std::uint32_t>(seq.channels));
  le::put_f64(out, seq.fps);
  for (double v : seq.data) le::put_f64(out, v);
  return out;
}

PoseSequence decode_pose_sequence(std::span<const std::uint8_t> bytes) {
  using Kind = FormatError::Kind;
  if (bytes.size() < 4) throw FormatError(Kind::kTruncated, bytes.size(), "PSEQ file ends inside the magic");
  if (bytes[0] != 'P' || bytes[1] != 'S' || bytes[2] != 'E' || bytes[3] != 'Q') {
    throw FormatError(Kind::kMalformedHeader, 0, "bad magic, expected \"PSEQ\"");
  }
  if (bytes.size() < 8) throw FormatError(Kind::kTruncated, bytes.size(), "PSEQ file ends inside the version");
  const std::uint32_t version = le::get_u32(bytes, 4);
  if (version != kPoseFormatVersion) {
    throw FormatError(Kind::kVersionMismatch, 4,
                      "unsupported PSEQ version " + std::to_string(version) + " (this build reads version " +
                          std::to_string(kPoseFormatVersion) + ")");
  }
  if (bytes.size() < kPoseHeaderBytes) {
    throw FormatError(Kind::kTruncated, bytes.size(), "PSEQ header is truncated");
  }
  PoseSequence seq;
  seq.frames = le::get_u32(bytes, 8);
  seq.joints = le::get_u32(bytes, 12);
  seq.channels = le::get_u32(bytes, 16);
  seq.fps = le::get_f64(bytes, 20);
  if (seq.frames == 0 || seq.joints == 0 || seq.channels == 0) {
    throw FormatError(Kind::kMalformedHeader, 8, "PSEQ header declares an empty dimension");
  }
  if (!std::isfinite(seq.fps) || seq.fps <= 0.0) {
    throw FormatError(Kind::kMalformedHeader, 20, "PSEQ header has a non-positive frame rate");
  }
  const std::size_t count = seq.frames * seq.joints * seq.channels;
  const std::size_t expected = kPoseHeaderBytes + count * 8;
  if (bytes.size() < expected) {
    throw FormatError(Kind::kTruncated, bytes.size(),
                      "PSEQ payload truncated: expected " + std::to_string(expected) + " bytes");
  }
  if (bytes.size() > expected) {
    throw FormatError(Kind::kShapeMismatch, expected,
                      "PSEQ payload is longer than the declared shape (" + std::to_string(bytes.size() - expected) +
                          " trailing bytes)");
  }
  seq.data.resize(count);
  for (std::size_t i = 0; i < count; ++i) seq.data[i] = le::get_f64(bytes, kPoseHeaderBytes + 8 * i);
  return seq;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

void write_pose_file(const std::filesystem::path& path, const PoseSequence& seq) {
  write_file_bytes(path, encode_pose_sequence(seq));
}

PoseSequence read_pose_file(const std::filesystem::path& path,
                            std::optional<std::array<std::size_t, 3>> expected_shape) {
  PoseSequence seq = decode_pose_sequence(read_file_bytes(path));
  if (expected_shape) {
    const auto& [t, j, c] = *expected_shape;
    if (seq.frames != t || seq.joints != j || seq.channels != c) {
      throw FormatError(FormatError::Kind::kShapeMismatch, 8,
                        "'" + path.string() + "' has shape (" + std::to_string(seq.frames) + ", " +
                            std::to_string(seq.joints) + ", " + std::to_string(seq.channels) + "), expected (" +
                            std::to_string(t) + ", " + std::to_string(j) + ", " + std::to_string(c) + ")");
    }
  }
  return seq;
}

}  // namespace masc
