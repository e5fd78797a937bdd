#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "masc/pose_sequence.hpp"

namespace masc {

/// PSEQ binary layout (all little-endian):
///   0  char[4]  "PSEQ"
///   4  u32      format version
///   8  u32      T
///  12  u32      J
///  16  u32      C
///  20  f64      fps
///  28  f64[T*J*C] row-major values
inline constexpr std::uint32_t kPoseFormatVersion = 1;
inline constexpr std::size_t kPoseHeaderBytes = 28;

std::vector<std::uint8_t> encode_pose_sequence(const PoseSequence& seq);

/// Throws FormatError (kMalformedHeader, kVersionMismatch, kShapeMismatch or
/// kTruncated) carrying the byte offset where parsing stopped.
PoseSequence decode_pose_sequence(std::span<const std::uint8_t> bytes);

void write_pose_file(const std::filesystem::path& path, const PoseSequence& seq);

/// Reads a PSEQ file; when `expected_shape` is given ({T, J, C}) a different
/// shape is reported as kShapeMismatch.
PoseSequence read_pose_file(const std::filesystem::path& path,
                            std::optional<std::array<std::size_t, 3>> expected_shape = std::nullopt);

namespace le {
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void put_f64(std::vector<std::uint8_t>& out, double v);
std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset);
std::uint64_t get_u64(std::span<const std::uint8_t> bytes, std::size_t offset);
double get_f64(std::span<const std::uint8_t> bytes, std::size_t offset);
}  // namespace le

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace masc
