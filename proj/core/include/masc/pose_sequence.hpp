#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace masc {

/// T x J x C block of joint values (row-major), e.g. 2D pixels + confidence
/// or 3D millimetres, tagged with its frame rate.
struct PoseSequence {
  std::size_t frames = 0;
  std::size_t joints = 0;
  std::size_t channels = 0;
  double fps = 50.0;
  std::vector<double> data;

  PoseSequence() = default;
  PoseSequence(std::size_t t, std::size_t j, std::size_t c, double rate = 50.0)
      : frames(t), joints(j), channels(c), fps(rate), data(t * j * c, 0.0) {}

  std::size_t index(std::size_t t, std::size_t j, std::size_t c) const { return (t * joints + j) * channels + c; }
  double& at(std::size_t t, std::size_t j, std::size_t c) { return data[index(t, j, c)]; }
  double at(std::size_t t, std::size_t j, std::size_t c) const { return data[index(t, j, c)]; }

  std::span<const double> joint(std::size_t t, std::size_t j) const {
    return std::span<const double>(data).subspan(index(t, j, 0), channels);
  }

  bool same_shape(const PoseSequence& other) const {
    return frames == other.frames && joints == other.joints && channels == other.channels;
  }

  bool operator==(const PoseSequence& other) const = default;
};

/// Throws DimensionError unless both sequences have identical T, J and C.
void require_same_shape(const PoseSequence& a, const PoseSequence& b, const char* what);

}  // namespace masc
