#include "masc/pose_sequence.hpp"

#include <string>

#include "masc/errors.hpp"

namespace masc {

void require_same_shape(const PoseSequence& a, const PoseSequence& b, const char* what) {
  if (!a.same_shape(b)) {
    auto dims = [](const PoseSequence& s) {
      return "(" + std::to_string(s.frames) + ", " + std::to_string(s.joints) + ", " + std::to_string(s.channels) +
             ")";
    };
    throw DimensionError(std::string(what) + ": shapes " + dims(a) + " and " + dims(b) + " differ");
  }
}

}  // namespace masc
