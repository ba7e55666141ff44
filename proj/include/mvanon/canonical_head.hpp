#pragma once

#include "mvanon/geometry.hpp"

// Numeric description of the canonical head: an ellipsoid head shell in its
// own frame (+z forward out of the face, +y up, +x toward the subject's
// anatomical right), origin at the head center. Landmarks sit on the
// equator plane y = 0. The mesh builder and the head-anchor math must agree
// on these numbers; a test locks them together.
namespace mvanon::canonical {

inline constexpr double kSemiAxisX = 0.078;  // half-width at the ears, m
inline constexpr double kSemiAxisY = 0.105;  // half-height, m
inline constexpr double kSemiAxisZ = 0.092;  // half-depth, m
inline constexpr double kNoseBump = 0.016;   // nose tip sticks out this far past the shell

inline constexpr int kSegments = 32;  // longitudinal steps (around y)
inline constexpr int kRings = 16;     // latitudinal steps (pole to pole)

// Eye direction: 22.5 degrees off the forward axis toward each side.
inline constexpr double kEyeAngleDeg = 22.5;

inline Vec3 nose_tip() { return {0.0, 0.0, kSemiAxisZ + kNoseBump}; }
inline Vec3 eye_center(bool right) {
    const double phi = kEyeAngleDeg * kPi / 180.0;
    return {(right ? 1.0 : -1.0) * kSemiAxisX * std::sin(phi), 0.0, kSemiAxisZ * std::cos(phi)};
}
inline Vec3 ear_center(bool right) { return {(right ? 1.0 : -1.0) * kSemiAxisX, 0.0, 0.0}; }

}  // namespace mvanon::canonical
