#pragma once

// Canonical toy-face proportions shared by the generator and the keypoint box
// estimates. Lengths are in units of the face half-width; y grows downward.

namespace svrnn::layout {

inline constexpr double kFaceAspect = 1.3;  // half-height / half-width

inline constexpr double kEyeDx = 0.40;
inline constexpr double kEyeDy = -0.10;
inline constexpr double kEyeRx = 0.17;
inline constexpr double kEyeRy = 0.08;

inline constexpr double kBrowDy = -0.33;
inline constexpr double kBrowRx = 0.21;
inline constexpr double kBrowRy = 0.05;

inline constexpr double kNoseDy = 0.30;
inline constexpr double kNoseRx = 0.10;
inline constexpr double kNoseRy = 0.20;

inline constexpr double kMouthDy = 0.72;
inline constexpr double kMouthRx = 0.30;
inline constexpr double kMouthRy = 0.13;

// Mouth-corner keypoints sit this fraction of the half-width from the centre.
inline constexpr double kCornerInset = 0.85;

}  // namespace svrnn::layout
