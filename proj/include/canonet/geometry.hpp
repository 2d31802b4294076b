#pragma once

// Skeleton topology, rotation algebra and sequence primitives.
//
// Sequences are stored channel-major: the coordinate `axis` of joint `j` at
// frame `t` lives at index (j * Dim + axis) * frames + t. A single clip is
// therefore already laid out as the (Dim * N) x T input of a temporal
// convolution.

#include "canonet/errors.hpp"

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace canonet {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

inline constexpr int kNumJoints = 15;
inline constexpr int kNumLimbGroups = 5;

enum Joint : int {
  kHip = 0,
  kNeck,
  kHead,
  kLeftShoulder,
  kLeftElbow,
  kLeftWrist,
  kRightShoulder,
  kRightElbow,
  kRightWrist,
  kLeftHip,
  kLeftKnee,
  kLeftAnkle,
  kRightHip,
  kRightKnee,
  kRightAnkle,
};

enum LimbGroup : int {
  kLeftArm = 0,
  kRightArm,
  kLeftLeg,
  kRightLeg,
  kTorso,
};

/// Fixed 15-joint tree rooted at the hip.
struct JointTopology {
  std::array<std::string_view, kNumJoints> names;
  /// -1 for the root.
  std::array<int, kNumJoints> parent;
  /// Limb group of each non-root joint (the bone ending at that joint); -1 for the root.
  std::array<int, kNumJoints> limb;
  /// Parents always precede their children in this order.
  std::array<int, kNumJoints> traversal;
};

const JointTopology& topology();

template <int Dim>
class Sequence {
 public:
  static constexpr int kDim = Dim;
  static constexpr int kChannels = Dim * kNumJoints;
  using Point = Eigen::Matrix<double, Dim, 1>;

  Sequence() = default;
  explicit Sequence(int frames) : frames_(frames), coords_(static_cast<size_t>(kChannels) * frames, 0.0) {}
  Sequence(int frames, std::vector<double> coords) : frames_(frames), coords_(std::move(coords)) {
    if (frames < 0 || coords_.size() != static_cast<size_t>(kChannels) * frames) {
      fail(ErrorCode::ShapeMismatch, "sequence storage does not match frame count");
    }
  }

  int frames() const noexcept {
    return frames_;
  }

  double& at(int joint, int frame, int axis) {
    return coords_[static_cast<size_t>(joint * Dim + axis) * frames_ + frame];
  }
  double at(int joint, int frame, int axis) const {
    return coords_[static_cast<size_t>(joint * Dim + axis) * frames_ + frame];
  }

  Point joint(int j, int t) const {
    Point p;
    for (int a = 0; a < Dim; ++a) {
      p[a] = at(j, t, a);
    }
    return p;
  }
  void setJoint(int j, int t, const Point& p) {
    for (int a = 0; a < Dim; ++a) {
      at(j, t, a) = p[a];
    }
  }

  std::span<const double> data() const noexcept {
    return coords_;
  }
  std::span<double> data() noexcept {
    return coords_;
  }

  bool isFinite() const {
    for (double v : coords_) {
      if (!std::isfinite(v)) {
        return false;
      }
    }
    return true;
  }

  bool operator==(const Sequence&) const = default;

 private:
  int frames_ = 0;
  std::vector<double> coords_;
};

using Sequence2D = Sequence<2>;
using Sequence3D = Sequence<3>;

/// Per-frame 6D rotation vectors plus their matrix realization.
struct RotationTrack {
  std::vector<Vec6> raw6d;
  std::vector<Mat3> matrices;

  int frames() const {
    return static_cast<int>(raw6d.size());
  }
};

/// Gram-Schmidt map from a 6D vector (a1, a2) to a rotation with columns (b1, b2, b1 x b2).
Mat3 rot6dToMatrix(const Vec6& raw);
std::vector<Mat3> rot6dToMatrices(std::span<const Vec6> raw6d);
RotationTrack makeRotationTrack(std::vector<Vec6> raw6d);

/// Inverse of rot6dToMatrix on SO(3): the first two columns.
Vec6 matrixToRot6d(const Mat3& rotation);

/// Geodesic angle between two rotations, in radians.
double geodesicAngle(const Mat3& a, const Mat3& b);

/// Rotation about the origin; expects a hip-centered sequence.
Sequence3D rotateSequence(const Sequence3D& seq, std::span<const Mat3> rotations);
Sequence2D orthographicProject(const Sequence3D& seq);
/// Re-embeds a 2D sequence at the given constant depth.
Sequence3D embed3d(const Sequence2D& seq, double depth = 0.0);

struct LimbScales {
  double global = 1.0;
  std::array<double, kNumLimbGroups> local{1.0, 1.0, 1.0, 1.0, 1.0};
};

template <int Dim>
Sequence<Dim> limbScale(const Sequence<Dim>& seq, const LimbScales& scales);

template <int Dim>
double characterHeight(const Sequence<Dim>& seq);

template <int Dim>
Sequence<Dim> hipAlign(const Sequence<Dim>& seq);

/// Anchor frames used by the smooth rotation tracks: every 16 frames plus the last frame.
std::vector<int> rotationAnchors(int frames);

/// Linear interpolation of per-anchor 6D vectors, followed by Gram-Schmidt.
RotationTrack interpolateRotationTrack(int frames, std::span<const Vec6> anchorValues);

/// Rotation with yaw (about +y) then elevation (about +x); no roll.
Mat3 viewRotation(double azimuth, double elevation);

std::vector<RotationTrack> randomSmoothRotations(int frames, int count, std::mt19937_64& rng);

} // namespace canonet
