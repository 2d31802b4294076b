#include "canonet/geometry.hpp"

#include <algorithm>
#include <numbers>

namespace canonet {

namespace {

constexpr double kDegenerateEps = 1e-8;

JointTopology makeTopology() {
  JointTopology topo{};
  topo.names = {
      "hip",
      "neck",
      "head",
      "left_shoulder",
      "left_elbow",
      "left_wrist",
      "right_shoulder",
      "right_elbow",
      "right_wrist",
      "left_hip",
      "left_knee",
      "left_ankle",
      "right_hip",
      "right_knee",
      "right_ankle"};
  topo.parent = {-1, kHip, kNeck, kNeck, kLeftShoulder, kLeftElbow, kNeck, kRightShoulder, kRightElbow,
                 kHip, kLeftHip, kLeftKnee, kHip, kRightHip, kRightKnee};
  topo.limb = {-1,       kTorso,   kTorso,   kLeftArm, kLeftArm, kLeftArm, kRightArm, kRightArm,
               kRightArm, kLeftLeg, kLeftLeg, kLeftLeg, kRightLeg, kRightLeg, kRightLeg};
  for (int j = 0; j < kNumJoints; ++j) {
    topo.traversal[j] = j;
  }
  return topo;
}

template <int Dim>
double boneLength(const Sequence<Dim>& seq, int a, int b, int t) {
  return (seq.joint(a, t) - seq.joint(b, t)).norm();
}

} // namespace

const JointTopology& topology() {
  static const JointTopology topo = makeTopology();
  return topo;
}

Mat3 rot6dToMatrix(const Vec6& raw) {
  const Vec3 a1 = raw.head<3>();
  const Vec3 a2 = raw.tail<3>();
  const double n1 = a1.norm();
  if (!raw.allFinite() || n1 < kDegenerateEps) {
    fail(ErrorCode::DegenerateRotation, "first 6D column has vanishing norm");
  }
  const Vec3 b1 = a1 / n1;
  const Vec3 u2 = a2 - b1.dot(a2) * b1;
  const double n2 = u2.norm();
  if (n2 < kDegenerateEps) {
    fail(ErrorCode::DegenerateRotation, "6D columns are parallel");
  }
  const Vec3 b2 = u2 / n2;
  Mat3 r;
  r.col(0) = b1;
  r.col(1) = b2;
  r.col(2) = b1.cross(b2);
  return r;
}

std::vector<Mat3> rot6dToMatrices(std::span<const Vec6> raw6d) {
  std::vector<Mat3> out;
  out.reserve(raw6d.size());
  for (const auto& v : raw6d) {
    out.push_back(rot6dToMatrix(v));
  }
  return out;
}

RotationTrack makeRotationTrack(std::vector<Vec6> raw6d) {
  RotationTrack track;
  track.matrices = rot6dToMatrices(raw6d);
  track.raw6d = std::move(raw6d);
  return track;
}

Vec6 matrixToRot6d(const Mat3& rotation) {
  Vec6 v;
  v << rotation.col(0), rotation.col(1);
  return v;
}

double geodesicAngle(const Mat3& a, const Mat3& b) {
  const double c = ((a.transpose() * b).trace() - 1.0) / 2.0;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

Sequence3D rotateSequence(const Sequence3D& seq, std::span<const Mat3> rotations) {
  if (static_cast<int>(rotations.size()) != seq.frames()) {
    fail(ErrorCode::FrameCountMismatch, "rotation count " + std::to_string(rotations.size()) +
                                             " != frame count " + std::to_string(seq.frames()));
  }
  Sequence3D out(seq.frames());
  for (int t = 0; t < seq.frames(); ++t) {
    for (int j = 0; j < kNumJoints; ++j) {
      out.setJoint(j, t, rotations[t] * seq.joint(j, t));
    }
  }
  return out;
}

Sequence2D orthographicProject(const Sequence3D& seq) {
  Sequence2D out(seq.frames());
  for (int j = 0; j < kNumJoints; ++j) {
    for (int t = 0; t < seq.frames(); ++t) {
      out.at(j, t, 0) = seq.at(j, t, 0);
      out.at(j, t, 1) = seq.at(j, t, 1);
    }
  }
  return out;
}

Sequence3D embed3d(const Sequence2D& seq, double depth) {
  Sequence3D out(seq.frames());
  for (int j = 0; j < kNumJoints; ++j) {
    for (int t = 0; t < seq.frames(); ++t) {
      out.at(j, t, 0) = seq.at(j, t, 0);
      out.at(j, t, 1) = seq.at(j, t, 1);
      out.at(j, t, 2) = depth;
    }
  }
  return out;
}

template <int Dim>
Sequence<Dim> limbScale(const Sequence<Dim>& seq, const LimbScales& scales) {
  if (!(scales.global > 0.0) || !std::isfinite(scales.global)) {
    fail(ErrorCode::InvalidScale, "global scale must be positive");
  }
  for (double s : scales.local) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      fail(ErrorCode::InvalidScale, "local scale must be positive");
    }
  }
  const auto& topo = topology();
  Sequence<Dim> out(seq.frames());
  for (int t = 0; t < seq.frames(); ++t) {
    out.setJoint(kHip, t, seq.joint(kHip, t));
    for (int j : topo.traversal) {
      const int p = topo.parent[j];
      if (p < 0) {
        continue;
      }
      const double factor = scales.global * scales.local[topo.limb[j]];
      // Written as a correction of the old position so that unit factors are exact.
      const typename Sequence<Dim>::Point bone = seq.joint(j, t) - seq.joint(p, t);
      out.setJoint(j, t, seq.joint(j, t) + (out.joint(p, t) - seq.joint(p, t)) + (factor - 1.0) * bone);
    }
  }
  return out;
}

template <int Dim>
double characterHeight(const Sequence<Dim>& seq) {
  if (seq.frames() == 0) {
    fail(ErrorCode::DegenerateSkeleton, "empty sequence has no height");
  }
  double total = 0.0;
  for (int t = 0; t < seq.frames(); ++t) {
    const double legLeft = boneLength(seq, kLeftHip, kLeftKnee, t) + boneLength(seq, kLeftKnee, kLeftAnkle, t);
    const double legRight =
        boneLength(seq, kRightHip, kRightKnee, t) + boneLength(seq, kRightKnee, kRightAnkle, t);
    total += boneLength(seq, kHead, kNeck, t) + boneLength(seq, kNeck, kHip, t) + 0.5 * (legLeft + legRight);
  }
  const double h = total / seq.frames();
  if (!(h > 1e-6)) {
    fail(ErrorCode::DegenerateSkeleton, "character height " + std::to_string(h) + " is degenerate");
  }
  return h;
}

template <int Dim>
Sequence<Dim> hipAlign(const Sequence<Dim>& seq) {
  Sequence<Dim> out(seq.frames());
  for (int t = 0; t < seq.frames(); ++t) {
    const auto hip = seq.joint(kHip, t);
    for (int j = 0; j < kNumJoints; ++j) {
      out.setJoint(j, t, seq.joint(j, t) - hip);
    }
    out.setJoint(kHip, t, Sequence<Dim>::Point::Zero());
  }
  return out;
}

template Sequence2D limbScale(const Sequence2D&, const LimbScales&);
template Sequence3D limbScale(const Sequence3D&, const LimbScales&);
template double characterHeight(const Sequence2D&);
template double characterHeight(const Sequence3D&);
template Sequence2D hipAlign(const Sequence2D&);
template Sequence3D hipAlign(const Sequence3D&);

std::vector<int> rotationAnchors(int frames) {
  std::vector<int> anchors;
  for (int t = 0; t < frames; t += 16) {
    anchors.push_back(t);
  }
  if (anchors.back() != frames - 1) {
    anchors.push_back(frames - 1);
  }
  return anchors;
}

RotationTrack interpolateRotationTrack(int frames, std::span<const Vec6> anchorValues) {
  const auto anchors = rotationAnchors(frames);
  if (anchorValues.size() != anchors.size()) {
    fail(ErrorCode::ShapeMismatch, "expected " + std::to_string(anchors.size()) + " anchor rotations");
  }
  std::vector<Vec6> raw(frames);
  for (size_t i = 0; i + 1 < anchors.size(); ++i) {
    const int t0 = anchors[i];
    const int t1 = anchors[i + 1];
    for (int t = t0; t <= t1; ++t) {
      const double w = static_cast<double>(t - t0) / (t1 - t0);
      raw[t] = anchorValues[i] + w * (anchorValues[i + 1] - anchorValues[i]);
    }
  }
  if (anchors.size() == 1) {
    raw[0] = anchorValues[0];
  }
  return makeRotationTrack(std::move(raw));
}

Mat3 viewRotation(double azimuth, double elevation) {
  return (Eigen::AngleAxisd(elevation, Vec3::UnitX()) * Eigen::AngleAxisd(azimuth, Vec3::UnitY())).toRotationMatrix();
}

std::vector<RotationTrack> randomSmoothRotations(int frames, int count, std::mt19937_64& rng) {
  constexpr double kPi = std::numbers::pi;
  constexpr double kMaxElevation = kPi / 6.0;
  // Per-16-frame step bounds of the anchor random walks. A wrapped (azimuth) or
  // reflected (elevation) symmetric walk started from the uniform law keeps a
  // uniform marginal at every anchor.
  constexpr double kAzimuthStep = kPi / 12.0;
  constexpr double kElevationStep = kPi / 24.0;

  const auto anchors = rotationAnchors(frames);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::vector<RotationTrack> tracks;
  tracks.reserve(count);
  for (int k = 0; k < count; ++k) {
    double azimuth = kPi * unit(rng);
    double elevation = kMaxElevation * unit(rng);
    std::vector<Vec6> values;
    values.reserve(anchors.size());
    values.push_back(matrixToRot6d(viewRotation(azimuth, elevation)));
    for (size_t i = 1; i < anchors.size(); ++i) {
      const double gap = (anchors[i] - anchors[i - 1]) / 16.0;
      azimuth += kAzimuthStep * gap * unit(rng);
      elevation += kElevationStep * gap * unit(rng);
      if (elevation > kMaxElevation) {
        elevation = 2.0 * kMaxElevation - elevation;
      } else if (elevation < -kMaxElevation) {
        elevation = -2.0 * kMaxElevation - elevation;
      }
      values.push_back(matrixToRot6d(viewRotation(azimuth, elevation)));
    }
    tracks.push_back(interpolateRotationTrack(frames, values));
  }
  return tracks;
}

} // namespace canonet
