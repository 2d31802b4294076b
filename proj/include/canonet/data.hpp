#pragma once

#include "canonet/geometry.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

namespace canonet {

/// angle(t) = offset + amplitude * sin(2 pi frequency t + phase); frequency in cycles per frame.
struct Sinusoid {
  double offset = 0.0;
  double amplitude = 0.0;
  double frequency = 0.0;
  double phase = 0.0;

  double at(int frame) const;
};

/// Local Euler angles (x, y, z) of every joint's outgoing bones.
using JointAngleSet = std::array<std::array<Sinusoid, 3>, kNumJoints>;

struct SyntheticMotionSpec {
  /// Length of the bone ending at each joint, in units of the rest torso; unused for the hip.
  std::array<double, kNumJoints> boneLengths{};
  JointAngleSet motion{};
  /// One 6D rotation per entry of rotationAnchors(frames).
  std::vector<Vec6> viewAnchors;
  int frames = 64;
};

struct ClipLabels {
  int motion = -1;
  int character = -1;
  int view = -1;
};

struct SyntheticClip {
  Sequence2D x;
  Sequence3D gt3d;
  RotationTrack gtView;
  SyntheticMotionSpec spec;
  ClipLabels labels;
};

struct NormalizationStats {
  std::vector<Vec2> hip;
  double height = 1.0;
};

struct ClipDataset {
  std::vector<Sequence2D> clips;
  /// Parallel to `clips` when the dataset was generated.
  std::vector<SyntheticClip> synthetic;
  std::vector<NormalizationStats> stats;
  double fps = 30.0;

  size_t size() const {
    return clips.size();
  }
};

/// Bone lengths of the rest character.
std::array<double, kNumJoints> restBoneLengths();
/// Rest direction of the bone ending at each joint, in its parent's frame.
const std::array<Vec3, kNumJoints>& restBoneDirections();

/// Hip-centered forward kinematics of the joint-angle stream.
Sequence3D forwardKinematics(const std::array<double, kNumJoints>& boneLengths, const JointAngleSet& motion,
                             int frames);

void validateSpec(const SyntheticMotionSpec& spec);
SyntheticClip generateSyntheticClip(const SyntheticMotionSpec& spec, const ClipLabels& labels = {});

JointAngleSet sampleMotion(std::mt19937_64& rng);
std::array<double, kNumJoints> sampleCharacter(std::mt19937_64& rng);
std::vector<Vec6> constantViewAnchors(int frames, const Mat3& rotation);

/// Cross product of motions x characters x views, motion-major order.
ClipDataset makeBenchmarkSet(int motions, int characters, int views, std::mt19937_64& rng, int frames = 64);

/// Text keypoint file: `#joints n`, `#map <15 source indices>`, `#fps f`, then one line of
/// 3n floats (x, y, confidence) per frame. Confidence below 0.1 marks a missing keypoint.
ClipDataset loadKeypointFile(const std::filesystem::path& path);
void writeKeypointFile(const std::filesystem::path& path, const Sequence2D& seq, double fps = 30.0);

inline constexpr double kMissingConfidence = 0.1;
inline constexpr int kMaxGap = 8;

std::vector<Sequence2D> sliceClips(const Sequence2D& frames, int length = 64, int stride = 32);

std::pair<Sequence2D, NormalizationStats> normalizeClip(const Sequence2D& x);
Sequence2D denormalizeClip(const Sequence2D& x, const NormalizationStats& stats);

} // namespace canonet
