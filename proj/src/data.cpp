#include "canonet/data.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <string>

namespace canonet {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
// Largest per-frame angle change the motion sampler produces.
constexpr double kMaxAngleRate = 0.28;

Mat3 eulerXYZ(double x, double y, double z) {
  return (Eigen::AngleAxisd(x, Vec3::UnitX()) * Eigen::AngleAxisd(y, Vec3::UnitY()) *
          Eigen::AngleAxisd(z, Vec3::UnitZ()))
      .toRotationMatrix();
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Sinusoid sampleSinusoid(std::mt19937_64& rng, double baseFrequency, double offsetLo, double offsetHi, double ampLo,
                        double ampHi) {
  Sinusoid s;
  s.offset = uniform(rng, offsetLo, offsetHi);
  s.frequency = baseFrequency * (uniform(rng, 0.0, 1.0) < 0.7 ? 1.0 : 2.0);
  s.amplitude = std::min(uniform(rng, ampLo, ampHi), kMaxAngleRate / (kTwoPi * s.frequency));
  s.phase = uniform(rng, 0.0, kTwoPi);
  return s;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) {
    return {};
  }
  return s.substr(begin, s.find_last_not_of(" \t\r") - begin + 1);
}

} // namespace

double Sinusoid::at(int frame) const {
  return offset + amplitude * std::sin(kTwoPi * frequency * frame + phase);
}

std::array<double, kNumJoints> restBoneLengths() {
  return {0.0, 1.0, 0.35, 0.4, 0.6, 0.55, 0.4, 0.6, 0.55, 0.25, 0.9, 0.85, 0.25, 0.9, 0.85};
}

const std::array<Vec3, kNumJoints>& restBoneDirections() {
  static const std::array<Vec3, kNumJoints> dirs = {
      Vec3::Zero(),     Vec3::UnitY(),    Vec3::UnitY(),    Vec3::UnitX(),    -Vec3::UnitY(),
      -Vec3::UnitY(),   -Vec3::UnitX(),   -Vec3::UnitY(),   -Vec3::UnitY(),   Vec3::UnitX(),
      -Vec3::UnitY(),   -Vec3::UnitY(),   -Vec3::UnitX(),   -Vec3::UnitY(),   -Vec3::UnitY()};
  return dirs;
}

Sequence3D forwardKinematics(const std::array<double, kNumJoints>& boneLengths, const JointAngleSet& motion,
                             int frames) {
  const auto& topo = topology();
  const auto& dirs = restBoneDirections();
  Sequence3D out(frames);
  std::array<Mat3, kNumJoints> global;
  for (int t = 0; t < frames; ++t) {
    for (int j : topo.traversal) {
      const auto& a = motion[j];
      const Mat3 local = eulerXYZ(a[0].at(t), a[1].at(t), a[2].at(t));
      const int p = topo.parent[j];
      if (p < 0) {
        global[j] = local;
        out.setJoint(j, t, Vec3::Zero());
        continue;
      }
      out.setJoint(j, t, out.joint(p, t) + global[p] * (boneLengths[j] * dirs[j]));
      global[j] = global[p] * local;
    }
  }
  return out;
}

void validateSpec(const SyntheticMotionSpec& spec) {
  if (spec.frames < 1) {
    fail(ErrorCode::InvalidSpec, "clip needs at least one frame");
  }
  for (int j = 1; j < kNumJoints; ++j) {
    const double len = spec.boneLengths[j];
    if (!(len >= 0.25 && len <= 2.5)) {
      fail(ErrorCode::InvalidSpec, "bone length " + std::to_string(len) + " outside [0.25, 2.5]");
    }
  }
  for (const auto& joint : spec.motion) {
    for (const auto& s : joint) {
      if (!std::isfinite(s.offset) || !std::isfinite(s.amplitude) || !std::isfinite(s.frequency) ||
          !std::isfinite(s.phase)) {
        fail(ErrorCode::InvalidSpec, "non-finite motion parameter");
      }
      if (std::abs(s.amplitude) * kTwoPi * std::abs(s.frequency) >= 0.3) {
        fail(ErrorCode::InvalidSpec, "joint angle changes by 0.3 rad or more per frame");
      }
    }
  }
  if (spec.viewAnchors.size() != rotationAnchors(spec.frames).size()) {
    fail(ErrorCode::InvalidSpec, "view anchor count does not match clip length");
  }
}

SyntheticClip generateSyntheticClip(const SyntheticMotionSpec& spec, const ClipLabels& labels) {
  validateSpec(spec);
  SyntheticClip clip;
  clip.spec = spec;
  clip.labels = labels;
  clip.gt3d = forwardKinematics(spec.boneLengths, spec.motion, spec.frames);
  try {
    clip.gtView = interpolateRotationTrack(spec.frames, spec.viewAnchors);
  } catch (const Error& e) {
    fail(ErrorCode::InvalidSpec, std::string("bad view anchors: ") + e.what());
  }
  clip.x = orthographicProject(rotateSequence(clip.gt3d, clip.gtView.matrices));
  return clip;
}

JointAngleSet sampleMotion(std::mt19937_64& rng) {
  JointAngleSet m{};
  const double f0 = uniform(rng, 1.0, 2.5) / 64.0;
  auto s = [&](double oLo, double oHi, double aLo, double aHi) { return sampleSinusoid(rng, f0, oLo, oHi, aLo, aHi); };

  m[kHip] = {s(0, 0, 0, 0.15), s(-0.2, 0.2, 0, 0.3), s(0, 0, 0, 0.15)};
  m[kNeck] = {s(-0.1, 0.1, 0, 0.2), Sinusoid{}, s(-0.1, 0.1, 0, 0.2)};
  m[kLeftShoulder] = {s(-0.4, 0.4, 0.2, 1.2), Sinusoid{}, s(0.1, 1.2, 0, 0.6)};
  m[kRightShoulder] = {s(-0.4, 0.4, 0.2, 1.2), Sinusoid{}, s(-1.2, -0.1, 0, 0.6)};
  m[kLeftElbow] = {s(-1.2, 0, 0, 0.8), Sinusoid{}, Sinusoid{}};
  m[kRightElbow] = {s(-1.2, 0, 0, 0.8), Sinusoid{}, Sinusoid{}};
  m[kLeftHip] = {s(-0.3, 0.1, 0.1, 0.8), Sinusoid{}, s(0, 0.2, 0, 0.2)};
  m[kRightHip] = {s(-0.3, 0.1, 0.1, 0.8), Sinusoid{}, s(-0.2, 0, 0, 0.2)};
  m[kLeftKnee] = {s(0, 0.6, 0, 0.6), Sinusoid{}, Sinusoid{}};
  m[kRightKnee] = {s(0, 0.6, 0, 0.6), Sinusoid{}, Sinusoid{}};
  return m;
}

std::array<double, kNumJoints> sampleCharacter(std::mt19937_64& rng) {
  const auto& topo = topology();
  auto lengths = restBoneLengths();
  const double global = uniform(rng, 0.8, 1.25);
  std::array<double, kNumLimbGroups> limb{};
  for (double& l : limb) {
    l = uniform(rng, 0.75, 1.35);
  }
  for (int j = 1; j < kNumJoints; ++j) {
    const double len = lengths[j] * global * limb[topo.limb[j]] * uniform(rng, 0.9, 1.1);
    lengths[j] = std::clamp(len, 0.25, 2.5);
  }
  return lengths;
}

std::vector<Vec6> constantViewAnchors(int frames, const Mat3& rotation) {
  return std::vector<Vec6>(rotationAnchors(frames).size(), matrixToRot6d(rotation));
}

ClipDataset makeBenchmarkSet(int motions, int characters, int views, std::mt19937_64& rng, int frames) {
  if (motions < 1 || characters < 1 || views < 1) {
    fail(ErrorCode::InvalidSpec, "benchmark counts must all be at least 1");
  }
  std::vector<JointAngleSet> motionSet;
  for (int i = 0; i < motions; ++i) {
    motionSet.push_back(sampleMotion(rng));
  }
  std::vector<std::array<double, kNumJoints>> characterSet;
  for (int i = 0; i < characters; ++i) {
    characterSet.push_back(sampleCharacter(rng));
  }
  // Views spread evenly over the full circle of azimuths, jittered, with mild elevation.
  constexpr double kArc = 2.0 * std::numbers::pi;
  std::vector<Mat3> viewSet;
  for (int i = 0; i < views; ++i) {
    const double azimuth = -kArc / 2.0 + kArc * (i + uniform(rng, 0.0, 1.0)) / views;
    const double elevation = uniform(rng, -std::numbers::pi / 12.0, std::numbers::pi / 12.0);
    viewSet.push_back(viewRotation(azimuth, elevation));
  }

  ClipDataset ds;
  for (int m = 0; m < motions; ++m) {
    for (int c = 0; c < characters; ++c) {
      for (int v = 0; v < views; ++v) {
        SyntheticMotionSpec spec;
        spec.frames = frames;
        spec.boneLengths = characterSet[c];
        spec.motion = motionSet[m];
        spec.viewAnchors = constantViewAnchors(frames, viewSet[v]);
        auto clip = generateSyntheticClip(spec, {m, c, v});
        ds.clips.push_back(clip.x);
        ds.synthetic.push_back(std::move(clip));
      }
    }
  }
  return ds;
}

ClipDataset loadKeypointFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    fail(ErrorCode::Io, "cannot open " + path.string());
  }
  int joints = -1;
  std::vector<int> map;
  double fps = 30.0;
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineNo = 0;
  while (std::getline(in, line)) {
    ++lineNo;
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    std::istringstream ss(line);
    if (line[0] == '#') {
      std::string key;
      ss >> key;
      if (key == "#joints") {
        if (!(ss >> joints) || joints < 1) {
          fail(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineNo) + ": bad #joints");
        }
      } else if (key == "#map") {
        int idx = 0;
        while (ss >> idx) {
          map.push_back(idx);
        }
        if (!ss.eof()) {
          fail(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineNo) + ": bad #map entry");
        }
      } else if (key == "#fps") {
        if (!(ss >> fps) || !(fps > 0.0)) {
          fail(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineNo) + ": bad #fps");
        }
      }
      continue;
    }
    if (joints < 0) {
      fail(ErrorCode::ParseError, path.string() + ": frame data before #joints header");
    }
    std::vector<double> values;
    values.reserve(3 * joints);
    std::string token;
    while (ss >> token) {
      try {
        size_t used = 0;
        values.push_back(std::stod(token, &used));
        if (used != token.size()) {
          throw std::invalid_argument(token);
        }
      } catch (const std::exception&) {
        fail(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineNo) + ": bad number '" + token + "'");
      }
    }
    if (values.size() != static_cast<size_t>(3 * joints)) {
      fail(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineNo) + ": expected " +
                                      std::to_string(3 * joints) + " values, got " + std::to_string(values.size()));
    }
    rows.push_back(std::move(values));
  }
  if (joints < 0) {
    fail(ErrorCode::ParseError, path.string() + ": missing #joints header");
  }
  if (map.empty() && joints == kNumJoints) {
    for (int j = 0; j < kNumJoints; ++j) {
      map.push_back(j);
    }
  }
  if (map.size() != static_cast<size_t>(kNumJoints)) {
    fail(ErrorCode::TopologyError, path.string() + ": #map must list " + std::to_string(kNumJoints) + " indices");
  }
  for (int idx : map) {
    if (idx < 0 || idx >= joints) {
      fail(ErrorCode::TopologyError, path.string() + ": #map index " + std::to_string(idx) + " out of range");
    }
  }
  if (rows.empty()) {
    fail(ErrorCode::ParseError, path.string() + ": no frames");
  }

  const int frames = static_cast<int>(rows.size());
  Sequence2D seq(frames);
  for (int j = 0; j < kNumJoints; ++j) {
    const int src = map[j];
    std::vector<bool> valid(frames);
    for (int t = 0; t < frames; ++t) {
      valid[t] = rows[t][3 * src + 2] >= kMissingConfidence;
      seq.at(j, t, 0) = rows[t][3 * src];
      seq.at(j, t, 1) = rows[t][3 * src + 1];
    }
    int t = 0;
    while (t < frames) {
      if (valid[t]) {
        ++t;
        continue;
      }
      int end = t;
      while (end < frames && !valid[end]) {
        ++end;
      }
      if (end - t > kMaxGap) {
        fail(ErrorCode::GapTooLarge, path.string() + ": joint " + std::string(topology().names[j]) + " missing for " +
                                         std::to_string(end - t) + " consecutive frames");
      }
      const int before = t - 1;
      const int after = end < frames ? end : -1;
      if (before < 0 && after < 0) {
        fail(ErrorCode::GapTooLarge, path.string() + ": joint " + std::string(topology().names[j]) + " never observed");
      }
      for (int u = t; u < end; ++u) {
        for (int a = 0; a < 2; ++a) {
          if (before < 0) {
            seq.at(j, u, a) = seq.at(j, after, a);
          } else if (after < 0) {
            seq.at(j, u, a) = seq.at(j, before, a);
          } else {
            const double w = static_cast<double>(u - before) / (after - before);
            seq.at(j, u, a) = (1.0 - w) * seq.at(j, before, a) + w * seq.at(j, after, a);
          }
        }
      }
      t = end;
    }
  }
  ClipDataset ds;
  ds.fps = fps;
  ds.clips.push_back(std::move(seq));
  return ds;
}

void writeKeypointFile(const std::filesystem::path& path, const Sequence2D& seq, double fps) {
  std::ofstream out(path);
  if (!out) {
    fail(ErrorCode::Io, "cannot write " + path.string());
  }
  out << "#joints " << kNumJoints << "\n#map";
  for (int j = 0; j < kNumJoints; ++j) {
    out << ' ' << j;
  }
  out << "\n#fps " << fps << "\n" << std::setprecision(17);
  for (int t = 0; t < seq.frames(); ++t) {
    for (int j = 0; j < kNumJoints; ++j) {
      out << (j ? " " : "") << seq.at(j, t, 0) << ' ' << seq.at(j, t, 1) << " 1";
    }
    out << '\n';
  }
  if (!out) {
    fail(ErrorCode::Io, "failed writing " + path.string());
  }
}

std::vector<Sequence2D> sliceClips(const Sequence2D& frames, int length, int stride) {
  if (length < 1 || stride < 1) {
    fail(ErrorCode::TooShort, "clip length and stride must be positive");
  }
  if (frames.frames() < length) {
    fail(ErrorCode::TooShort, std::to_string(frames.frames()) + " frames cannot fill a clip of " +
                                  std::to_string(length));
  }
  std::vector<Sequence2D> clips;
  for (int start = 0; start + length <= frames.frames(); start += stride) {
    Sequence2D clip(length);
    for (int j = 0; j < kNumJoints; ++j) {
      for (int t = 0; t < length; ++t) {
        clip.at(j, t, 0) = frames.at(j, start + t, 0);
        clip.at(j, t, 1) = frames.at(j, start + t, 1);
      }
    }
    clips.push_back(std::move(clip));
  }
  return clips;
}

std::pair<Sequence2D, NormalizationStats> normalizeClip(const Sequence2D& x) {
  NormalizationStats stats;
  stats.height = characterHeight(x);
  Sequence2D out = hipAlign(x);
  for (double& v : out.data()) {
    v /= stats.height;
  }
  stats.hip.reserve(x.frames());
  for (int t = 0; t < x.frames(); ++t) {
    stats.hip.push_back(x.joint(kHip, t));
  }
  return {std::move(out), std::move(stats)};
}

Sequence2D denormalizeClip(const Sequence2D& x, const NormalizationStats& stats) {
  if (static_cast<int>(stats.hip.size()) != x.frames()) {
    fail(ErrorCode::FrameCountMismatch, "normalization stats do not match clip length");
  }
  Sequence2D out(x.frames());
  for (int t = 0; t < x.frames(); ++t) {
    for (int j = 0; j < kNumJoints; ++j) {
      out.setJoint(j, t, x.joint(j, t) * stats.height + stats.hip[t]);
    }
  }
  return out;
}

} // namespace canonet
