#pragma once

#include "canonet/data.hpp"
#include "canonet/model.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

namespace canonet {

/// Hip-aligned mean squared joint error over 3NT scalars, divided by h(gt)^2.
double mseMetric(const Sequence3D& pred, const Sequence3D& gt);
/// Hip-aligned mean per-joint Euclidean error, divided by h(gt).
double mpjpeMetric(const Sequence3D& pred, const Sequence3D& gt);

/// Camera-frame ground truth of a synthetic clip in the units of its normalized 2D clip.
Sequence3D cameraGroundTruth(const SyntheticClip& clip, double height);

struct KMeansResult {
  std::vector<int> labels;
  Eigen::MatrixXd centers;
  /// Within-cluster sum of squares after each assignment pass.
  std::vector<double> inertia;
};

/// Lloyd iterations from distance-weighted seeding; rows of `points` are samples.
KMeansResult kmeans(const Eigen::MatrixXd& points, int k, int iterations, std::mt19937_64& rng);

/// Counts between two labelings; labels are remapped to 0..R-1 and 0..C-1 in order of first appearance.
struct Contingency {
  Eigen::MatrixXi counts;
  std::vector<int> rowSums;
  std::vector<int> colSums;
  int n = 0;

  static Contingency build(std::span<const int> truth, std::span<const int> pred);
};

struct ClusterScores {
  double ari = 0.0;
  double ami = 0.0;
  double homogeneity = 0.0;
  double completeness = 0.0;
  double vMeasure = 0.0;
};

ClusterScores clusterMetrics(std::span<const int> pred, std::span<const int> truth);

/// Expected mutual information of two labelings with the given marginals under random permutation.
double expectedMutualInformation(std::span<const int> rowSums, std::span<const int> colSums, int n);

struct IndexEntry {
  int64_t id = 0;
  std::vector<double> vector;
};

struct MotionIndex {
  int frames = 0;
  std::vector<IndexEntry> entries;

  size_t vectorLength() const {
    return static_cast<size_t>(kNumJoints) * 3 * frames;
  }
};

/// Dual-canonicalized sequences G(E_m(x), s_cano), flattened.
std::vector<std::vector<double>> dualCanonicalFeatures(const Model& model, std::span<const Sequence2D> clips,
                                                       std::span<const double> sCano);
/// Flattened motion codes E_m(x).
std::vector<std::vector<double>> motionLatentFeatures(const Model& model, std::span<const Sequence2D> clips);

MotionIndex buildIndex(const Model& model, std::span<const Sequence2D> clips, std::span<const double> sCano,
                       std::span<const int64_t> ids = {});

struct RetrievalHit {
  int64_t id = 0;
  double distance = 0.0;
};

/// Exact k nearest entries by Euclidean distance; ties go to the lower id.
std::vector<RetrievalHit> retrieve(std::span<const double> query, const MotionIndex& index, size_t k);
std::vector<RetrievalHit> retrieve(const Model& model, const Sequence2D& query, std::span<const double> sCano,
                                   const MotionIndex& index, size_t k);

inline constexpr uint32_t kIndexVersion = 1;

/// Magic "CNIX", version, count, vector length, T, N, then per entry an i64 id and its doubles.
void writeIndex(const std::filesystem::path& path, const MotionIndex& index);
MotionIndex readIndex(const std::filesystem::path& path);

Eigen::MatrixXd toMatrix(const std::vector<std::vector<double>>& rows);

} // namespace canonet
