#include "canonet/evaluation.hpp"

#include "canonet/io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace canonet {

namespace {

void requireSameFrames(const Sequence3D& pred, const Sequence3D& gt) {
  if (pred.frames() != gt.frames() || pred.frames() == 0) {
    fail(ErrorCode::ShapeMismatch, "prediction has " + std::to_string(pred.frames()) + " frames, ground truth " +
                                       std::to_string(gt.frames()));
  }
}

double entropy(std::span<const int> sums, int n) {
  double h = 0.0;
  for (int s : sums) {
    if (s > 0) {
      const double p = static_cast<double>(s) / n;
      h -= p * std::log(p);
    }
  }
  return h;
}

double comb2(double v) {
  return v * (v - 1.0) / 2.0;
}

} // namespace

Sequence3D cameraGroundTruth(const SyntheticClip& clip, double height) {
  Sequence3D gt = rotateSequence(clip.gt3d, clip.gtView.matrices);
  for (double& v : gt.data()) {
    v /= height;
  }
  return gt;
}

double mseMetric(const Sequence3D& pred, const Sequence3D& gt) {
  requireSameFrames(pred, gt);
  const Sequence3D p = hipAlign(pred);
  const Sequence3D g = hipAlign(gt);
  const double h = characterHeight(g);
  double total = 0.0;
  for (int t = 0; t < g.frames(); ++t) {
    for (int j = 0; j < kNumJoints; ++j) {
      total += (g.joint(j, t) - p.joint(j, t)).squaredNorm();
    }
  }
  return total / (3.0 * kNumJoints * g.frames()) / (h * h);
}

double mpjpeMetric(const Sequence3D& pred, const Sequence3D& gt) {
  requireSameFrames(pred, gt);
  const Sequence3D p = hipAlign(pred);
  const Sequence3D g = hipAlign(gt);
  const double h = characterHeight(g);
  double total = 0.0;
  for (int t = 0; t < g.frames(); ++t) {
    for (int j = 0; j < kNumJoints; ++j) {
      total += (g.joint(j, t) - p.joint(j, t)).norm();
    }
  }
  return total / (static_cast<double>(kNumJoints) * g.frames()) / h;
}

KMeansResult kmeans(const Eigen::MatrixXd& points, int k, int iterations, std::mt19937_64& rng) {
  const int n = static_cast<int>(points.rows());
  if (k < 1 || k > n) {
    fail(ErrorCode::TooFewPoints, std::to_string(n) + " points cannot form " + std::to_string(k) + " clusters");
  }
  KMeansResult result;
  result.centers.resize(k, points.cols());

  // Distance-weighted seeding.
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  int first = std::uniform_int_distribution<int>(0, n - 1)(rng);
  result.centers.row(0) = points.row(first);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], (points.row(i) - result.centers.row(c - 1)).squaredNorm());
      total += nearest[i];
    }
    int pick = 0;
    if (total > 0.0) {
      double target = std::uniform_real_distribution<double>(0.0, total)(rng);
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        target -= nearest[i];
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<int>(std::distance(nearest.begin(), std::max_element(nearest.begin(), nearest.end())));
    }
    result.centers.row(c) = points.row(pick);
  }

  result.labels.assign(n, -1);
  std::vector<double> dist(n);
  for (int iter = 0; iter < iterations; ++iter) {
    bool changed = false;
    double inertia = 0.0;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double bestD = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (points.row(i) - result.centers.row(c)).squaredNorm();
        if (d < bestD) {
          bestD = d;
          best = c;
        }
      }
      changed |= result.labels[i] != best;
      result.labels[i] = best;
      dist[i] = bestD;
      inertia += bestD;
    }
    result.inertia.push_back(inertia);
    if (!changed && iter > 0) {
      break;
    }

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, points.cols());
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      sums.row(result.labels[i]) += points.row(i);
      ++counts[result.labels[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        result.centers.row(c) = sums.row(c) / counts[c];
        continue;
      }
      // Empty cluster: move it onto the point farthest from its own center.
      const int far = static_cast<int>(std::distance(dist.begin(), std::max_element(dist.begin(), dist.end())));
      result.centers.row(c) = points.row(far);
      dist[far] = 0.0;
    }
  }
  return result;
}

Contingency Contingency::build(std::span<const int> truth, std::span<const int> pred) {
  if (truth.size() != pred.size()) {
    fail(ErrorCode::LengthMismatch, "labelings have different lengths");
  }
  if (truth.empty()) {
    fail(ErrorCode::Empty, "labelings are empty");
  }
  auto remap = [](std::span<const int> labels) {
    std::map<int, int> ids;
    std::vector<int> out;
    out.reserve(labels.size());
    for (int l : labels) {
      out.push_back(ids.try_emplace(l, static_cast<int>(ids.size())).first->second);
    }
    return std::make_pair(out, static_cast<int>(ids.size()));
  };
  const auto [rows, nRows] = remap(truth);
  const auto [cols, nCols] = remap(pred);
  Contingency c;
  c.n = static_cast<int>(truth.size());
  c.counts = Eigen::MatrixXi::Zero(nRows, nCols);
  for (size_t i = 0; i < rows.size(); ++i) {
    ++c.counts(rows[i], cols[i]);
  }
  c.rowSums.resize(nRows);
  c.colSums.resize(nCols);
  for (int r = 0; r < nRows; ++r) {
    c.rowSums[r] = c.counts.row(r).sum();
  }
  for (int col = 0; col < nCols; ++col) {
    c.colSums[col] = c.counts.col(col).sum();
  }
  return c;
}

double expectedMutualInformation(std::span<const int> rowSums, std::span<const int> colSums, int n) {
  const double lgN = std::lgamma(n + 1.0);
  double emi = 0.0;
  for (int a : rowSums) {
    for (int b : colSums) {
      const int lo = std::max(1, a + b - n);
      const int hi = std::min(a, b);
      const double base = std::lgamma(a + 1.0) + std::lgamma(b + 1.0) + std::lgamma(n - a + 1.0) +
                          std::lgamma(n - b + 1.0) - lgN;
      for (int nij = lo; nij <= hi; ++nij) {
        const double logProb = base - std::lgamma(nij + 1.0) - std::lgamma(a - nij + 1.0) -
                               std::lgamma(b - nij + 1.0) - std::lgamma(n - a - b + nij + 1.0);
        const double term = static_cast<double>(nij) / n *
                            std::log(static_cast<double>(n) * nij / (static_cast<double>(a) * b));
        emi += term * std::exp(logProb);
      }
    }
  }
  return emi;
}

ClusterScores clusterMetrics(std::span<const int> pred, std::span<const int> truth) {
  const Contingency c = Contingency::build(truth, pred);
  const int n = c.n;
  ClusterScores s;

  // Adjusted Rand index.
  double sumCells = 0.0;
  for (int r = 0; r < c.counts.rows(); ++r) {
    for (int col = 0; col < c.counts.cols(); ++col) {
      sumCells += comb2(c.counts(r, col));
    }
  }
  double sumRows = 0.0;
  double sumCols = 0.0;
  for (int a : c.rowSums) {
    sumRows += comb2(a);
  }
  for (int b : c.colSums) {
    sumCols += comb2(b);
  }
  const double expected = n > 1 ? sumRows * sumCols / comb2(n) : 0.0;
  const double maxIndex = 0.5 * (sumRows + sumCols);
  s.ari = maxIndex == expected ? 1.0 : (sumCells - expected) / (maxIndex - expected);

  // Information-theoretic scores, in nats.
  const double hTruth = entropy(c.rowSums, n);
  const double hPred = entropy(c.colSums, n);
  double mi = 0.0;
  for (int r = 0; r < c.counts.rows(); ++r) {
    for (int col = 0; col < c.counts.cols(); ++col) {
      const int nij = c.counts(r, col);
      if (nij > 0) {
        mi += static_cast<double>(nij) / n *
              std::log(static_cast<double>(n) * nij / (static_cast<double>(c.rowSums[r]) * c.colSums[col]));
      }
    }
  }
  mi = std::max(mi, 0.0);
  const double hTruthGivenPred = hTruth - mi;
  const double hPredGivenTruth = hPred - mi;
  s.homogeneity = hTruth == 0.0 ? 1.0 : 1.0 - hTruthGivenPred / hTruth;
  s.completeness = hPred == 0.0 ? 1.0 : 1.0 - hPredGivenTruth / hPred;
  s.vMeasure = s.homogeneity + s.completeness == 0.0
                   ? 0.0
                   : 2.0 * s.homogeneity * s.completeness / (s.homogeneity + s.completeness);

  const double emi = expectedMutualInformation(c.rowSums, c.colSums, n);
  const double denom = std::max(hTruth, hPred) - emi;
  if (c.rowSums.size() == c.colSums.size() && (c.rowSums.size() == 1 || c.rowSums.size() == static_cast<size_t>(n))) {
    s.ami = 1.0;
  } else if (std::abs(denom) < 1e-15) {
    s.ami = 1.0;
  } else {
    s.ami = (mi - emi) / denom;
  }
  return s;
}

// One clip per forward pass, so a clip's features never depend on what it is batched with.
std::vector<std::vector<double>> dualCanonicalFeatures(const Model& model, std::span<const Sequence2D> clips,
                                                       std::span<const double> sCano) {
  std::vector<std::vector<double>> out;
  out.reserve(clips.size());
  const Var code = tileCode(sCano, 1);
  for (const auto& clip : clips) {
    out.push_back(model.canonicalizeBoth(toBatch(clip), code).value().data);
  }
  return out;
}

std::vector<std::vector<double>> motionLatentFeatures(const Model& model, std::span<const Sequence2D> clips) {
  std::vector<std::vector<double>> out;
  out.reserve(clips.size());
  for (const auto& clip : clips) {
    out.push_back(model.encodeMotion(toBatch(clip)).value().data);
  }
  return out;
}

MotionIndex buildIndex(const Model& model, std::span<const Sequence2D> clips, std::span<const double> sCano,
                       std::span<const int64_t> ids) {
  if (clips.empty()) {
    fail(ErrorCode::EmptyIndex, "no clips to index");
  }
  if (!ids.empty() && ids.size() != clips.size()) {
    fail(ErrorCode::LengthMismatch, "id count does not match clip count");
  }
  MotionIndex index;
  index.frames = clips[0].frames();
  for (const auto& c : clips) {
    if (c.frames() != index.frames) {
      fail(ErrorCode::LengthMismatch, "indexed clips must share their length");
    }
  }
  auto features = dualCanonicalFeatures(model, clips, sCano);
  for (size_t i = 0; i < features.size(); ++i) {
    index.entries.push_back({ids.empty() ? static_cast<int64_t>(i) : ids[i], std::move(features[i])});
  }
  return index;
}

std::vector<RetrievalHit> retrieve(std::span<const double> query, const MotionIndex& index, size_t k) {
  if (index.entries.empty()) {
    fail(ErrorCode::EmptyIndex, "index is empty");
  }
  if (query.size() != index.vectorLength()) {
    fail(ErrorCode::LengthMismatch, "query length " + std::to_string(query.size()) + " != index vector length " +
                                        std::to_string(index.vectorLength()));
  }
  std::vector<RetrievalHit> hits;
  hits.reserve(index.entries.size());
  for (const auto& e : index.entries) {
    double d2 = 0.0;
    for (size_t i = 0; i < query.size(); ++i) {
      const double d = query[i] - e.vector[i];
      d2 += d * d;
    }
    hits.push_back({e.id, std::sqrt(d2)});
  }
  const auto order = [](const RetrievalHit& a, const RetrievalHit& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.id < b.id;
  };
  k = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), order);
  hits.resize(k);
  return hits;
}

std::vector<RetrievalHit> retrieve(const Model& model, const Sequence2D& query, std::span<const double> sCano,
                                   const MotionIndex& index, size_t k) {
  if (query.frames() != index.frames) {
    fail(ErrorCode::LengthMismatch, "query has " + std::to_string(query.frames()) + " frames, index " +
                                        std::to_string(index.frames));
  }
  const auto features = dualCanonicalFeatures(model, std::span<const Sequence2D>(&query, 1), sCano);
  return retrieve(features[0], index, k);
}

void writeIndex(const std::filesystem::path& path, const MotionIndex& index) {
  io::BinaryWriter w(path);
  w.bytes("CNIX", 4);
  w.u32(kIndexVersion);
  w.i64(static_cast<int64_t>(index.entries.size()));
  w.i64(static_cast<int64_t>(index.vectorLength()));
  w.u32(static_cast<uint32_t>(index.frames));
  w.u32(kNumJoints);
  for (const auto& e : index.entries) {
    w.i64(e.id);
    w.f64s(e.vector);
  }
  w.close();
}

MotionIndex readIndex(const std::filesystem::path& path) {
  io::BinaryReader r(path, ErrorCode::ParseError);
  r.expectMagic("CNIX", kIndexVersion);
  const int64_t count = r.i64();
  const int64_t length = r.i64();
  MotionIndex index;
  index.frames = static_cast<int>(r.u32());
  const uint32_t joints = r.u32();
  if (joints != kNumJoints || count < 0 || length != static_cast<int64_t>(index.vectorLength())) {
    fail(ErrorCode::ParseError, path.string() + ": inconsistent index header");
  }
  for (int64_t i = 0; i < count; ++i) {
    IndexEntry e;
    e.id = r.i64();
    e.vector.resize(static_cast<size_t>(length));
    r.f64s(e.vector);
    index.entries.push_back(std::move(e));
  }
  if (!r.atEnd()) {
    fail(ErrorCode::ParseError, path.string() + ": trailing bytes");
  }
  return index;
}

Eigen::MatrixXd toMatrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) {
    return {};
  }
  Eigen::MatrixXd m(rows.size(), rows[0].size());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size()) {
      fail(ErrorCode::LengthMismatch, "feature rows differ in length");
    }
    m.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(rows[i].data(), rows[i].size());
  }
  return m;
}

} // namespace canonet
