#pragma once
// Independent reference implementations used by the tests.

#include "canonet/engine.hpp"
#include "canonet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using canonet::engine::Grid;
using canonet::engine::Var;

struct GradCheck {
  double worstRelError = 0.0;
  // Same measure with the roundoff allowance left out.
  double worstRawRelError = 0.0;
  std::string worstName;
  size_t checked = 0;
  size_t kinks = 0;
};

// Relative error of the analytic gradient against central differences, measured
// as |a - n| / max(|a|, |n|) over the probed entries of each tensor. Probes whose
// one-sided slopes disagree straddle a non-differentiable point and are only counted.
// Differences below the roundoff of the difference quotient itself are not errors.
inline GradCheck finiteDifferences(const std::function<Var()>& loss,
                                   const std::vector<std::pair<std::string, Var>>& leaves, double h,
                                   size_t maxProbes, uint64_t seed) {
  for (auto [name, leaf] : leaves) {
    leaf.zeroGrad();
  }
  const Var base = loss();
  const double f0 = base.item();
  canonet::engine::backpropagate(base);
  std::mt19937_64 rng(seed);
  GradCheck out;
  const double noise = 64.0 * std::numeric_limits<double>::epsilon() * std::max(std::abs(f0), 1.0) / h;
  for (auto [name, leaf] : leaves) {
    std::vector<double> analytic(leaf.size(), 0.0);
    if (leaf.hasGrad()) {
      std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    }
    std::vector<size_t> probes(leaf.size());
    for (size_t i = 0; i < probes.size(); ++i) {
      probes[i] = i;
    }
    if (probes.size() > maxProbes) {
      std::shuffle(probes.begin(), probes.end(), rng);
      probes.resize(maxProbes);
    }
    double diffSq = 0.0;
    double rawSq = 0.0;
    double aSq = 0.0;
    double nSq = 0.0;
    for (size_t i : probes) {
      double& v = leaf.mutableValue().data[i];
      const double saved = v;
      v = saved + h;
      const double up = loss().item();
      v = saved - h;
      const double down = loss().item();
      v = saved;
      const double forward = (up - f0) / h;
      const double backward = (f0 - down) / h;
      if (std::abs(forward - backward) > 1e-4 * std::max(std::abs(forward), std::abs(backward)) + 4.0 * noise) {
        ++out.kinks;
        continue;
      }
      const double numeric = (up - down) / (2.0 * h);
      ++out.checked;
      const double excess = std::max(std::abs(numeric - analytic[i]) - noise, 0.0);
      diffSq += excess * excess;
      rawSq += (numeric - analytic[i]) * (numeric - analytic[i]);
      aSq += analytic[i] * analytic[i];
      nSq += numeric * numeric;
    }
    const double scale = std::sqrt(std::max(aSq, nSq));
    const double rel = scale < 1e-12 ? 0.0 : std::sqrt(diffSq) / scale;
    out.worstRawRelError = std::max(out.worstRawRelError, scale < 1e-12 ? 0.0 : std::sqrt(rawSq) / scale);
    if (rel >= out.worstRelError) {
      out.worstRelError = rel;
      out.worstName = name;
    }
    leaf.zeroGrad();
  }
  return out;
}

inline Grid randomGrid(canonet::engine::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Grid g(std::move(shape));
  for (double& v : g.data) {
    v = u(rng);
  }
  return g;
}

inline Var param(canonet::engine::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return Var::parameter(randomGrid(std::move(shape), rng, lo, hi));
}

// sum(op(inputs) * W) for a fixed random W, so every output element carries its own weight.
inline double checkOp(const std::vector<Var>& inputs, const std::function<Var(const std::vector<Var>&)>& op,
                      uint64_t seed, GradCheck* detail = nullptr) {
  std::mt19937_64 rng(seed);
  const Grid weights = randomGrid(op(inputs).shape(), rng);
  auto loss = [&] { return canonet::engine::sum(canonet::engine::mul(op(inputs), Var::constant(weights))); };
  std::vector<std::pair<std::string, Var>> leaves;
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].requiresGrad()) {
      leaves.emplace_back("input" + std::to_string(i), inputs[i]);
    }
  }
  const GradCheck result = finiteDifferences(loss, leaves, 1e-6, 400, seed);
  if (detail) {
    *detail = result;
  }
  return result.worstRelError;
}

// Height normalized metrics written out loop by loop.
inline double straightMse(const canonet::Sequence3D& pred, const canonet::Sequence3D& gt) {
  const int n = canonet::kNumJoints;
  const int frames = gt.frames();
  double height = 0.0;
  for (int t = 0; t < frames; ++t) {
    auto len = [&](int a, int b) {
      double s = 0.0;
      for (int ax = 0; ax < 3; ++ax) {
        const double d = gt.at(a, t, ax) - gt.at(b, t, ax);
        s += d * d;
      }
      return std::sqrt(s);
    };
    const double legL = len(canonet::kLeftHip, canonet::kLeftKnee) + len(canonet::kLeftKnee, canonet::kLeftAnkle);
    const double legR =
        len(canonet::kRightHip, canonet::kRightKnee) + len(canonet::kRightKnee, canonet::kRightAnkle);
    height += len(canonet::kHead, canonet::kNeck) + len(canonet::kNeck, canonet::kHip) + 0.5 * (legL + legR);
  }
  height /= frames;
  double total = 0.0;
  for (int t = 0; t < frames; ++t) {
    for (int j = 0; j < n; ++j) {
      for (int ax = 0; ax < 3; ++ax) {
        const double p = pred.at(j, t, ax) - pred.at(0, t, ax);
        const double g = gt.at(j, t, ax) - gt.at(0, t, ax);
        total += (g - p) * (g - p);
      }
    }
  }
  return total / (3.0 * n * frames) / (height * height);
}

inline double straightMpjpe(const canonet::Sequence3D& pred, const canonet::Sequence3D& gt) {
  const int n = canonet::kNumJoints;
  const int frames = gt.frames();
  double height = 0.0;
  for (int t = 0; t < frames; ++t) {
    auto len = [&](int a, int b) {
      double s = 0.0;
      for (int ax = 0; ax < 3; ++ax) {
        const double d = gt.at(a, t, ax) - gt.at(b, t, ax);
        s += d * d;
      }
      return std::sqrt(s);
    };
    const double legL = len(canonet::kLeftHip, canonet::kLeftKnee) + len(canonet::kLeftKnee, canonet::kLeftAnkle);
    const double legR =
        len(canonet::kRightHip, canonet::kRightKnee) + len(canonet::kRightKnee, canonet::kRightAnkle);
    height += len(canonet::kHead, canonet::kNeck) + len(canonet::kNeck, canonet::kHip) + 0.5 * (legL + legR);
  }
  height /= frames;
  double total = 0.0;
  for (int t = 0; t < frames; ++t) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int ax = 0; ax < 3; ++ax) {
        const double p = pred.at(j, t, ax) - pred.at(0, t, ax);
        const double g = gt.at(j, t, ax) - gt.at(0, t, ax);
        s += (g - p) * (g - p);
      }
      total += std::sqrt(s);
    }
  }
  return total / (static_cast<double>(n) * frames) / height;
}

struct BruteScores {
  double ari, ami, homogeneity, completeness, vMeasure;
};

inline double lfact(int n) {
  return std::lgamma(n + 1.0);
}

// Textbook formulas over an explicit contingency table, with pair counting for ARI
// and direct hypergeometric summation for the expected mutual information.
inline BruteScores bruteClusterScores(const std::vector<int>& pred, const std::vector<int>& truth) {
  const int n = static_cast<int>(pred.size());
  std::map<std::pair<int, int>, int> table;
  std::map<int, int> a;
  std::map<int, int> b;
  for (int i = 0; i < n; ++i) {
    ++table[{truth[i], pred[i]}];
    ++a[truth[i]];
    ++b[pred[i]];
  }

  long agreeSame = 0;
  long sameTruth = 0;
  long samePred = 0;
  long pairs = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const bool st = truth[i] == truth[j];
      const bool sp = pred[i] == pred[j];
      agreeSame += st && sp;
      sameTruth += st;
      samePred += sp;
      ++pairs;
    }
  }
  BruteScores s{};
  const double expected = pairs > 0 ? static_cast<double>(sameTruth) * samePred / pairs : 0.0;
  const double maxIndex = 0.5 * (sameTruth + samePred);
  s.ari = maxIndex == expected ? 1.0 : (agreeSame - expected) / (maxIndex - expected);

  double hT = 0.0;
  double hP = 0.0;
  for (auto [k, c] : a) {
    hT -= static_cast<double>(c) / n * std::log(static_cast<double>(c) / n);
  }
  for (auto [k, c] : b) {
    hP -= static_cast<double>(c) / n * std::log(static_cast<double>(c) / n);
  }
  double hTgivenP = 0.0;
  double hPgivenT = 0.0;
  double mi = 0.0;
  for (auto [key, c] : table) {
    const double pij = static_cast<double>(c) / n;
    hTgivenP -= pij * std::log(static_cast<double>(c) / b[key.second]);
    hPgivenT -= pij * std::log(static_cast<double>(c) / a[key.first]);
    mi += pij * std::log(pij / (static_cast<double>(a[key.first]) / n * b[key.second] / n));
  }
  s.homogeneity = hT == 0.0 ? 1.0 : 1.0 - hTgivenP / hT;
  s.completeness = hP == 0.0 ? 1.0 : 1.0 - hPgivenT / hP;
  s.vMeasure = s.homogeneity + s.completeness == 0.0
                   ? 0.0
                   : 2.0 * s.homogeneity * s.completeness / (s.homogeneity + s.completeness);

  double emi = 0.0;
  for (auto [ka, ai] : a) {
    for (auto [kb, bj] : b) {
      for (int nij = std::max(1, ai + bj - n); nij <= std::min(ai, bj); ++nij) {
        const double p = std::exp(lfact(ai) + lfact(bj) + lfact(n - ai) + lfact(n - bj) - lfact(n) - lfact(nij) -
                                  lfact(ai - nij) - lfact(bj - nij) - lfact(n - ai - bj + nij));
        emi += p * static_cast<double>(nij) / n * std::log(static_cast<double>(n) * nij / (ai * bj));
      }
    }
  }
  const bool trivial = a.size() == b.size() && (a.size() == 1 || a.size() == static_cast<size_t>(n));
  const double denom = std::max(hT, hP) - emi;
  s.ami = trivial || std::abs(denom) < 1e-15 ? 1.0 : (mi - emi) / denom;
  return s;
}

// Expected mutual information by averaging over every permutation of one labeling.
inline double permutationEmi(std::vector<int> pred, const std::vector<int>& truth) {
  const int n = static_cast<int>(pred.size());
  std::sort(pred.begin(), pred.end());
  double total = 0.0;
  long count = 0;
  do {
    std::map<std::pair<int, int>, int> table;
    std::map<int, int> a;
    std::map<int, int> b;
    for (int i = 0; i < n; ++i) {
      ++table[{truth[i], pred[i]}];
      ++a[truth[i]];
      ++b[pred[i]];
    }
    double mi = 0.0;
    for (auto [key, c] : table) {
      mi += static_cast<double>(c) / n *
            std::log(static_cast<double>(n) * c / (static_cast<double>(a[key.first]) * b[key.second]));
    }
    total += mi;
    ++count;
  } while (std::next_permutation(pred.begin(), pred.end()));
  return total / count;
}

} // namespace oracle
