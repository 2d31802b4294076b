#pragma once

#include "canonet/model.hpp"

#include <span>
#include <string>
#include <vector>

namespace canonet {

struct LossWeights {
  double rec = 15.0;
  double adv = 2.0;
  double vcSkeleton = 5.0;
  double vcMotion = 2.0;
  double vcStructure = 2.0;
  double scSkeleton = 5.0;
  double scMotion = 2.0;
  double scView = 2.0;
};

/// Unweighted generator-side terms of one step.
struct LossTerms {
  Var rec;
  Var advGenerator;
  Var vcSkeleton;
  Var vcMotion;
  Var vcStructure;
  Var scSkeleton;
  Var scMotion;
  Var scView;
};

/// Scalar values of every term plus the weighted total.
struct LossReport {
  double rec = 0.0;
  double advDiscriminator = 0.0;
  double advGenerator = 0.0;
  double vcSkeleton = 0.0;
  double vcMotion = 0.0;
  double vcStructure = 0.0;
  double scSkeleton = 0.0;
  double scMotion = 0.0;
  double scView = 0.0;
  double total = 0.0;

  /// `step rec adv_d adv_g vc_x vc_m vc_s sc_x sc_m sc_v total`, values in %.17g.
  std::string logLine(long step) const;
  static std::string logHeader();
};

inline constexpr double kLogEps = 1e-7;

/// Mean absolute difference between a clip batch and its reprojection.
Var recLoss(const Var& x, const Var& xRec);

struct AdversarialLosses {
  Var discriminator;
  Var generator;
};

/// Discriminator and non-saturating generator losses from sigmoid scores; fake
/// terms are averaged over the K reprojected batches.
AdversarialLosses advLossesFromScores(const Var& realScores, std::span<const Var> fakeScores);
Var discriminatorLoss(const Var& realScores, std::span<const Var> fakeScores);
Var generatorAdvLoss(std::span<const Var> fakeScores);
AdversarialLosses advLosses(const Model& model, const Var& real, std::span<const Var> reprojected);

struct ViewCanonInputs {
  Var xVc;
  std::vector<Var> xVcRotated;
  Var m;
  Var s;
  Var mVc;
  Var sVc;
  std::vector<Var> mRotated;
  std::vector<Var> sRotated;
};

struct ViewCanonTerms {
  Var skeleton;
  Var motion;
  Var structure;
};

/// Re-encodes everything the view terms compare. `rotated` stacks the K reprojected
/// batches along the batch axis, k-major.
ViewCanonInputs viewCanonInputs(const Model& model, const Reconstruction& rec, const Var& rotated, int count);
ViewCanonTerms vcLoss(const ViewCanonInputs& in);

struct StructureCanonInputs {
  Var xSc;
  Var xScScaled;
  Var m;
  Var mSc;
  Var mScaled;
  Var v;
  Var vSc;
  Var vScaled;
};

struct StructureCanonTerms {
  Var skeleton;
  Var motion;
  Var view;
};

/// `sCano` is [B, C_s]; `scaled` is the limb-scaled input batch.
StructureCanonInputs structureCanonInputs(const Model& model, const Reconstruction& rec, const Var& scaled,
                                          const Var& sCano);
StructureCanonTerms scLoss(const StructureCanonInputs& in);

Var totalLoss(const LossTerms& terms, const LossWeights& weights);
double totalLoss(const LossReport& report, const LossWeights& weights);

LossReport makeReport(const LossTerms& terms, const Var& advDiscriminator, const LossWeights& weights);

} // namespace canonet
