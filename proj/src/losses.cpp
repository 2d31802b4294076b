#include "canonet/losses.hpp"

#include <cstdio>

namespace canonet {

using engine::add;
using engine::meanAbsDiff;
using engine::scale;

namespace {

Var sumOf(std::span<const Var> terms) {
  Var total = terms[0];
  for (size_t i = 1; i < terms.size(); ++i) {
    total = add(total, terms[i]);
  }
  return total;
}

} // namespace

std::string LossReport::logHeader() {
  return "step rec adv_d adv_g vc_x vc_m vc_s sc_x sc_m sc_v total";
}

std::string LossReport::logLine(long step) const {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%ld %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g", step, rec,
                advDiscriminator, advGenerator, vcSkeleton, vcMotion, vcStructure, scSkeleton, scMotion, scView,
                total);
  return buf;
}

Var recLoss(const Var& x, const Var& xRec) {
  return meanAbsDiff(x, xRec);
}

Var discriminatorLoss(const Var& realScores, std::span<const Var> fakeScores) {
  if (fakeScores.empty()) {
    fail(ErrorCode::ShapeMismatch, "adversarial loss needs at least one reprojected batch");
  }
  std::vector<Var> fake;
  for (const auto& f : fakeScores) {
    fake.push_back(engine::mean(engine::logClamped(engine::affine(f, -1.0, 1.0), kLogEps)));
  }
  const Var real = engine::mean(engine::logClamped(realScores, kLogEps));
  return engine::sub(scale(real, -1.0), scale(sumOf(fake), 1.0 / static_cast<double>(fakeScores.size())));
}

Var generatorAdvLoss(std::span<const Var> fakeScores) {
  if (fakeScores.empty()) {
    fail(ErrorCode::ShapeMismatch, "adversarial loss needs at least one reprojected batch");
  }
  std::vector<Var> fake;
  for (const auto& f : fakeScores) {
    fake.push_back(engine::mean(engine::logClamped(f, kLogEps)));
  }
  return scale(sumOf(fake), -1.0 / static_cast<double>(fakeScores.size()));
}

AdversarialLosses advLossesFromScores(const Var& realScores, std::span<const Var> fakeScores) {
  return {discriminatorLoss(realScores, fakeScores), generatorAdvLoss(fakeScores)};
}

AdversarialLosses advLosses(const Model& model, const Var& real, std::span<const Var> reprojected) {
  std::vector<Var> fakeScores;
  for (const auto& r : reprojected) {
    fakeScores.push_back(model.discriminate(r));
  }
  return advLossesFromScores(model.discriminate(real), fakeScores);
}

ViewCanonInputs viewCanonInputs(const Model& model, const Reconstruction& rec, const Var& rotated, int count) {
  ViewCanonInputs in;
  in.xVc = rec.xVc;
  in.m = rec.codes.m;
  in.s = rec.codes.s;

  const Var projected = engine::projectXY(rec.xVc);
  in.mVc = model.encodeMotion(projected);
  in.sVc = model.encodeStructure(projected).first;

  const int batch = rec.xVc.dim(0);
  if (count < 1 || rotated.dim(0) != count * batch) {
    fail(ErrorCode::ShapeMismatch, "rotated batch " + engine::shapeString(rotated.shape()) + " does not hold " +
                                       std::to_string(count) + " copies of " + std::to_string(batch) + " clips");
  }
  const Var mr = model.encodeMotion(rotated);
  const auto [sr, srBar] = model.encodeStructure(rotated);
  const Var canon = model.decode(mr, srBar);
  for (int k = 0; k < count; ++k) {
    in.xVcRotated.push_back(engine::sliceBatch(canon, k * batch, batch));
    in.mRotated.push_back(engine::sliceBatch(mr, k * batch, batch));
    in.sRotated.push_back(engine::sliceBatch(sr, k * batch, batch));
  }
  return in;
}

ViewCanonTerms vcLoss(const ViewCanonInputs& in) {
  std::vector<Var> skeleton;
  std::vector<Var> motion{meanAbsDiff(in.m, in.mVc)};
  std::vector<Var> structure{meanAbsDiff(in.s, in.sVc)};
  for (size_t k = 0; k < in.xVcRotated.size(); ++k) {
    skeleton.push_back(meanAbsDiff(in.xVc, in.xVcRotated[k]));
    motion.push_back(meanAbsDiff(in.m, in.mRotated[k]));
    structure.push_back(meanAbsDiff(in.s, in.sRotated[k]));
  }
  if (skeleton.empty()) {
    fail(ErrorCode::ShapeMismatch, "view canonicalization needs at least one rotated version");
  }
  return {sumOf(skeleton), sumOf(motion), sumOf(structure)};
}

StructureCanonInputs structureCanonInputs(const Model& model, const Reconstruction& rec, const Var& scaled,
                                          const Var& sCano) {
  StructureCanonInputs in;
  in.m = rec.codes.m;
  in.v = rec.codes.v;
  in.mScaled = model.encodeMotion(scaled);
  in.vScaled = model.encodeView(scaled);
  in.xSc = model.render(in.m, sCano, in.v);
  in.xScScaled = model.render(in.mScaled, sCano, in.vScaled);
  const Var projected = engine::projectXY(in.xSc);
  in.mSc = model.encodeMotion(projected);
  in.vSc = model.encodeView(projected);
  return in;
}

StructureCanonTerms scLoss(const StructureCanonInputs& in) {
  StructureCanonTerms out;
  out.skeleton = meanAbsDiff(in.xSc, in.xScScaled);
  out.motion = add(meanAbsDiff(in.m, in.mSc), meanAbsDiff(in.m, in.mScaled));
  out.view = add(meanAbsDiff(in.v, in.vSc), meanAbsDiff(in.v, in.vScaled));
  return out;
}

Var totalLoss(const LossTerms& t, const LossWeights& w) {
  const std::vector<Var> parts{scale(t.rec, w.rec),
                               scale(t.advGenerator, w.adv),
                               scale(t.vcSkeleton, w.vcSkeleton),
                               scale(t.vcMotion, w.vcMotion),
                               scale(t.vcStructure, w.vcStructure),
                               scale(t.scSkeleton, w.scSkeleton),
                               scale(t.scMotion, w.scMotion),
                               scale(t.scView, w.scView)};
  return sumOf(parts);
}

double totalLoss(const LossReport& r, const LossWeights& w) {
  return w.rec * r.rec + w.adv * r.advGenerator + w.vcSkeleton * r.vcSkeleton + w.vcMotion * r.vcMotion +
         w.vcStructure * r.vcStructure + w.scSkeleton * r.scSkeleton + w.scMotion * r.scMotion + w.scView * r.scView;
}

LossReport makeReport(const LossTerms& t, const Var& advDiscriminator, const LossWeights& weights) {
  LossReport r;
  r.rec = t.rec.item();
  r.advDiscriminator = advDiscriminator ? advDiscriminator.item() : 0.0;
  r.advGenerator = t.advGenerator.item();
  r.vcSkeleton = t.vcSkeleton.item();
  r.vcMotion = t.vcMotion.item();
  r.vcStructure = t.vcStructure.item();
  r.scSkeleton = t.scSkeleton.item();
  r.scMotion = t.scMotion.item();
  r.scView = t.scView.item();
  r.total = totalLoss(r, weights);
  return r;
}

} // namespace canonet
