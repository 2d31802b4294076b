#include "canonet/losses.hpp"

#include "fixtures.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <numbers>

using namespace canonet;
using engine::Grid;

namespace {

double meanAbs(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    s += std::abs(a[i] - b[i]);
  }
  return s / static_cast<double>(a.size());
}

Var constantScores(int batch, double value) {
  return Var::constant(Grid({batch, 1}, value));
}

} // namespace

TEST_CASE("reconstruction loss") {
  const Var zeros = Var::constant(Grid({2, 30, 8}, 0.0));
  const Var ones = Var::constant(Grid({2, 30, 8}, 1.0));
  CHECK(recLoss(zeros, zeros).item() == 0.0);
  CHECK(recLoss(zeros, ones).item() == 1.0);

  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  Grid a({1, 30, 8});
  Grid b({1, 30, 8});
  for (size_t i = 0; i < a.size(); ++i) {
    a.data[i] = n(rng);
    b.data[i] = n(rng);
  }
  const double base = recLoss(Var::constant(a), Var::constant(b)).item();
  CHECK(recLoss(engine::scale(Var::constant(a), 3.0), engine::scale(Var::constant(b), 3.0)).item() ==
        doctest::Approx(3.0 * base).epsilon(1e-12));
  CHECK_THROWS_AS(recLoss(zeros, Var::constant(Grid({2, 30, 16}))), Error);
}

TEST_CASE("adversarial losses") {
  const std::vector<Var> half(3, constantScores(4, 0.5));
  const auto l = advLossesFromScores(constantScores(4, 0.5), half);
  CHECK(l.discriminator.item() == doctest::Approx(2.0 * std::numbers::ln2).epsilon(1e-12));
  CHECK(l.generator.item() == doctest::Approx(std::numbers::ln2).epsilon(1e-12));

  const std::vector<Var> fake(3, constantScores(4, 0.0));
  const auto perfect = advLossesFromScores(constantScores(4, 1.0), fake);
  CHECK(perfect.discriminator.item() < 1e-6);
  CHECK(std::isfinite(perfect.generator.item()));
  CHECK(perfect.generator.item() == doctest::Approx(-std::log(kLogEps)).epsilon(1e-12));

  const std::vector<Var> fooled(3, constantScores(4, 1.0));
  const auto worst = advLossesFromScores(constantScores(4, 0.0), fooled);
  CHECK(std::isfinite(worst.discriminator.item()));
  CHECK(worst.discriminator.item() == doctest::Approx(-2.0 * std::log(kLogEps)).epsilon(1e-9));
}

TEST_CASE("view canonicalization terms by hand") {
  const Model model(NetworkSpec::miniature(), 11);
  const auto s = fixture::makeLossSetup(2, 8, 11);
  const Reconstruction rec = model.reconstruct(s.x);
  const Var rotated = fixture::rotatedCopies(rec, s);
  const auto terms = vcLoss(viewCanonInputs(model, rec, rotated, s.rotations));

  // Independent assembly of the three sums from separate forward passes.
  const Var mVc = model.encodeMotion(engine::projectXY(rec.xVc));
  const Var sVc = model.encodeStructure(engine::projectXY(rec.xVc)).first;
  double skeleton = 0.0;
  double motion = meanAbs(rec.codes.m.value().data, mVc.value().data);
  double structure = meanAbs(rec.codes.s.value().data, sVc.value().data);
  for (int k = 0; k < s.rotations; ++k) {
    const Var xr = engine::sliceBatch(rotated, k * s.batch, s.batch);
    const Var mr = model.encodeMotion(xr);
    const auto [sr, srBar] = model.encodeStructure(xr);
    skeleton += meanAbs(rec.xVc.value().data, model.decode(mr, srBar).value().data);
    motion += meanAbs(rec.codes.m.value().data, mr.value().data);
    structure += meanAbs(rec.codes.s.value().data, sr.value().data);
  }
  CHECK(std::abs(terms.skeleton.item() - skeleton) < 1e-9);
  CHECK(std::abs(terms.motion.item() - motion) < 1e-9);
  CHECK(std::abs(terms.structure.item() - structure) < 1e-9);
}

TEST_CASE("identity rotation gives a zero view term when reconstruction is exact") {
  ViewCanonInputs in;
  std::mt19937_64 rng(2);
  Grid g({1, 45, 8});
  for (double& v : g.data) {
    v = std::uniform_real_distribution<double>(-1, 1)(rng);
  }
  in.xVc = Var::constant(g);
  in.xVcRotated = {Var::constant(g)};
  const Var code = Var::constant(Grid({1, 4, 1}, 0.3));
  in.m = in.mVc = code;
  in.s = in.sVc = code;
  in.mRotated = {code};
  in.sRotated = {code};
  const auto t = vcLoss(in);
  CHECK(t.skeleton.item() == 0.0);
  CHECK(t.motion.item() == 0.0);
  CHECK(t.structure.item() == 0.0);
}

TEST_CASE("structure canonicalization terms by hand") {
  const Model model(NetworkSpec::miniature(), 12);
  const auto s = fixture::makeLossSetup(2, 8, 12);
  const Reconstruction rec = model.reconstruct(s.x);
  std::vector<double> cano(model.spec().structureChannels());
  for (size_t i = 0; i < cano.size(); ++i) {
    cano[i] = 0.05 * static_cast<double>(i % 7);
  }
  const Var sCano = tileCode(cano, s.batch);
  const auto terms = scLoss(structureCanonInputs(model, rec, s.scaled, sCano));

  const Var xSc = model.render(rec.codes.m, sCano, rec.codes.v);
  const Var mS = model.encodeMotion(s.scaled);
  const Var vS = model.encodeView(s.scaled);
  const Var xScScaled = model.render(mS, sCano, vS);
  const Var projected = engine::projectXY(xSc);
  const double skeleton = meanAbs(xSc.value().data, xScScaled.value().data);
  const double motion = meanAbs(rec.codes.m.value().data, model.encodeMotion(projected).value().data) +
                        meanAbs(rec.codes.m.value().data, mS.value().data);
  const double view = meanAbs(rec.codes.v.value().data, model.encodeView(projected).value().data) +
                      meanAbs(rec.codes.v.value().data, vS.value().data);
  CHECK(std::abs(terms.skeleton.item() - skeleton) < 1e-9);
  CHECK(std::abs(terms.motion.item() - motion) < 1e-9);
  CHECK(std::abs(terms.view.item() - view) < 1e-9);
}

TEST_CASE("identity scaling zeroes the structure skeleton term") {
  const Model model(NetworkSpec::standard(), 13);
  auto s = fixture::makeLossSetup(2, 64, 13);
  const Reconstruction rec = model.reconstruct(s.x);
  std::vector<Sequence2D> same;
  for (int b = 0; b < s.batch; ++b) {
    same.push_back(limbScale(sequenceAt<2>(s.x, b), LimbScales{}));
  }
  const Var unscaled = toBatch(std::span<const Sequence2D>(same));
  const auto in = structureCanonInputs(model, rec, unscaled, rec.codes.sBar);
  const auto t = scLoss(in);
  CHECK(t.skeleton.item() == 0.0);
  CHECK(engine::meanAbsDiff(in.m, in.mScaled).item() == 0.0);
  CHECK(engine::meanAbsDiff(in.v, in.vScaled).item() == 0.0);
}

TEST_CASE("total loss") {
  const Var one = Var::constant(Grid({1}, 1.0));
  const Var zero = Var::constant(Grid({1}, 0.0));
  LossTerms unit{one, one, one, one, one, one, one, one};
  CHECK(totalLoss(unit, LossWeights{}).item() == 35.0);
  LossTerms none{zero, zero, zero, zero, zero, zero, zero, zero};
  CHECK(totalLoss(none, LossWeights{}).item() == 0.0);

  LossTerms mixed{Var::constant(Grid({1}, 0.1)), Var::constant(Grid({1}, 0.2)), Var::constant(Grid({1}, 0.3)),
                  Var::constant(Grid({1}, 0.4)), Var::constant(Grid({1}, 0.5)), Var::constant(Grid({1}, 0.6)),
                  Var::constant(Grid({1}, 0.7)), Var::constant(Grid({1}, 0.8))};
  const LossReport report = makeReport(mixed, Var::constant(Grid({1}, 1.3)), LossWeights{});
  CHECK(std::abs(report.total - totalLoss(mixed, LossWeights{}).item()) < 1e-12);
  CHECK(std::abs(totalLoss(report, LossWeights{}) - report.total) < 1e-9);
  CHECK(report.advDiscriminator == 1.3);

  // Linear in each term.
  LossWeights w;
  LossTerms doubled = mixed;
  doubled.scView = Var::constant(Grid({1}, 1.6));
  CHECK(totalLoss(doubled, w).item() - totalLoss(mixed, w).item() == doctest::Approx(w.scView * 0.8).epsilon(1e-12));
}

TEST_CASE("loss log line") {
  LossReport r;
  r.rec = 0.1;
  r.total = 2.5;
  const std::string line = r.logLine(7);
  CHECK(line.rfind("7 0.10000000000000001 ", 0) == 0);
  CHECK(LossReport::logHeader() == "step rec adv_d adv_g vc_x vc_m vc_s sc_x sc_m sc_v total");
}

TEST_CASE("every loss term passes the finite-difference oracle on a miniature network") {
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Model model(NetworkSpec::miniature(), seed);
    const auto s = fixture::makeLossSetup(2, 8, 100 + seed);
    std::vector<double> cano(model.spec().structureChannels(), 0.1);
    const Var sCano = tileCode(cano, s.batch);
    const auto params = fixture::allParameters(model);
    for (const auto& [name, loss] : fixture::lossTerms(model, s, sCano)) {
      const auto result = oracle::finiteDifferences(loss, params, 1e-5, 6, seed);
      INFO("seed " << seed << " term " << name << " worst " << result.worstName << " kinks " << result.kinks);
      CHECK(result.worstRelError <= 1e-4);
      CHECK(result.kinks * 2 <= result.checked + result.kinks);
    }
  }
}
