#pragma once

#include "canonet/data.hpp"
#include "canonet/losses.hpp"
#include "canonet/model.hpp"

#include <random>
#include <string>
#include <vector>

namespace fixture {

using namespace canonet;

inline std::vector<Sequence2D> syntheticClips(int count, int frames, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Sequence2D> clips;
  for (int i = 0; i < count; ++i) {
    SyntheticMotionSpec spec;
    spec.frames = frames;
    spec.boneLengths = sampleCharacter(rng);
    spec.motion = sampleMotion(rng);
    spec.viewAnchors = constantViewAnchors(frames, viewRotation(std::uniform_real_distribution<double>(-2, 2)(rng), 0.1));
    clips.push_back(normalizeClip(generateSyntheticClip(spec).x).first);
  }
  return clips;
}

// Every input of one generator step frozen, so losses are plain functions of the parameters.
struct LossSetup {
  Var x;
  Var scaled;
  Var omega;
  Var sCano;
  int batch = 0;
  int rotations = 3;
};

inline LossSetup makeLossSetup(int batch, int frames, uint64_t seed) {
  LossSetup s;
  s.batch = batch;
  std::mt19937_64 rng(seed);
  const auto clips = syntheticClips(batch, frames, seed);
  s.x = toBatch(std::span<const Sequence2D>(clips));
  std::vector<Sequence2D> scaled;
  std::uniform_real_distribution<double> u(0.5, 2.0);
  for (const auto& c : clips) {
    LimbScales f{u(rng), {u(rng), u(rng), u(rng), u(rng), u(rng)}};
    scaled.push_back(limbScale(c, f));
  }
  s.scaled = toBatch(std::span<const Sequence2D>(scaled));
  engine::Grid omega({s.rotations * batch, 9, frames});
  for (int i = 0; i < s.rotations * batch; ++i) {
    const auto track = randomSmoothRotations(frames, 1, rng).front();
    for (int t = 0; t < frames; ++t) {
      for (int r = 0; r < 9; ++r) {
        omega.data[(static_cast<size_t>(i) * 9 + r) * frames + t] = track.matrices[t](r / 3, r % 3);
      }
    }
  }
  s.omega = Var::constant(omega);
  return s;
}

inline Var rotatedCopies(const Reconstruction& rec, const LossSetup& s) {
  const std::vector<Var> copies(s.rotations, rec.xRec3);
  return engine::projectXY(engine::rotatePoints(engine::concatBatch(copies), s.omega));
}

inline std::vector<Var> splitScores(const Var& scores, const LossSetup& s) {
  std::vector<Var> parts;
  for (int k = 0; k < s.rotations; ++k) {
    parts.push_back(engine::sliceBatch(scores, k * s.batch, s.batch));
  }
  return parts;
}

/// Named scalar losses of one step as functions of the model parameters.
inline std::vector<std::pair<std::string, std::function<Var()>>> lossTerms(const Model& model, const LossSetup& s,
                                                                          const Var& sCano) {
  auto rec = [&model, &s] { return model.reconstruct(s.x); };
  auto vc = [&model, &s, rec] {
    const Reconstruction r = rec();
    return vcLoss(viewCanonInputs(model, r, rotatedCopies(r, s), s.rotations));
  };
  auto sc = [&model, &s, rec, sCano] {
    return scLoss(structureCanonInputs(model, rec(), s.scaled, sCano));
  };
  return {
      {"rec", [&s, rec] { return recLoss(s.x, rec().xRec); }},
      {"adv_d",
       [&model, &s, rec] {
         const Reconstruction r = rec();
         return discriminatorLoss(model.discriminate(s.x), splitScores(model.discriminate(rotatedCopies(r, s)), s));
       }},
      {"adv_g",
       [&model, &s, rec] {
         return generatorAdvLoss(splitScores(model.discriminate(rotatedCopies(rec(), s)), s));
       }},
      {"vc_x", [vc] { return vc().skeleton; }},
      {"vc_m", [vc] { return vc().motion; }},
      {"vc_s", [vc] { return vc().structure; }},
      {"sc_x", [sc] { return sc().skeleton; }},
      {"sc_m", [sc] { return sc().motion; }},
      {"sc_v", [sc] { return sc().view; }},
  };
}

inline std::vector<std::pair<std::string, Var>> allParameters(Model& model) {
  std::vector<std::pair<std::string, Var>> out;
  for (auto* store : model.params().allStores()) {
    for (auto& e : store->entries()) {
      out.emplace_back(e.name, e.param);
    }
  }
  return out;
}

} // namespace fixture
