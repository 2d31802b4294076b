#pragma once

#include "canonet/engine.hpp"
#include "canonet/geometry.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace canonet {

using engine::Var;

struct ConvLayerSpec {
  int channels = 0;
  int kernel = 0;
  int padding = 0;
  int stride = 1;
  bool maxPool = false;

  bool operator==(const ConvLayerSpec&) const = default;
};

struct EncoderSpec {
  std::array<ConvLayerSpec, 3> layers;
  /// Global temporal max over the last layer's output.
  bool globalMaxPool = false;

  bool operator==(const EncoderSpec&) const = default;
};

struct NetworkSpec {
  EncoderSpec motion;
  EncoderSpec structure;
  EncoderSpec view;
  std::array<int, 3> decoderChannels{};
  int decoderKernel = 7;
  std::array<int, 3> discriminatorChannels{};
  int discriminatorKernel = 8;
  int discriminatorStride = 2;
  int discriminatorPadding = 3;
  double leakySlope = 0.2;

  int motionChannels() const {
    return motion.layers.back().channels;
  }
  int structureChannels() const {
    return structure.layers.back().channels;
  }

  /// Full-size network: C_m = 128, C_s = 256, decoder 384 -> 256/128/45.
  static NetworkSpec standard();
  /// Every hidden width divided by 8; 6D view and 45-channel pose outputs unchanged.
  static NetworkSpec miniature();

  bool operator==(const NetworkSpec&) const = default;
};

/// Batched latent codes; temporal codes are [B, C, M] or [B, 6, T].
struct LatentCodes {
  Var m;
  Var s;
  Var sBar;
  Var v;
};

struct Reconstruction {
  Var xVc;   // [B, 45, T] canonical-view 3D
  Var xRec3; // [B, 45, T] rotated into the input view
  Var xRec;  // [B, 30, T] reprojection
  Var rotations;
  LatentCodes codes;
};

struct ModelParams {
  engine::ParamStore motionEncoder;
  engine::ParamStore structureEncoder;
  engine::ParamStore viewEncoder;
  engine::ParamStore decoder;
  engine::ParamStore discriminator;

  std::array<engine::ParamStore*, 4> generatorStores() {
    return {&motionEncoder, &structureEncoder, &viewEncoder, &decoder};
  }
  std::array<engine::ParamStore*, 5> allStores() {
    return {&motionEncoder, &structureEncoder, &viewEncoder, &decoder, &discriminator};
  }
  std::array<const engine::ParamStore*, 5> allStores() const {
    return {&motionEncoder, &structureEncoder, &viewEncoder, &decoder, &discriminator};
  }
};

class Model {
 public:
  Model(NetworkSpec spec, uint64_t seed);
  Model(NetworkSpec spec, ModelParams params);

  const NetworkSpec& spec() const {
    return spec_;
  }
  ModelParams& params() {
    return params_;
  }
  const ModelParams& params() const {
    return params_;
  }

  Var encodeMotion(const Var& x) const;
  /// Returns (s, sBar).
  std::pair<Var, Var> encodeStructure(const Var& x) const;
  Var encodeView(const Var& x) const;
  LatentCodes encode(const Var& x) const;

  /// sBar [B, C_s] is tiled across the M code frames of m [B, C_m, M].
  Var decode(const Var& m, const Var& sBar) const;
  /// r(G(m, sBar), g(v)).
  Var render(const Var& m, const Var& sBar, const Var& v) const;

  Reconstruction reconstruct(const Var& x) const;
  Var canonicalizeView(const Var& x) const;
  Var canonicalizeStructure(const Var& x, const Var& sCano) const;
  /// Structure- then view-canonicalized: G(E_m(x), s_cano).
  Var canonicalizeBoth(const Var& x, const Var& sCano) const;
  Var retarget(const Var& source, const Var& target) const;
  /// [B, 1] scores in (0, 1).
  Var discriminate(const Var& x) const;

 private:
  NetworkSpec spec_;
  ModelParams params_;
};

/// Tiles a [C] code vector into [batch, C].
Var tileCode(std::span<const double> code, int batch);

template <int Dim>
Var toBatch(std::span<const Sequence<Dim>> clips);

template <int Dim>
Var toBatch(const Sequence<Dim>& clip) {
  return toBatch<Dim>(std::span<const Sequence<Dim>>(&clip, 1));
}

template <int Dim>
Sequence<Dim> sequenceAt(const Var& batch, int index);

} // namespace canonet
