#include "canonet/model.hpp"

#include <string>

namespace canonet {

using engine::Grid;
using engine::ParamStore;

namespace {

constexpr int kInputChannels = 2 * kNumJoints;
constexpr int kPoseChannels = 3 * kNumJoints;

void addConv(ParamStore& store, const std::string& name, int cin, int cout, int kernel, std::mt19937_64& rng) {
  store.add(name + ".weight", engine::uniformInit({cout, cin, kernel}, cin * kernel, rng));
  store.add(name + ".bias", Grid({cout}));
}

void initEncoder(ParamStore& store, const std::string& prefix, const EncoderSpec& spec, std::mt19937_64& rng) {
  int cin = kInputChannels;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    addConv(store, prefix + ".conv" + std::to_string(i), cin, spec.layers[i].channels, spec.layers[i].kernel, rng);
    cin = spec.layers[i].channels;
  }
}

Var runEncoder(const ParamStore& store, const std::string& prefix, const EncoderSpec& spec, double slope, Var h) {
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& layer = spec.layers[i];
    const std::string name = prefix + ".conv" + std::to_string(i);
    h = engine::conv1d(h, store.get(name + ".weight"), store.get(name + ".bias"), layer.stride, layer.padding);
    if (i + 1 < spec.layers.size()) {
      h = engine::leakyRelu(h, slope);
    }
    if (layer.maxPool) {
      h = engine::maxPoolTime(h, 2);
    }
  }
  return h;
}

void requireClipBatch(const Var& x, const char* op) {
  if (x.shape().size() != 3 || x.dim(1) != kInputChannels) {
    fail(ErrorCode::ShapeMismatch, std::string(op) + ": expected [B, 30, T], got " + engine::shapeString(x.shape()));
  }
  const int frames = x.dim(2);
  if (frames < 8 || frames % 8 != 0) {
    fail(ErrorCode::BadLength, std::string(op) + ": clip length " + std::to_string(frames) +
                                   " is not a positive multiple of 8");
  }
}

} // namespace

NetworkSpec NetworkSpec::standard() {
  NetworkSpec spec;
  spec.motion.layers = {{{64, 8, 3, 2, false}, {128, 8, 3, 2, false}, {128, 8, 3, 2, false}}};
  spec.structure.layers = {{{64, 7, 3, 1, true}, {128, 7, 3, 1, true}, {256, 7, 3, 1, true}}};
  spec.structure.globalMaxPool = true;
  spec.view.layers = {{{64, 7, 3, 1, false}, {32, 7, 3, 1, false}, {6, 7, 3, 1, false}}};
  spec.decoderChannels = {256, 128, kPoseChannels};
  spec.decoderKernel = 7;
  spec.discriminatorChannels = {64, 128, 256};
  return spec;
}

NetworkSpec NetworkSpec::miniature() {
  NetworkSpec spec = standard();
  for (auto* enc : {&spec.motion, &spec.structure}) {
    for (auto& layer : enc->layers) {
      layer.channels /= 8;
    }
  }
  spec.view.layers[0].channels /= 8;
  spec.view.layers[1].channels /= 8;
  spec.decoderChannels[0] /= 8;
  spec.decoderChannels[1] /= 8;
  for (int& c : spec.discriminatorChannels) {
    c /= 8;
  }
  return spec;
}

Model::Model(NetworkSpec spec, uint64_t seed) : spec_(std::move(spec)) {
  std::mt19937_64 rng(seed);
  initEncoder(params_.motionEncoder, "motion", spec_.motion, rng);
  initEncoder(params_.structureEncoder, "structure", spec_.structure, rng);
  initEncoder(params_.viewEncoder, "view", spec_.view, rng);
  // The view head starts at the canonical (identity) 6D vector.
  {
    auto& bias = params_.viewEncoder.entries().back().param.mutableValue().data;
    bias = {1.0, 0.0, 0.0, 0.0, 1.0, 0.0};
  }

  int cin = spec_.motionChannels() + spec_.structureChannels();
  for (size_t i = 0; i < spec_.decoderChannels.size(); ++i) {
    addConv(params_.decoder, "decoder.conv" + std::to_string(i), cin, spec_.decoderChannels[i], spec_.decoderKernel,
            rng);
    cin = spec_.decoderChannels[i];
  }

  cin = kInputChannels;
  for (size_t i = 0; i < spec_.discriminatorChannels.size(); ++i) {
    addConv(params_.discriminator, "disc.conv" + std::to_string(i), cin, spec_.discriminatorChannels[i],
            spec_.discriminatorKernel, rng);
    cin = spec_.discriminatorChannels[i];
  }
  params_.discriminator.add("disc.head.weight", engine::uniformInit({1, cin}, cin, rng));
  params_.discriminator.add("disc.head.bias", Grid({1}));
}

Model::Model(NetworkSpec spec, ModelParams params) : spec_(std::move(spec)), params_(std::move(params)) {}

Var Model::encodeMotion(const Var& x) const {
  requireClipBatch(x, "encodeMotion");
  return runEncoder(params_.motionEncoder, "motion", spec_.motion, spec_.leakySlope, x);
}

std::pair<Var, Var> Model::encodeStructure(const Var& x) const {
  requireClipBatch(x, "encodeStructure");
  Var s = runEncoder(params_.structureEncoder, "structure", spec_.structure, spec_.leakySlope, x);
  Var sBar = engine::globalMaxTime(s);
  return {s, sBar};
}

Var Model::encodeView(const Var& x) const {
  requireClipBatch(x, "encodeView");
  return runEncoder(params_.viewEncoder, "view", spec_.view, spec_.leakySlope, x);
}

LatentCodes Model::encode(const Var& x) const {
  LatentCodes codes;
  codes.m = encodeMotion(x);
  std::tie(codes.s, codes.sBar) = encodeStructure(x);
  codes.v = encodeView(x);
  return codes;
}

Var Model::decode(const Var& m, const Var& sBar) const {
  if (m.shape().size() != 3 || m.dim(1) != spec_.motionChannels() || sBar.shape().size() != 2 ||
      sBar.dim(0) != m.dim(0) || sBar.dim(1) != spec_.structureChannels()) {
    fail(ErrorCode::ShapeMismatch,
         "decode: m " + engine::shapeString(m.shape()) + ", sBar " + engine::shapeString(sBar.shape()));
  }
  Var h = engine::concatChannels(m, engine::broadcastTime(sBar, m.dim(2)));
  const int padding = spec_.decoderKernel / 2;
  for (size_t i = 0; i < spec_.decoderChannels.size(); ++i) {
    const std::string name = "decoder.conv" + std::to_string(i);
    h = engine::upsampleTime(h, 2);
    h = engine::conv1d(h, params_.decoder.get(name + ".weight"), params_.decoder.get(name + ".bias"), 1, padding);
    if (i + 1 < spec_.decoderChannels.size()) {
      h = engine::leakyRelu(h, spec_.leakySlope);
    }
  }
  return engine::centerJoint(h, kHip, 3);
}

Var Model::render(const Var& m, const Var& sBar, const Var& v) const {
  return engine::rotatePoints(decode(m, sBar), engine::rot6dToMatrix(v));
}

Reconstruction Model::reconstruct(const Var& x) const {
  Reconstruction rec;
  rec.codes = encode(x);
  rec.xVc = decode(rec.codes.m, rec.codes.sBar);
  rec.rotations = engine::rot6dToMatrix(rec.codes.v);
  rec.xRec3 = engine::rotatePoints(rec.xVc, rec.rotations);
  rec.xRec = engine::projectXY(rec.xRec3);
  return rec;
}

Var Model::canonicalizeView(const Var& x) const {
  Var m = encodeMotion(x);
  return decode(m, encodeStructure(x).second);
}

Var Model::canonicalizeStructure(const Var& x, const Var& sCano) const {
  return render(encodeMotion(x), sCano, encodeView(x));
}

Var Model::canonicalizeBoth(const Var& x, const Var& sCano) const {
  return decode(encodeMotion(x), sCano);
}

Var Model::retarget(const Var& source, const Var& target) const {
  return render(encodeMotion(source), encodeStructure(target).second, encodeView(source));
}

Var Model::discriminate(const Var& x) const {
  requireClipBatch(x, "discriminate");
  Var h = x;
  const auto& store = params_.discriminator;
  for (size_t i = 0; i < spec_.discriminatorChannels.size(); ++i) {
    const std::string name = "disc.conv" + std::to_string(i);
    h = engine::conv1d(h, store.get(name + ".weight"), store.get(name + ".bias"), spec_.discriminatorStride,
                       spec_.discriminatorPadding);
    h = engine::leakyRelu(h, spec_.leakySlope);
  }
  h = engine::globalMeanTime(h);
  return engine::sigmoid(engine::linear(h, store.get("disc.head.weight"), store.get("disc.head.bias")));
}

Var tileCode(std::span<const double> code, int batch) {
  Grid g({batch, static_cast<int>(code.size())});
  for (int n = 0; n < batch; ++n) {
    std::copy(code.begin(), code.end(), g.data.begin() + static_cast<std::ptrdiff_t>(n * code.size()));
  }
  return Var::constant(std::move(g));
}

template <int Dim>
Var toBatch(std::span<const Sequence<Dim>> clips) {
  if (clips.empty()) {
    fail(ErrorCode::EmptyBatch, "no clips to batch");
  }
  const int frames = clips[0].frames();
  Grid g({static_cast<int>(clips.size()), Sequence<Dim>::kChannels, frames});
  size_t offset = 0;
  for (const auto& c : clips) {
    if (c.frames() != frames) {
      fail(ErrorCode::FrameCountMismatch, "clips in a batch must share their length");
    }
    std::copy(c.data().begin(), c.data().end(), g.data.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += c.data().size();
  }
  return Var::constant(std::move(g));
}

template <int Dim>
Sequence<Dim> sequenceAt(const Var& batch, int index) {
  if (batch.shape().size() != 3 || batch.dim(1) != Sequence<Dim>::kChannels || index < 0 || index >= batch.dim(0)) {
    fail(ErrorCode::ShapeMismatch, "sequenceAt: bad batch " + engine::shapeString(batch.shape()));
  }
  const int frames = batch.dim(2);
  const size_t block = static_cast<size_t>(Sequence<Dim>::kChannels) * frames;
  const auto begin = batch.value().data.begin() + static_cast<std::ptrdiff_t>(block * index);
  return Sequence<Dim>(frames, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(block)));
}

template Var toBatch<2>(std::span<const Sequence2D>);
template Var toBatch<3>(std::span<const Sequence3D>);
template Sequence2D sequenceAt<2>(const Var&, int);
template Sequence3D sequenceAt<3>(const Var&, int);

} // namespace canonet
