#include "canonet/training.hpp"

#include "canonet/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace canonet {

using engine::Grid;

namespace {

struct ConfigField {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

template <typename T>
T parseNumber(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    fail(ErrorCode::ParseError, "config key '" + key + "': cannot parse '" + text + "'");
  }
  return value;
}

bool parseBool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") {
    return true;
  }
  if (text == "false" || text == "0") {
    return false;
  }
  fail(ErrorCode::ParseError, "config key '" + key + "': expected true/false, got '" + text + "'");
}

std::string formatDouble(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

template <typename T>
ConfigField numberField(T TrainConfig::*member) {
  return {[member](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return formatDouble(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          },
          [member](TrainConfig& c, const std::string& v) { c.*member = parseNumber<T>("", v); }};
}

ConfigField weightField(double LossWeights::*member) {
  return {[member](const TrainConfig& c) { return formatDouble(c.weights.*member); },
          [member](TrainConfig& c, const std::string& v) { c.weights.*member = parseNumber<double>("", v); }};
}

const std::map<std::string, ConfigField>& configFields() {
  static const std::map<std::string, ConfigField> fields = {
      {"batch_size", numberField(&TrainConfig::batchSize)},
      {"lr", numberField(&TrainConfig::lr)},
      {"total_steps", numberField(&TrainConfig::totalSteps)},
      {"rotations", numberField(&TrainConfig::rotations)},
      {"scale_min", numberField(&TrainConfig::scaleMin)},
      {"scale_max", numberField(&TrainConfig::scaleMax)},
      {"seed", numberField(&TrainConfig::seed)},
      {"clip_length", numberField(&TrainConfig::clipLength)},
      {"centroid_momentum", numberField(&TrainConfig::centroidMomentum)},
      {"centroid_warmup", numberField(&TrainConfig::centroidWarmup)},
      {"checkpoint_interval", numberField(&TrainConfig::checkpointInterval)},
      {"beta1", numberField(&TrainConfig::beta1)},
      {"beta2", numberField(&TrainConfig::beta2)},
      {"adam_eps", numberField(&TrainConfig::adamEps)},
      {"single_precision",
       {[](const TrainConfig& c) { return std::string(c.singlePrecision ? "true" : "false"); },
        [](TrainConfig& c, const std::string& v) { c.singlePrecision = parseBool("single_precision", v); }}},
      {"network",
       {[](const TrainConfig& c) { return c.network; },
        [](TrainConfig& c, const std::string& v) { c.network = v; }}},
      {"lambda_rec", weightField(&LossWeights::rec)},
      {"lambda_adv", weightField(&LossWeights::adv)},
      {"lambda_vc_x", weightField(&LossWeights::vcSkeleton)},
      {"lambda_vc_m", weightField(&LossWeights::vcMotion)},
      {"lambda_vc_s", weightField(&LossWeights::vcStructure)},
      {"lambda_sc_x", weightField(&LossWeights::scSkeleton)},
      {"lambda_sc_m", weightField(&LossWeights::scMotion)},
      {"lambda_sc_v", weightField(&LossWeights::scView)},
  };
  return fields;
}

NetworkSpec networkByName(const std::string& name) {
  if (name == "standard") {
    return NetworkSpec::standard();
  }
  if (name == "miniature") {
    return NetworkSpec::miniature();
  }
  fail(ErrorCode::ParseError, "unknown network '" + name + "' (expected standard or miniature)");
}

void requireFinite(const Var& term, const char* name, long step) {
  const double v = term.item();
  if (!std::isfinite(v)) {
    fail(ErrorCode::NonFiniteLoss, std::string("term ") + name + " = " + std::to_string(v) + " at step " +
                                       std::to_string(step));
  }
}

Grid batchMean(const Grid& codes) {
  const int batch = codes.dim(0);
  const int width = codes.dim(1);
  Grid mean({width});
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < width; ++c) {
      mean.data[c] += codes.data[static_cast<size_t>(n) * width + c];
    }
  }
  for (double& v : mean.data) {
    v /= batch;
  }
  return mean;
}

} // namespace

void TrainConfig::validate() const {
  if (batchSize < 1) {
    fail(ErrorCode::ParseError, "batch_size must be at least 1");
  }
  if (rotations < 1) {
    fail(ErrorCode::ParseError, "rotations must be at least 1");
  }
  if (!(scaleMin > 0.0) || !(scaleMin <= scaleMax)) {
    fail(ErrorCode::ParseError, "scale range must satisfy 0 < scale_min <= scale_max");
  }
  if (clipLength < 8 || clipLength % 8 != 0) {
    fail(ErrorCode::ParseError, "clip_length must be a positive multiple of 8");
  }
  if (!(lr >= 0.0) || totalSteps < 0 || !(centroidMomentum >= 0.0 && centroidMomentum <= 1.0)) {
    fail(ErrorCode::ParseError, "lr, total_steps and centroid_momentum must be in range");
  }
  networkByName(network);
}

std::map<std::string, std::string> TrainConfig::toKeyValues() const {
  std::map<std::string, std::string> out;
  for (const auto& [key, field] : configFields()) {
    out[key] = field.get(*this);
  }
  return out;
}

void TrainConfig::apply(const std::map<std::string, std::string>& values) {
  const auto& fields = configFields();
  for (const auto& [key, value] : values) {
    const auto it = fields.find(key);
    if (it == fields.end()) {
      fail(ErrorCode::ParseError, "unknown config key '" + key + "'");
    }
    try {
      it->second.set(*this, value);
    } catch (const Error&) {
      fail(ErrorCode::ParseError, "config key '" + key + "': cannot parse '" + value + "'");
    }
  }
}

NetworkSpec TrainConfig::networkSpec() const {
  return networkByName(network);
}

engine::AdamConfig TrainConfig::adam() const {
  return {lr, beta1, beta2, adamEps};
}

TrainConfig loadTrainConfig(const std::filesystem::path& path) {
  TrainConfig config;
  config.apply(io::readKeyValueFile(path));
  config.validate();
  return config;
}

std::mt19937_64 stepRng(uint64_t seed, long step) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(step),
                    static_cast<uint32_t>(static_cast<uint64_t>(step) >> 32), 0x5eedu};
  return std::mt19937_64(seq);
}

ScaleDraw sampleLimbScales(std::mt19937_64& rng, const TrainConfig& config) {
  std::uniform_real_distribution<double> dist(config.scaleMin, config.scaleMax);
  ScaleDraw draw;
  draw.global = dist(rng);
  for (double& l : draw.local) {
    l = dist(rng);
  }
  return draw;
}

void updateCanonicalStructure(const Grid& batchCodes, CanonicalStructure& state, double momentum) {
  if (batchCodes.shape.size() != 2 || batchCodes.dim(0) < 1) {
    fail(ErrorCode::EmptyBatch, "no structure codes to average");
  }
  const Grid mean = batchMean(batchCodes);
  if (state.updateCount == 0 || state.sCano.size() != mean.size()) {
    state.sCano = mean.data;
  } else {
    for (size_t i = 0; i < mean.size(); ++i) {
      state.sCano[i] = momentum * state.sCano[i] + (1.0 - momentum) * mean.data[i];
    }
  }
  ++state.updateCount;
}

LossReport trainStep(Model& model, TrainState& state, const TrainConfig& config, std::span<const Sequence2D> batch) {
  if (batch.empty()) {
    fail(ErrorCode::EmptyBatch, "training batch is empty");
  }
  engine::ScopedGemmPrecision precision(config.singlePrecision ? engine::GemmPrecision::Single
                                                               : engine::GemmPrecision::Double);
  auto rng = stepRng(config.seed, state.step);
  auto& params = model.params();
  const int size = static_cast<int>(batch.size());
  const int frames = batch[0].frames();
  const int k = config.rotations;
  const Var x = toBatch(batch);

  params.discriminator.setRequiresGrad(false);
  const Reconstruction rec = model.reconstruct(x);

  // K smooth random view tracks per clip, stacked k-major along the batch axis.
  Grid omega({k * size, 9, frames});
  for (int i = 0; i < k * size; ++i) {
    const auto track = randomSmoothRotations(frames, 1, rng).front();
    for (int t = 0; t < frames; ++t) {
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
          omega.data[(static_cast<size_t>(i) * 9 + r * 3 + c) * frames + t] = track.matrices[t](r, c);
        }
      }
    }
  }
  const std::vector<Var> copies(k, rec.xRec3);
  const Var rotated = engine::projectXY(engine::rotatePoints(engine::concatBatch(copies), Var::constant(omega)));
  auto splitScores = [&](const Var& scores) {
    std::vector<Var> parts;
    for (int i = 0; i < k; ++i) {
      parts.push_back(engine::sliceBatch(scores, i * size, size));
    }
    return parts;
  };

  params.discriminator.setRequiresGrad(true);
  const Var lossD = discriminatorLoss(model.discriminate(x), splitScores(model.discriminate(rotated.detach())));
  requireFinite(lossD, "adv_d", state.step);
  engine::backpropagate(lossD);
  engine::adamStep(params.discriminator, config.adam());
  params.discriminator.setRequiresGrad(false);

  std::vector<Sequence2D> scaledClips;
  scaledClips.reserve(batch.size());
  for (const auto& clip : batch) {
    scaledClips.push_back(limbScale(clip, sampleLimbScales(rng, config).limbScales()));
  }
  const Var scaled = toBatch(std::span<const Sequence2D>(scaledClips));

  Grid canonical;
  if (state.canonical.updateCount == 0 || state.step < config.centroidWarmup) {
    canonical = batchMean(rec.codes.sBar.value());
  } else {
    canonical = Grid({static_cast<int>(state.canonical.sCano.size())}, state.canonical.sCano);
  }
  const Var sCano = tileCode(canonical.data, size);

  LossTerms terms;
  terms.rec = recLoss(x, rec.xRec);
  terms.advGenerator = generatorAdvLoss(splitScores(model.discriminate(rotated)));
  const auto vc = vcLoss(viewCanonInputs(model, rec, rotated, k));
  terms.vcSkeleton = vc.skeleton;
  terms.vcMotion = vc.motion;
  terms.vcStructure = vc.structure;
  const auto sc = scLoss(structureCanonInputs(model, rec, scaled, sCano));
  terms.scSkeleton = sc.skeleton;
  terms.scMotion = sc.motion;
  terms.scView = sc.view;

  requireFinite(terms.rec, "rec", state.step);
  requireFinite(terms.advGenerator, "adv_g", state.step);
  requireFinite(terms.vcSkeleton, "vc_x", state.step);
  requireFinite(terms.vcMotion, "vc_m", state.step);
  requireFinite(terms.vcStructure, "vc_s", state.step);
  requireFinite(terms.scSkeleton, "sc_x", state.step);
  requireFinite(terms.scMotion, "sc_m", state.step);
  requireFinite(terms.scView, "sc_v", state.step);

  const Var total = totalLoss(terms, config.weights);
  engine::backpropagate(total);
  for (auto* store : params.generatorStores()) {
    engine::adamStep(*store, config.adam());
  }
  params.discriminator.setRequiresGrad(true);

  updateCanonicalStructure(rec.codes.sBar.value(), state.canonical, config.centroidMomentum);
  ++state.step;
  return makeReport(terms, lossD, config.weights);
}

Trainer::Trainer(Model& model, TrainConfig config, std::vector<Sequence2D> clips)
    : Trainer(model, std::move(config), std::move(clips), TrainState{}) {}

Trainer::Trainer(Model& model, TrainConfig config, std::vector<Sequence2D> clips, TrainState state)
    : model_(model), config_(std::move(config)), clips_(std::move(clips)), state_(std::move(state)) {
  config_.validate();
  if (clips_.empty()) {
    fail(ErrorCode::EmptyBatch, "no training clips");
  }
}

std::vector<Sequence2D> Trainer::nextBatch() {
  // Batch n covers positions [n B, (n + 1) B) of the concatenated per-epoch permutations,
  // each permutation seeded by (seed, epoch).
  const size_t n = clips_.size();
  const size_t bs = static_cast<size_t>(config_.batchSize);
  std::vector<Sequence2D> batch;
  batch.reserve(bs);
  size_t position = static_cast<size_t>(state_.step) * bs;
  std::vector<size_t> perm;
  size_t permEpoch = SIZE_MAX;
  for (size_t i = 0; i < bs; ++i, ++position) {
    const size_t epoch = position / n;
    if (epoch != permEpoch) {
      perm.resize(n);
      std::iota(perm.begin(), perm.end(), size_t{0});
      auto rng = stepRng(config_.seed ^ 0x9e3779b97f4a7c15ull, static_cast<long>(epoch));
      std::shuffle(perm.begin(), perm.end(), rng);
      permEpoch = epoch;
    }
    batch.push_back(clips_[perm[position % n]]);
  }
  return batch;
}

LossReport Trainer::step() {
  const auto batch = nextBatch();
  return trainStep(model_, state_, config_, batch);
}

void saveCheckpoint(const Model& model, const TrainState& state, const std::filesystem::path& path) {
  std::string network;
  if (model.spec() == NetworkSpec::standard()) {
    network = "standard";
  } else if (model.spec() == NetworkSpec::miniature()) {
    network = "miniature";
  } else {
    fail(ErrorCode::Io, "only the standard and miniature networks can be checkpointed");
  }
  io::BinaryWriter w(path);
  w.bytes("CNCK", 4);
  w.u32(kCheckpointVersion);
  w.string(network);
  for (const auto* store : model.params().allStores()) {
    w.i64(store->adamSteps());
    w.u32(static_cast<uint32_t>(store->entries().size()));
    for (const auto& e : store->entries()) {
      w.string(e.name);
      w.u32(static_cast<uint32_t>(e.param.shape().size()));
      for (int d : e.param.shape()) {
        w.u32(static_cast<uint32_t>(d));
      }
      w.f64s(e.param.value().data);
      w.f64s(e.firstMoment);
      w.f64s(e.secondMoment);
    }
  }
  w.u32(static_cast<uint32_t>(state.canonical.sCano.size()));
  w.f64s(state.canonical.sCano);
  w.i64(state.canonical.updateCount);
  w.i64(state.step);
  w.close();
}

std::pair<Model, TrainState> loadCheckpoint(const std::filesystem::path& path) {
  io::BinaryReader r(path, ErrorCode::CorruptCheckpoint);
  r.expectMagic("CNCK", kCheckpointVersion);
  const std::string network = r.string(64);
  NetworkSpec spec;
  try {
    spec = networkByName(network);
  } catch (const Error&) {
    fail(ErrorCode::CorruptCheckpoint, path.string() + ": unknown network '" + network + "'");
  }
  Model model(spec, 0);
  for (auto* store : model.params().allStores()) {
    store->setAdamSteps(r.i64());
    const uint32_t count = r.u32();
    if (count != store->entries().size()) {
      fail(ErrorCode::CorruptCheckpoint, path.string() + ": parameter count mismatch");
    }
    for (auto& e : store->entries()) {
      if (r.string(256) != e.name) {
        fail(ErrorCode::CorruptCheckpoint, path.string() + ": expected parameter " + e.name);
      }
      const uint32_t rank = r.u32();
      if (rank != e.param.shape().size()) {
        fail(ErrorCode::CorruptCheckpoint, path.string() + ": rank mismatch for " + e.name);
      }
      for (uint32_t i = 0; i < rank; ++i) {
        if (static_cast<int>(r.u32()) != e.param.shape()[i]) {
          fail(ErrorCode::CorruptCheckpoint, path.string() + ": shape mismatch for " + e.name);
        }
      }
      r.f64s(e.param.mutableValue().data);
      r.f64s(e.firstMoment);
      r.f64s(e.secondMoment);
    }
  }
  TrainState state;
  const uint32_t width = r.u32();
  if (width != 0 && static_cast<int>(width) != spec.structureChannels()) {
    fail(ErrorCode::CorruptCheckpoint, path.string() + ": canonical structure width mismatch");
  }
  state.canonical.sCano.resize(width);
  r.f64s(state.canonical.sCano);
  state.canonical.updateCount = r.i64();
  state.step = r.i64();
  if (!r.atEnd()) {
    fail(ErrorCode::CorruptCheckpoint, path.string() + ": trailing bytes");
  }
  return {std::move(model), std::move(state)};
}

} // namespace canonet
