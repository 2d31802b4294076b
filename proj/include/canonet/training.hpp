#pragma once

#include "canonet/losses.hpp"
#include "canonet/model.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace canonet {

struct TrainConfig {
  int batchSize = 64;
  double lr = 1e-4;
  long totalSteps = 5000;
  int rotations = 3;
  double scaleMin = 0.5;
  double scaleMax = 2.0;
  uint64_t seed = 123;
  int clipLength = 64;
  double centroidMomentum = 0.99;
  /// Steps during which the structure terms use the batch-mean code instead of s_cano.
  long centroidWarmup = 500;
  long checkpointInterval = 1000;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adamEps = 1e-8;
  /// Single-precision matrix products; storage and reductions stay double.
  bool singlePrecision = true;
  /// "standard" or "miniature".
  std::string network = "standard";
  LossWeights weights;

  void validate() const;
  std::map<std::string, std::string> toKeyValues() const;
  /// Applies the given keys on top of this config; unknown keys raise a ParseError.
  void apply(const std::map<std::string, std::string>& values);
  NetworkSpec networkSpec() const;
  engine::AdamConfig adam() const;
};

TrainConfig loadTrainConfig(const std::filesystem::path& path);

struct CanonicalStructure {
  std::vector<double> sCano;
  long updateCount = 0;
};

/// Per-step randomness is derived from (seed, step), so this is all a resume needs.
struct TrainState {
  CanonicalStructure canonical;
  long step = 0;
};

std::mt19937_64 stepRng(uint64_t seed, long step);

struct ScaleDraw {
  double global = 1.0;
  std::array<double, kNumLimbGroups> local{};

  LimbScales limbScales() const {
    return {global, local};
  }
};

ScaleDraw sampleLimbScales(std::mt19937_64& rng, const TrainConfig& config);

/// EMA of batch-mean codes; the first update initializes to the batch mean.
void updateCanonicalStructure(const engine::Grid& batchCodes, CanonicalStructure& state, double momentum);

/// One discriminator update followed by one encoder/decoder update.
LossReport trainStep(Model& model, TrainState& state, const TrainConfig& config, std::span<const Sequence2D> batch);

/// Draws batches in shuffled epochs from a fixed clip pool.
class Trainer {
 public:
  Trainer(Model& model, TrainConfig config, std::vector<Sequence2D> clips);
  /// Resumes from a loaded state.
  Trainer(Model& model, TrainConfig config, std::vector<Sequence2D> clips, TrainState state);

  LossReport step();
  const TrainState& state() const {
    return state_;
  }
  TrainState& state() {
    return state_;
  }
  const TrainConfig& config() const {
    return config_;
  }

 private:
  std::vector<Sequence2D> nextBatch();

  Model& model_;
  TrainConfig config_;
  std::vector<Sequence2D> clips_;
  TrainState state_;
};

inline constexpr uint32_t kCheckpointVersion = 1;

void saveCheckpoint(const Model& model, const TrainState& state, const std::filesystem::path& path);
std::pair<Model, TrainState> loadCheckpoint(const std::filesystem::path& path);

} // namespace canonet
