#include "canonet/io.hpp"
#include "canonet/training.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace canonet;

namespace {

TrainConfig miniConfig() {
  TrainConfig c;
  c.network = "miniature";
  c.batchSize = 4;
  c.clipLength = 16;
  c.totalSteps = 6;
  c.centroidWarmup = 2;
  return c;
}

std::filesystem::path tempPath(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("canonet_test_training_" + name);
}

std::vector<double> flatParameters(const Model& model) {
  std::vector<double> out;
  for (const auto* store : model.params().allStores()) {
    for (const auto& e : store->entries()) {
      out.insert(out.end(), e.param.value().data.begin(), e.param.value().data.end());
    }
  }
  return out;
}

std::vector<std::string> runLog(const TrainConfig& config, const std::vector<Sequence2D>& clips, int steps) {
  Model model(config.networkSpec(), config.seed);
  Trainer trainer(model, config, clips);
  std::vector<std::string> lines;
  for (int i = 0; i < steps; ++i) {
    lines.push_back(trainer.step().logLine(trainer.state().step - 1));
  }
  return lines;
}

} // namespace

TEST_CASE("config keys") {
  TrainConfig c;
  CHECK(c.batchSize == 64);
  CHECK(c.lr == 1e-4);
  CHECK(c.rotations == 3);
  CHECK(c.seed == 123);
  CHECK(c.clipLength == 64);
  const auto kv = c.toKeyValues();
  CHECK(kv.at("batch_size") == "64");
  CHECK(kv.at("lambda_rec") == "15");

  TrainConfig d;
  d.apply(kv);
  CHECK(d.toKeyValues() == kv);

  d.apply({{"batch_size", "8"}, {"lambda_sc_x", "0.5"}, {"single_precision", "false"}});
  CHECK(d.batchSize == 8);
  CHECK(d.weights.scSkeleton == 0.5);
  CHECK_FALSE(d.singlePrecision);
  CHECK_THROWS_AS(d.apply({{"bogus", "1"}}), Error);
  CHECK_THROWS_AS(d.apply({{"lr", "fast"}}), Error);

  TrainConfig bad;
  bad.clipLength = 12;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = TrainConfig{};
  bad.batchSize = 0;
  CHECK_THROWS_AS(bad.validate(), Error);

  const auto path = tempPath("config.cfg");
  io::writeKeyValueFile(path, {{"total_steps", "77"}, {"network", "miniature"}});
  const TrainConfig loaded = loadTrainConfig(path);
  CHECK(loaded.totalSteps == 77);
  CHECK(loaded.network == "miniature");
  std::filesystem::remove(path);
}

TEST_CASE("limb scale draws") {
  TrainConfig c;
  std::mt19937_64 rng(1);
  double sum = 0.0;
  const int draws = 100000;
  for (int i = 0; i < draws / 6 + 1; ++i) {
    const ScaleDraw d = sampleLimbScales(rng, c);
    CHECK(d.global >= 0.5);
    CHECK(d.global <= 2.0);
    sum += d.global;
    for (double l : d.local) {
      CHECK(l >= 0.5);
      CHECK(l <= 2.0);
      sum += l;
    }
  }
  CHECK(std::abs(sum / (6.0 * (draws / 6 + 1)) - 1.25) < 0.01);

  std::mt19937_64 a(7);
  std::mt19937_64 b(7);
  const ScaleDraw da = sampleLimbScales(a, c);
  const ScaleDraw db = sampleLimbScales(b, c);
  CHECK(da.global == db.global);
  CHECK(da.local == db.local);
}

TEST_CASE("canonical structure centroid") {
  engine::Grid batch({2, 3});
  batch.data = {1, 2, 3, 3, 4, 5};
  CanonicalStructure s;
  updateCanonicalStructure(batch, s, 0.99);
  CHECK(s.sCano == std::vector<double>{2, 3, 4});

  engine::Grid other({1, 3}, 10.0);
  updateCanonicalStructure(other, s, 0.0);
  CHECK(s.sCano == std::vector<double>{10, 10, 10});

  for (int i = 0; i < 1000; ++i) {
    updateCanonicalStructure(batch, s, 0.99);
  }
  double diff = 0.0;
  for (size_t i = 0; i < 3; ++i) {
    diff += std::pow(s.sCano[i] - std::vector<double>{2, 3, 4}[i], 2);
  }
  CHECK(std::sqrt(diff) < 1e-3);

  CHECK_THROWS_AS(updateCanonicalStructure(engine::Grid({0, 3}), s, 0.99), Error);
}

TEST_CASE("zero learning rate leaves parameters") {
  TrainConfig c = miniConfig();
  c.lr = 0.0;
  Model model(c.networkSpec(), 3);
  const auto before = flatParameters(model);
  TrainState state;
  const auto clips = fixture::syntheticClips(4, 16, 3);
  trainStep(model, state, c, clips);
  CHECK(flatParameters(model) == before);
  CHECK(state.step == 1);
  CHECK(state.canonical.updateCount == 1);
  CHECK_THROWS_AS(trainStep(model, state, c, std::span<const Sequence2D>()), Error);
}

TEST_CASE("training is deterministic") {
  const TrainConfig c = miniConfig();
  const auto clips = fixture::syntheticClips(6, 16, 4);
  const auto a = runLog(c, clips, 4);
  const auto b = runLog(c, clips, 4);
  CHECK(a == b);
  TrainConfig other = c;
  other.seed = 124;
  CHECK(runLog(other, clips, 4) != a);
}

TEST_CASE("a training step changes only what it should") {
  const TrainConfig c = miniConfig();
  Model model(c.networkSpec(), 5);
  TrainState state;
  const auto clips = fixture::syntheticClips(4, 16, 5);
  const auto before = flatParameters(model);
  const LossReport r = trainStep(model, state, c, clips);
  CHECK(flatParameters(model) != before);
  CHECK(std::isfinite(r.total));
  CHECK(r.total == doctest::Approx(totalLoss(r, c.weights)).epsilon(1e-12));
  for (const auto* store : model.params().allStores()) {
    CHECK(store->adamSteps() == 1);
  }
}

TEST_CASE("checkpoint round trip") {
  const TrainConfig c = miniConfig();
  const auto clips = fixture::syntheticClips(6, 16, 6);
  Model model(c.networkSpec(), 6);
  Trainer trainer(model, c, clips);
  for (int i = 0; i < 3; ++i) {
    trainer.step();
  }
  const auto path = tempPath("round.ck");
  saveCheckpoint(model, trainer.state(), path);
  auto [loaded, state] = loadCheckpoint(path);
  CHECK(flatParameters(loaded) == flatParameters(model));
  CHECK(state.step == 3);
  CHECK(state.canonical.sCano == trainer.state().canonical.sCano);
  CHECK(state.canonical.updateCount == trainer.state().canonical.updateCount);
  const auto stores = model.params().allStores();
  const auto loadedStores = loaded.params().allStores();
  for (size_t s = 0; s < stores.size(); ++s) {
    CHECK(loadedStores[s]->adamSteps() == stores[s]->adamSteps());
    for (size_t e = 0; e < stores[s]->entries().size(); ++e) {
      CHECK(loadedStores[s]->entries()[e].firstMoment == stores[s]->entries()[e].firstMoment);
      CHECK(loadedStores[s]->entries()[e].secondMoment == stores[s]->entries()[e].secondMoment);
    }
  }

  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 5);
  try {
    loadCheckpoint(path);
    FAIL("expected CorruptCheckpoint");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::CorruptCheckpoint);
  }
  {
    std::ofstream out(path, std::ios::binary);
    out << "XXXX";
  }
  CHECK_THROWS_AS(loadCheckpoint(path), Error);
  std::filesystem::remove(path);
}

TEST_CASE("resumed training matches an uninterrupted run") {
  const TrainConfig c = miniConfig();
  const auto clips = fixture::syntheticClips(6, 16, 7);
  const auto full = runLog(c, clips, 6);

  Model model(c.networkSpec(), c.seed);
  Trainer first(model, c, clips);
  std::vector<std::string> lines;
  for (int i = 0; i < 3; ++i) {
    lines.push_back(first.step().logLine(first.state().step - 1));
  }
  const auto path = tempPath("resume.ck");
  saveCheckpoint(model, first.state(), path);
  auto [resumedModel, state] = loadCheckpoint(path);
  Trainer second(resumedModel, c, clips, state);
  for (int i = 0; i < 3; ++i) {
    lines.push_back(second.step().logLine(second.state().step - 1));
  }
  CHECK(lines == full);
  std::filesystem::remove(path);
}

TEST_CASE("step seeds are distinct") {
  auto a = stepRng(123, 0);
  auto b = stepRng(123, 1);
  auto c = stepRng(124, 0);
  const auto va = a();
  CHECK(va != b());
  CHECK(va != c());
  auto again = stepRng(123, 0);
  CHECK(again() == va);
}
