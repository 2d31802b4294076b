#include "canonet/cli.hpp"

#include "canonet/evaluation.hpp"
#include "canonet/io.hpp"
#include "canonet/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

namespace canonet::cli {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string clipName(size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip_%04zu.kp", id);
  return buf;
}

int intValue(const std::map<std::string, std::string>& cfg, const std::string& key, int fallback) {
  const auto it = cfg.find(key);
  if (it == cfg.end()) {
    return fallback;
  }
  try {
    size_t used = 0;
    const int v = std::stoi(it->second, &used);
    if (used == it->second.size()) {
      return v;
    }
  } catch (const std::exception&) {
  }
  fail(ErrorCode::ParseError, "dataset.cfg: bad value for " + key);
}

Sequence2D readClipFile(const fs::path& path, int frames) {
  if (!fs::exists(path)) {
    fail(ErrorCode::Io, "no such file " + path.string());
  }
  return prepareClip(loadKeypointFile(path).clips.at(0), frames);
}

void requireFile(const fs::path& path, const char* what) {
  if (!fs::exists(path)) {
    throw UsageError(std::string(what) + " not found: " + path.string());
  }
}

int genData(const fs::path& out, int motions, int characters, int views, uint64_t seed, int frames) {
  std::mt19937_64 rng(seed);
  const ClipDataset ds = makeBenchmarkSet(motions, characters, views, rng, frames);
  writeDatasetDir(out, ds,
                  {{"motions", std::to_string(motions)},
                   {"characters", std::to_string(characters)},
                   {"views", std::to_string(views)},
                   {"seed", std::to_string(seed)},
                   {"frames", std::to_string(frames)},
                   {"count", std::to_string(ds.size())}});
  std::cout << "wrote " << ds.size() << " clips to " << out.string() << "\n";
  return 0;
}

int train(const fs::path& dataDir, const std::string& configPath, const std::vector<std::string>& overrides,
          const fs::path& out, const std::string& logPath, const std::string& resume) {
  TrainConfig config;
  if (!configPath.empty()) {
    config = loadTrainConfig(configPath);
  }
  std::map<std::string, std::string> extra;
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) {
      throw UsageError("--set expects key=value, got '" + o + "'");
    }
    extra[o.substr(0, eq)] = o.substr(eq + 1);
  }
  config.apply(extra);
  config.validate();

  const DatasetDir ds = readDatasetDir(dataDir);
  if (ds.frames != config.clipLength) {
    fail(ErrorCode::LengthMismatch, "dataset clips have " + std::to_string(ds.frames) + " frames, clip_length is " +
                                        std::to_string(config.clipLength));
  }

  std::optional<Model> model;
  TrainState state;
  if (!resume.empty()) {
    requireFile(resume, "checkpoint");
    auto loaded = loadCheckpoint(resume);
    model.emplace(std::move(loaded.first));
    state = loaded.second;
  } else {
    model.emplace(config.networkSpec(), config.seed);
  }

  const fs::path log = logPath.empty() ? fs::path(out.string() + ".log") : fs::path(logPath);
  std::ofstream logOut(log, state.step > 0 ? std::ios::app : std::ios::trunc);
  if (!logOut) {
    fail(ErrorCode::Io, "cannot write " + log.string());
  }
  if (state.step == 0) {
    logOut << LossReport::logHeader() << "\n";
  }

  engine::ScopedGemmPrecision precision(config.singlePrecision ? engine::GemmPrecision::Single
                                                               : engine::GemmPrecision::Double);
  Trainer trainer(*model, config, ds.data.clips, state);
  while (trainer.state().step < config.totalSteps) {
    const long step = trainer.state().step;
    const LossReport report = trainer.step();
    logOut << report.logLine(step) << "\n" << std::flush;
    if (config.checkpointInterval > 0 && trainer.state().step % config.checkpointInterval == 0) {
      saveCheckpoint(*model, trainer.state(), out);
    }
  }
  saveCheckpoint(*model, trainer.state(), out);
  std::cout << "trained " << trainer.state().step << " steps, checkpoint " << out.string() << "\n";
  return 0;
}

int retargetCmd(const fs::path& ckpt, const fs::path& source, const fs::path& target, const fs::path& out) {
  requireFile(ckpt, "checkpoint");
  const auto [model, state] = loadCheckpoint(ckpt);
  const Sequence2D src = readClipFile(source, 0);
  const Sequence2D tgt = readClipFile(target, 0);
  const Var result = model.retarget(toBatch(src), toBatch(tgt));
  io::writeSeq3d(out, sequenceAt<3>(result, 0));
  return 0;
}

int canonicalizeCmd(const std::string& mode, const fs::path& ckpt, const fs::path& in, const fs::path& out) {
  requireFile(ckpt, "checkpoint");
  const auto [model, state] = loadCheckpoint(ckpt);
  const Var x = toBatch(readClipFile(in, 0));
  const Var sCano = tileCode(state.canonical.sCano, 1);
  Var result;
  if (mode == "view") {
    result = model.canonicalizeView(x);
  } else if (mode == "structure") {
    result = model.canonicalizeStructure(x, sCano);
  } else if (mode == "both") {
    result = model.canonicalizeBoth(x, sCano);
  } else {
    result = model.reconstruct(x).xRec3;
  }
  io::writeSeq3d(out, sequenceAt<3>(result, 0));
  return 0;
}

int evaluateCmd(const fs::path& ckpt, const fs::path& dataDir, const fs::path& reportPath) {
  requireFile(ckpt, "checkpoint");
  const auto [model, state] = loadCheckpoint(ckpt);
  const DatasetDir ds = readDatasetDir(dataDir);
  const auto& clips = ds.data.clips;

  double rec = 0.0;
  double mse = 0.0;
  double mpjpe = 0.0;
  constexpr size_t kBatch = 64;
  for (size_t begin = 0; begin < clips.size(); begin += kBatch) {
    const size_t count = std::min(kBatch, clips.size() - begin);
    const Var x = toBatch(std::span<const Sequence2D>(clips).subspan(begin, count));
    const Reconstruction r = model.reconstruct(x);
    rec += recLoss(x, r.xRec).item() * static_cast<double>(count);
    if (!ds.data.synthetic.empty()) {
      for (size_t i = 0; i < count; ++i) {
        const size_t id = begin + i;
        const Sequence3D gt = cameraGroundTruth(ds.data.synthetic[id], ds.data.stats[id].height);
        const Sequence3D pred = sequenceAt<3>(r.xRec3, static_cast<int>(i));
        mse += mseMetric(pred, gt);
        mpjpe += mpjpeMetric(pred, gt);
      }
    }
  }
  const double n = static_cast<double>(clips.size());

  std::ofstream report(reportPath);
  if (!report) {
    fail(ErrorCode::Io, "cannot write " + reportPath.string());
  }
  report << std::setprecision(10);
  report << "clips " << clips.size() << "\n";
  report << "step " << state.step << "\n";
  report << "rec " << rec / n << "\n";
  if (!ds.data.synthetic.empty()) {
    report << "mse " << mse / n << "\n";
    report << "mpjpe " << mpjpe / n << "\n";
  }
  std::cout << "wrote " << reportPath.string() << "\n";
  return 0;
}

int clusterCmd(const fs::path& ckpt, const fs::path& dataDir, int k, int iters, uint64_t seed,
               const std::string& outPath) {
  requireFile(ckpt, "checkpoint");
  const auto [model, state] = loadCheckpoint(ckpt);
  const DatasetDir ds = readDatasetDir(dataDir);
  const Eigen::MatrixXd features = toMatrix(dualCanonicalFeatures(model, ds.data.clips, state.canonical.sCano));
  std::mt19937_64 rng(seed);
  const KMeansResult km = kmeans(features, k, iters, rng);

  std::ostringstream csv;
  csv << "clip_id,predicted,motion,character,view\n";
  for (size_t i = 0; i < km.labels.size(); ++i) {
    const ClipLabels l = i < ds.labels.size() ? ds.labels[i] : ClipLabels{};
    csv << i << "," << km.labels[i] << "," << l.motion << "," << l.character << "," << l.view << "\n";
  }
  if (outPath.empty()) {
    std::cout << csv.str();
  } else {
    std::ofstream out(outPath);
    if (!out) {
      fail(ErrorCode::Io, "cannot write " + outPath);
    }
    out << csv.str();
  }

  if (!ds.labels.empty()) {
    std::vector<int> motion;
    for (const auto& l : ds.labels) {
      motion.push_back(l.motion);
    }
    const ClusterScores s = clusterMetrics(km.labels, motion);
    std::cerr << std::setprecision(6) << "ari " << s.ari << " ami " << s.ami << " homogeneity " << s.homogeneity
              << " completeness " << s.completeness << " v_measure " << s.vMeasure << "\n";
  }
  return 0;
}

int retrieveCmd(const fs::path& ckpt, const fs::path& indexPath, const std::string& dataDir,
                const std::string& query, int topk) {
  requireFile(ckpt, "checkpoint");
  const auto [model, state] = loadCheckpoint(ckpt);
  MotionIndex index;
  if (!dataDir.empty()) {
    const DatasetDir ds = readDatasetDir(dataDir);
    index = buildIndex(model, ds.data.clips, state.canonical.sCano);
    writeIndex(indexPath, index);
  } else {
    requireFile(indexPath, "index");
    index = readIndex(indexPath);
  }
  if (query.empty()) {
    return 0;
  }
  const Sequence2D q = readClipFile(query, index.frames);
  for (const auto& hit : retrieve(model, q, state.canonical.sCano, index, static_cast<size_t>(topk))) {
    std::cout << hit.id << " " << std::setprecision(17) << hit.distance << "\n";
  }
  return 0;
}

int exportCmd(const fs::path& in, const std::string& format, const fs::path& out) {
  const io::ExportFormat fmt = io::parseExportFormat(format);
  double fps = 30.0;
  const Sequence3D seq = io::readSeq3d(in, &fps);
  io::exportSequence(seq, fmt, out, fps);
  return 0;
}

int exitCodeFor(ErrorCode code) {
  switch (code) {
  case ErrorCode::NonFiniteLoss:
    return 3;
  case ErrorCode::Usage:
    return 1;
  default:
    return 2;
  }
}

} // namespace

Sequence2D prepareClip(const Sequence2D& raw, int maxFrames) {
  int frames = raw.frames() - raw.frames() % 8;
  if (maxFrames > 0) {
    if (raw.frames() < maxFrames) {
      fail(ErrorCode::TooShort, "clip has " + std::to_string(raw.frames()) + " frames, need " +
                                    std::to_string(maxFrames));
    }
    frames = maxFrames;
  }
  if (frames < 8) {
    fail(ErrorCode::TooShort, "clip needs at least 8 frames");
  }
  Sequence2D cut(frames);
  for (int t = 0; t < frames; ++t) {
    for (int j = 0; j < kNumJoints; ++j) {
      cut.setJoint(j, t, raw.joint(j, t));
    }
  }
  return normalizeClip(cut).first;
}

void writeDatasetDir(const fs::path& dir, const ClipDataset& ds, const std::map<std::string, std::string>& cfg) {
  std::error_code ec;
  fs::create_directories(dir / "clips", ec);
  if (ec) {
    fail(ErrorCode::Io, "cannot create " + (dir / "clips").string() + ": " + ec.message());
  }
  io::writeKeyValueFile(dir / "dataset.cfg", cfg);
  std::ofstream labels(dir / "labels.txt");
  if (!labels) {
    fail(ErrorCode::Io, "cannot write " + (dir / "labels.txt").string());
  }
  labels << "# id motion character view\n";
  for (size_t i = 0; i < ds.size(); ++i) {
    writeKeypointFile(dir / "clips" / clipName(i), ds.clips[i], ds.fps);
    const ClipLabels l = i < ds.synthetic.size() ? ds.synthetic[i].labels : ClipLabels{};
    labels << i << " " << l.motion << " " << l.character << " " << l.view << "\n";
  }
}

DatasetDir readDatasetDir(const fs::path& dir) {
  requireFile(dir / "dataset.cfg", "dataset config");
  const auto cfg = io::readKeyValueFile(dir / "dataset.cfg");
  DatasetDir out;
  out.frames = intValue(cfg, "frames", 64);
  const int count = intValue(cfg, "count", -1);
  if (count < 1) {
    fail(ErrorCode::ParseError, "dataset.cfg: count must be positive");
  }
  for (int i = 0; i < count; ++i) {
    const Sequence2D raw = loadKeypointFile(dir / "clips" / clipName(static_cast<size_t>(i))).clips.at(0);
    if (raw.frames() != out.frames) {
      fail(ErrorCode::LengthMismatch, clipName(static_cast<size_t>(i)) + " does not have " +
                                          std::to_string(out.frames) + " frames");
    }
    auto [clip, stats] = normalizeClip(raw);
    out.data.clips.push_back(std::move(clip));
    out.data.stats.push_back(std::move(stats));
  }

  if (fs::exists(dir / "labels.txt")) {
    std::ifstream in(dir / "labels.txt");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') {
        continue;
      }
      std::istringstream ss(line);
      long id = 0;
      ClipLabels l;
      if (!(ss >> id >> l.motion >> l.character >> l.view) || id != static_cast<long>(out.labels.size())) {
        fail(ErrorCode::ParseError, "labels.txt: bad line '" + line + "'");
      }
      out.labels.push_back(l);
    }
    if (out.labels.size() != out.data.clips.size()) {
      fail(ErrorCode::LengthMismatch, "labels.txt does not cover every clip");
    }
  }

  if (cfg.contains("motions") && cfg.contains("seed")) {
    std::mt19937_64 rng(std::stoull(cfg.at("seed")));
    ClipDataset regen = makeBenchmarkSet(intValue(cfg, "motions", 0), intValue(cfg, "characters", 0),
                                         intValue(cfg, "views", 0), rng, out.frames);
    if (regen.size() != out.data.size()) {
      fail(ErrorCode::LengthMismatch, "dataset.cfg does not match the clip files");
    }
    out.data.synthetic = std::move(regen.synthetic);
  }
  return out;
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"Canonicalization networks for 2D-to-3D motion retargeting", "canonet"};
  app.require_subcommand(1, 1);

  fs::path out;
  fs::path data;
  fs::path ckpt;
  int motions = 16;
  int characters = 4;
  int views = 7;
  int frames = 64;
  uint64_t seed = 123;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic benchmark");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--motions", motions)->check(CLI::PositiveNumber);
  gen->add_option("--characters", characters)->check(CLI::PositiveNumber);
  gen->add_option("--views", views)->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed);
  gen->add_option("--frames", frames)->check(CLI::PositiveNumber);

  std::string config;
  std::vector<std::string> overrides;
  std::string logPath;
  std::string resume;
  auto* trainCmd = app.add_subcommand("train", "Train a model");
  trainCmd->add_option("--data", data)->required();
  trainCmd->add_option("--config", config, "key=value config file");
  trainCmd->add_option("--set", overrides, "Config override key=value");
  trainCmd->add_option("--out", out, "Checkpoint path")->required();
  trainCmd->add_option("--log", logPath, "Loss log path (default <out>.log)");
  trainCmd->add_option("--resume", resume, "Checkpoint to resume from");

  fs::path source;
  fs::path target;
  auto* retargetSub = app.add_subcommand("retarget", "Retarget source motion onto target structure");
  retargetSub->add_option("--ckpt", ckpt)->required();
  retargetSub->add_option("--source", source)->required();
  retargetSub->add_option("--target", target)->required();
  retargetSub->add_option("--out", out)->required();

  std::string mode;
  fs::path in;
  auto* canonSub = app.add_subcommand("canonicalize", "Canonicalize view, structure or both");
  canonSub->add_option("--mode", mode)->required()->check(CLI::IsMember({"view", "structure", "both", "none"}));
  canonSub->add_option("--ckpt", ckpt)->required();
  canonSub->add_option("--in", in)->required();
  canonSub->add_option("--out", out)->required();

  fs::path report;
  auto* evalSub = app.add_subcommand("evaluate", "Evaluate a checkpoint on a dataset");
  evalSub->add_option("--ckpt", ckpt)->required();
  evalSub->add_option("--data", data)->required();
  evalSub->add_option("--report", report)->required();

  int k = 64;
  int iters = 300;
  std::string clusterOut;
  auto* clusterSub = app.add_subcommand("cluster", "K-means over dual-canonicalized clips");
  clusterSub->add_option("--ckpt", ckpt)->required();
  clusterSub->add_option("--data", data)->required();
  clusterSub->add_option("--k", k)->check(CLI::PositiveNumber);
  clusterSub->add_option("--iters", iters)->check(CLI::PositiveNumber);
  clusterSub->add_option("--seed", seed);
  clusterSub->add_option("--out", clusterOut, "Cluster report (default stdout)");

  fs::path index;
  std::string indexData;
  std::string query;
  int topk = 3;
  auto* retrieveSub = app.add_subcommand("retrieve", "Nearest clips in the dual-canonical space");
  retrieveSub->add_option("--ckpt", ckpt)->required();
  retrieveSub->add_option("--index", index)->required();
  retrieveSub->add_option("--data", indexData, "Build the index from this dataset first");
  retrieveSub->add_option("--query", query);
  retrieveSub->add_option("--topk", topk)->check(CLI::PositiveNumber);

  std::string format;
  auto* exportSub = app.add_subcommand("export", "Convert a seq3d file");
  exportSub->add_option("--in", in)->required();
  exportSub->add_option("--format", format)->required();
  exportSub->add_option("--out", out)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    std::cerr << app.help();
    return 1;
  }

  try {
    if (*gen) {
      return genData(out, motions, characters, views, seed, frames);
    }
    if (*trainCmd) {
      return train(data, config, overrides, out, logPath, resume);
    }
    if (*retargetSub) {
      return retargetCmd(ckpt, source, target, out);
    }
    if (*canonSub) {
      return canonicalizeCmd(mode, ckpt, in, out);
    }
    if (*evalSub) {
      return evaluateCmd(ckpt, data, report);
    }
    if (*clusterSub) {
      return clusterCmd(ckpt, data, k, iters, seed, clusterOut);
    }
    if (*retrieveSub) {
      return retrieveCmd(ckpt, index, indexData, query, topk);
    }
    if (*exportSub) {
      return exportCmd(in, format, out);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exitCodeFor(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) {
    args.emplace_back(argv[i]);
  }
  return run(args);
}

} // namespace canonet::cli
