#pragma once

#include "canonet/data.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace canonet::cli {

/// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

/// Dataset directory: dataset.cfg, labels.txt and clips/clip_NNNN.kp.
struct DatasetDir {
  ClipDataset data;
  std::vector<ClipLabels> labels;
  int frames = 64;
};

void writeDatasetDir(const std::filesystem::path& dir, const ClipDataset& ds, const std::map<std::string, std::string>& cfg);
/// Loads every clip file in id order and normalizes it. Generated datasets are
/// regenerated from dataset.cfg so their ground truth is available.
DatasetDir readDatasetDir(const std::filesystem::path& dir);

/// Truncates a loaded sequence to its first whole multiple of 8 frames and normalizes it.
Sequence2D prepareClip(const Sequence2D& raw, int maxFrames = 0);

} // namespace canonet::cli
