#pragma once

// File formats. All binary formats are little-endian and start with a 4-byte
// magic followed by a u32 version.

#include "canonet/geometry.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace canonet::io {

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path);

  void bytes(const void* data, size_t n);
  void u32(uint32_t v);
  void i64(int64_t v);
  void f64(double v);
  void f64s(std::span<const double> values);
  void string(const std::string& s);
  void close();

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

/// Every read failure, including a short read, raises `failure`.
class BinaryReader {
 public:
  BinaryReader(const std::filesystem::path& path, ErrorCode failure);

  void bytes(void* data, size_t n);
  uint32_t u32();
  int64_t i64();
  double f64();
  void f64s(std::span<double> values);
  std::string string(size_t maxLength = 1 << 20);
  void expectMagic(const char (&magic)[5], uint32_t version);
  bool atEnd();

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  ErrorCode failure_;
};

inline constexpr uint32_t kSeq3dVersion = 1;

/// Native sequence format: magic "CSQ3", version, N, T, fps, then T * N * 3 doubles, frame-major.
void writeSeq3d(const std::filesystem::path& path, const Sequence3D& seq, double fps = 30.0);
Sequence3D readSeq3d(const std::filesystem::path& path, double* fps = nullptr);

/// {"topology": {...}, "fps": f, "frames": [[[x, y, z] x N] x T]}.
std::string sequenceToJson(const Sequence3D& seq, double fps);

enum class ExportFormat { Seq3d, Json };
ExportFormat parseExportFormat(const std::string& name);
void exportSequence(const Sequence3D& seq, ExportFormat format, const std::filesystem::path& path, double fps = 30.0);

/// Flat key=value text; '#' starts a comment.
std::map<std::string, std::string> readKeyValueFile(const std::filesystem::path& path);
void writeKeyValueFile(const std::filesystem::path& path, const std::map<std::string, std::string>& values);

} // namespace canonet::io
