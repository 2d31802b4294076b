#include "canonet/io.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace canonet::io {

BinaryWriter::BinaryWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
  if (!out_) {
    fail(ErrorCode::Io, "cannot write " + path.string());
  }
}

void BinaryWriter::bytes(const void* data, size_t n) {
  out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out_) {
    fail(ErrorCode::Io, "write failed on " + path_.string());
  }
}

void BinaryWriter::u32(uint32_t v) {
  bytes(&v, sizeof v);
}

void BinaryWriter::i64(int64_t v) {
  bytes(&v, sizeof v);
}

void BinaryWriter::f64(double v) {
  bytes(&v, sizeof v);
}

void BinaryWriter::f64s(std::span<const double> values) {
  bytes(values.data(), values.size_bytes());
}

void BinaryWriter::string(const std::string& s) {
  u32(static_cast<uint32_t>(s.size()));
  bytes(s.data(), s.size());
}

void BinaryWriter::close() {
  out_.close();
  if (!out_) {
    fail(ErrorCode::Io, "close failed on " + path_.string());
  }
}

BinaryReader::BinaryReader(const std::filesystem::path& path, ErrorCode failure)
    : path_(path), in_(path, std::ios::binary), failure_(failure) {
  if (!in_) {
    fail(ErrorCode::Io, "cannot open " + path.string());
  }
}

void BinaryReader::bytes(void* data, size_t n) {
  in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(in_.gcount()) != n) {
    fail(failure_, path_.string() + " is truncated");
  }
}

uint32_t BinaryReader::u32() {
  uint32_t v = 0;
  bytes(&v, sizeof v);
  return v;
}

int64_t BinaryReader::i64() {
  int64_t v = 0;
  bytes(&v, sizeof v);
  return v;
}

double BinaryReader::f64() {
  double v = 0;
  bytes(&v, sizeof v);
  return v;
}

void BinaryReader::f64s(std::span<double> values) {
  bytes(values.data(), values.size_bytes());
}

std::string BinaryReader::string(size_t maxLength) {
  const uint32_t n = u32();
  if (n > maxLength) {
    fail(failure_, path_.string() + ": implausible string length");
  }
  std::string s(n, '\0');
  bytes(s.data(), n);
  return s;
}

void BinaryReader::expectMagic(const char (&magic)[5], uint32_t version) {
  char got[4];
  bytes(got, 4);
  if (std::memcmp(got, magic, 4) != 0) {
    fail(failure_, path_.string() + ": bad magic, expected " + magic);
  }
  const uint32_t v = u32();
  if (v != version) {
    fail(failure_, path_.string() + ": unsupported version " + std::to_string(v));
  }
}

bool BinaryReader::atEnd() {
  return in_.peek() == std::char_traits<char>::eof();
}

void writeSeq3d(const std::filesystem::path& path, const Sequence3D& seq, double fps) {
  BinaryWriter w(path);
  w.bytes("CSQ3", 4);
  w.u32(kSeq3dVersion);
  w.u32(kNumJoints);
  w.u32(static_cast<uint32_t>(seq.frames()));
  w.f64(fps);
  for (int t = 0; t < seq.frames(); ++t) {
    for (int j = 0; j < kNumJoints; ++j) {
      for (int a = 0; a < 3; ++a) {
        w.f64(seq.at(j, t, a));
      }
    }
  }
  w.close();
}

Sequence3D readSeq3d(const std::filesystem::path& path, double* fps) {
  BinaryReader r(path, ErrorCode::ParseError);
  r.expectMagic("CSQ3", kSeq3dVersion);
  const uint32_t joints = r.u32();
  const uint32_t frames = r.u32();
  if (joints != kNumJoints) {
    fail(ErrorCode::TopologyError, path.string() + ": expected 15 joints, got " + std::to_string(joints));
  }
  if (frames > (1u << 24)) {
    fail(ErrorCode::ParseError, path.string() + ": implausible frame count");
  }
  const double rate = r.f64();
  if (fps) {
    *fps = rate;
  }
  Sequence3D seq(static_cast<int>(frames));
  for (uint32_t t = 0; t < frames; ++t) {
    for (int j = 0; j < kNumJoints; ++j) {
      for (int a = 0; a < 3; ++a) {
        seq.at(j, static_cast<int>(t), a) = r.f64();
      }
    }
  }
  if (!r.atEnd()) {
    fail(ErrorCode::ParseError, path.string() + ": trailing bytes");
  }
  return seq;
}

std::string sequenceToJson(const Sequence3D& seq, double fps) {
  const auto& topo = topology();
  nlohmann::json j;
  j["topology"]["joints"] = std::vector<std::string>(topo.names.begin(), topo.names.end());
  j["topology"]["parents"] = std::vector<int>(topo.parent.begin(), topo.parent.end());
  j["fps"] = fps;
  auto frames = nlohmann::json::array();
  for (int t = 0; t < seq.frames(); ++t) {
    auto frame = nlohmann::json::array();
    for (int k = 0; k < kNumJoints; ++k) {
      frame.push_back({seq.at(k, t, 0), seq.at(k, t, 1), seq.at(k, t, 2)});
    }
    frames.push_back(std::move(frame));
  }
  j["frames"] = std::move(frames);
  return j.dump();
}

ExportFormat parseExportFormat(const std::string& name) {
  if (name == "seq3d") {
    return ExportFormat::Seq3d;
  }
  if (name == "json") {
    return ExportFormat::Json;
  }
  fail(ErrorCode::UnknownFormat, "unknown export format '" + name + "'");
}

void exportSequence(const Sequence3D& seq, ExportFormat format, const std::filesystem::path& path, double fps) {
  if (format == ExportFormat::Seq3d) {
    writeSeq3d(path, seq, fps);
    return;
  }
  std::ofstream out(path);
  if (!out) {
    fail(ErrorCode::Io, "cannot write " + path.string());
  }
  out << sequenceToJson(seq, fps) << '\n';
  if (!out) {
    fail(ErrorCode::Io, "failed writing " + path.string());
  }
}

std::map<std::string, std::string> readKeyValueFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    fail(ErrorCode::Io, "cannot open " + path.string());
  }
  std::map<std::string, std::string> values;
  std::string line;
  int lineNo = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
      return std::string{};
    }
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineNo;
    if (const auto hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::ParseError, path.string() + ":" + std::to_string(lineNo) + ": expected key=value");
    }
    values[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return values;
}

void writeKeyValueFile(const std::filesystem::path& path, const std::map<std::string, std::string>& values) {
  std::ofstream out(path);
  if (!out) {
    fail(ErrorCode::Io, "cannot write " + path.string());
  }
  for (const auto& [k, v] : values) {
    out << k << " = " << v << '\n';
  }
  if (!out) {
    fail(ErrorCode::Io, "failed writing " + path.string());
  }
}

} // namespace canonet::io
