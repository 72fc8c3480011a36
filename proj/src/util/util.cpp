#include "repolab/util/error.hpp"
#include "repolab/util/hash.hpp"

#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace repolab {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonScalarSeed: return "NonScalarSeed";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::TokenOutOfRange: return "TokenOutOfRange";
    case ErrorKind::SequenceTooLong: return "SequenceTooLong";
    case ErrorKind::SpecTooLarge: return "SpecTooLarge";
    case ErrorKind::InfeasibleTemplate: return "InfeasibleTemplate";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::InvariantViolation: return "InvariantViolation";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::SubsetTooLarge: return "SubsetTooLarge";
    case ErrorKind::EmptyForgetSet: return "EmptyForgetSet";
    case ErrorKind::AllDegenerate: return "AllDegenerate";
    case ErrorKind::InvalidLayer: return "InvalidLayer";
    case ErrorKind::InvalidTarget: return "InvalidTarget";
    case ErrorKind::VocabMismatch: return "VocabMismatch";
    case ErrorKind::DegenerateClasses: return "DegenerateClasses";
    case ErrorKind::ConfigMismatch: return "ConfigMismatch";
    case ErrorKind::KTooLarge: return "KTooLarge";
    case ErrorKind::EmptyPositions: return "EmptyPositions";
    case ErrorKind::EmptyPromptSet: return "EmptyPromptSet";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::MissingReference: return "MissingReference";
    case ErrorKind::UnknownCommand: return "UnknownCommand";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::UnsupportedArtifact: return "UnsupportedArtifact";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &length, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::IoError, "sha256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(length * 2);
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoError, "short write to " + path.string());
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file(path)); }

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), end);
}

double parse_double(std::string_view text) {
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(ErrorKind::ParseError, "not a number: '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace repolab
