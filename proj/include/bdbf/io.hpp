#pragma once

#include <array>
#include <bit>
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bdbf/basis.hpp"
#include "bdbf/calibration.hpp"
#include "bdbf/common.hpp"
#include "bdbf/fitting.hpp"
#include "bdbf/metrics.hpp"

namespace bdbf {

// CRC-32 (IEEE 802.3), used for header checksums and file fingerprints.
inline std::uint32_t crc32(const unsigned char* data, std::size_t len,
                           std::uint32_t seed = 0) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = ~seed;
  for (std::size_t i = 0; i < len; ++i) {
    crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  }
  return ~crc;
}

inline std::uint32_t crc32(const std::string& data) {
  return crc32(reinterpret_cast<const unsigned char*>(data.data()), data.size());
}

enum class BasisDtype : std::uint8_t { kF32 = 0, kF64 = 1 };

namespace detail {

inline constexpr char kBasisMagic[4] = {'B', 'D', 'B', 'F'};
inline constexpr std::uint32_t kBasisVersion = 1;
inline constexpr std::size_t kBasisHeaderBytes = 26;  // 22 fixed fields + crc32

inline void put_u32(unsigned char* p, std::uint32_t v) {
  p[0] = static_cast<unsigned char>(v & 0xFFu);
  p[1] = static_cast<unsigned char>((v >> 8) & 0xFFu);
  p[2] = static_cast<unsigned char>((v >> 16) & 0xFFu);
  p[3] = static_cast<unsigned char>((v >> 24) & 0xFFu);
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_u64(unsigned char* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) p[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

// Write file contents to <path>.tmp and rename into place, so readers never
// observe partial output.
inline void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw Error(ErrorCode::kIo, "cannot open " + tmp.string() + " for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      throw Error(ErrorCode::kIo, "short write to " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw Error(ErrorCode::kIo, "rename to " + path.string() + " failed: " + ec.message());
  }
}

inline std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kIo, "cannot open " + path.string());
  }
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

}  // namespace detail

// Serialize a basis map. Layout: magic "BDBF", u32 version, u32 H, u32 W,
// u32 M, u8 bias, u8 dtype, u32 CRC32 of the preceding 22 bytes, then the
// little-endian payload, pixel-major with channels contiguous.
inline std::string encode_basis(const BasisMap& map, BasisDtype dtype = BasisDtype::kF64) {
  const std::size_t count = map.values().size();
  const std::size_t value_bytes = dtype == BasisDtype::kF32 ? 4 : 8;
  std::string out(detail::kBasisHeaderBytes + count * value_bytes, '\0');
  auto* p = reinterpret_cast<unsigned char*>(out.data());
  std::memcpy(p, detail::kBasisMagic, 4);
  detail::put_u32(p + 4, detail::kBasisVersion);
  detail::put_u32(p + 8, static_cast<std::uint32_t>(map.height()));
  detail::put_u32(p + 12, static_cast<std::uint32_t>(map.width()));
  detail::put_u32(p + 16, static_cast<std::uint32_t>(map.num_bases()));
  p[20] = map.has_bias() ? 1 : 0;
  p[21] = static_cast<std::uint8_t>(dtype);
  detail::put_u32(p + 22, crc32(p, 22));
  unsigned char* payload = p + detail::kBasisHeaderBytes;
  for (std::size_t i = 0; i < count; ++i) {
    if (dtype == BasisDtype::kF32) {
      detail::put_u32(payload + 4 * i,
                      std::bit_cast<std::uint32_t>(static_cast<float>(map.values()[i])));
    } else {
      detail::put_u64(payload + 8 * i, std::bit_cast<std::uint64_t>(map.values()[i]));
    }
  }
  return out;
}

inline BasisMap decode_basis(const std::string& bytes) {
  if (bytes.size() < detail::kBasisHeaderBytes) {
    throw Error(ErrorCode::kTruncated, "basis file shorter than its header");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (std::memcmp(p, detail::kBasisMagic, 4) != 0) {
    throw Error(ErrorCode::kBadMagic, "not a basis file (bad magic)");
  }
  if (detail::get_u32(p + 22) != crc32(p, 22)) {
    throw Error(ErrorCode::kChecksum, "basis header checksum mismatch");
  }
  const std::uint32_t version = detail::get_u32(p + 4);
  if (version != detail::kBasisVersion) {
    throw Error(ErrorCode::kBadVersion, "unknown basis format version " +
                                            std::to_string(version));
  }
  const std::uint64_t h = detail::get_u32(p + 8);
  const std::uint64_t w = detail::get_u32(p + 12);
  const std::uint64_t m = detail::get_u32(p + 16);
  const bool bias = p[20] != 0;
  if (p[21] > 1) {
    throw Error(ErrorCode::kParse, "unknown basis dtype tag");
  }
  const auto dtype = static_cast<BasisDtype>(p[21]);
  const std::uint64_t count = h * w * m;
  const std::size_t value_bytes = dtype == BasisDtype::kF32 ? 4 : 8;
  if (bytes.size() != detail::kBasisHeaderBytes + count * value_bytes) {
    throw Error(ErrorCode::kTruncated, "basis payload length mismatch");
  }
  std::vector<double> values(count);
  const unsigned char* payload = p + detail::kBasisHeaderBytes;
  for (std::uint64_t i = 0; i < count; ++i) {
    if (dtype == BasisDtype::kF32) {
      values[i] = static_cast<double>(
          std::bit_cast<float>(detail::get_u32(payload + 4 * i)));
    } else {
      values[i] = std::bit_cast<double>(detail::get_u64(payload + 8 * i));
    }
  }
  return BasisMap(static_cast<int>(h), static_cast<int>(w), static_cast<int>(m),
                  std::move(values), bias);
}

inline void write_basis(const BasisMap& map, const std::filesystem::path& path,
                        BasisDtype dtype = BasisDtype::kF64) {
  detail::atomic_write(path, encode_basis(map, dtype));
}

inline BasisMap read_basis(const std::filesystem::path& path) {
  return decode_basis(detail::read_all(path));
}

// Sparse depth text format: one "row,col,depth" record per line, '#' starts
// a comment, blank lines ignored.
inline void write_sparse(const SparseDepthSet& sparse, const std::filesystem::path& path) {
  std::string out = "# row,col,depth\n";
  char buf[96];
  for (const auto& e : sparse.entries()) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.17g\n", e.row, e.col, e.depth);
    out += buf;
  }
  detail::atomic_write(path, out);
}

inline SparseDepthSet parse_sparse(const std::string& text) {
  std::vector<SparseDepthEntry> entries;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t eol = text.find('\n', pos);
    std::string line = text.substr(pos, eol == std::string::npos ? eol : eol - pos);
    pos = eol == std::string::npos ? text.size() + 1 : eol + 1;
    ++line_no;
    if (const std::size_t hash = line.find('#'); hash != std::string::npos) {
      line.erase(hash);
    }
    const std::size_t begin = line.find_first_not_of(" \t\r");
    if (begin == std::string::npos) continue;
    const std::size_t end = line.find_last_not_of(" \t\r");
    line = line.substr(begin, end - begin + 1);
    SparseDepthEntry e;
    char trailing = '\0';
    const int got = std::sscanf(line.c_str(), "%d ,%d ,%lf %c", &e.row, &e.col, &e.depth,
                                &trailing);
    if (got != 3) {
      throw Error(ErrorCode::kParse,
                  "sparse depth line " + std::to_string(line_no) + ": malformed record '" +
                      line + "'");
    }
    entries.push_back(e);
  }
  return SparseDepthSet(std::move(entries));
}

inline SparseDepthSet read_sparse(const std::filesystem::path& path) {
  return parse_sparse(detail::read_all(path));
}

// Prior JSON: m0 and row-major sigma0, sizes keyed by num_bases. The SPD
// invariant is re-validated on read.
inline void write_prior(const GaussianPrior& prior, const std::filesystem::path& path) {
  nlohmann::json j;
  j["num_bases"] = prior.num_bases();
  j["m0"] = std::vector<double>(prior.mean.data(), prior.mean.data() + prior.mean.size());
  std::vector<double> cov;
  cov.reserve(static_cast<std::size_t>(prior.cov.size()));
  for (Eigen::Index r = 0; r < prior.cov.rows(); ++r) {
    for (Eigen::Index c = 0; c < prior.cov.cols(); ++c) cov.push_back(prior.cov(r, c));
  }
  j["sigma0"] = cov;
  detail::atomic_write(path, j.dump(2) + "\n");
}

inline GaussianPrior parse_prior(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("prior JSON: ") + e.what());
  }
  if (!j.contains("num_bases") || !j.contains("m0") || !j.contains("sigma0")) {
    throw Error(ErrorCode::kParse, "prior JSON: missing num_bases/m0/sigma0");
  }
  const auto m = j["num_bases"].get<Eigen::Index>();
  const auto mean = j["m0"].get<std::vector<double>>();
  const auto cov = j["sigma0"].get<std::vector<double>>();
  if (m < 1 || static_cast<Eigen::Index>(mean.size()) != m ||
      static_cast<Eigen::Index>(cov.size()) != m * m) {
    throw Error(ErrorCode::kParse, "prior JSON: inconsistent array sizes");
  }
  GaussianPrior prior;
  prior.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), m);
  prior.cov.resize(m, m);
  for (Eigen::Index r = 0; r < m; ++r) {
    for (Eigen::Index c = 0; c < m; ++c) prior.cov(r, c) = cov[r * m + c];
  }
  validate_prior(prior);
  return prior;
}

inline GaussianPrior read_prior(const std::filesystem::path& path) {
  return parse_prior(detail::read_all(path));
}

// Calibration JSON: the recorded mean NEES and the pixel counts behind it.
inline void write_calibration(const CalibrationState& state,
                              const std::filesystem::path& path) {
  nlohmann::json j;
  j["mean_nees"] = state.mean_nees;
  j["n_pixels"] = state.n_pixels;
  j["n_skipped"] = state.n_skipped;
  detail::atomic_write(path, j.dump(2) + "\n");
}

inline CalibrationState read_calibration(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_all(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("calibration JSON: ") + e.what());
  }
  if (!j.contains("mean_nees") || !j.contains("n_pixels")) {
    throw Error(ErrorCode::kParse, "calibration JSON: missing mean_nees/n_pixels");
  }
  CalibrationState state;
  state.mean_nees = j["mean_nees"].get<double>();
  state.n_pixels = j["n_pixels"].get<long>();
  state.n_skipped = j.value("n_skipped", 0L);
  if (state.n_pixels <= 0 || !(state.mean_nees > 0.0)) {
    throw Error(ErrorCode::kParse, "calibration JSON: invalid state");
  }
  return state;
}

// Two-column CSV for external plotting.
inline void write_curve_csv(const CurveData& curve, const std::string& abscissa_name,
                            const std::string& ordinate_name,
                            const std::filesystem::path& path) {
  std::string out = abscissa_name + "," + ordinate_name + "\n";
  char buf[80];
  for (std::size_t i = 0; i < curve.abscissa.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", curve.abscissa[i], curve.ordinate[i]);
    out += buf;
  }
  detail::atomic_write(path, out);
}

inline void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  detail::atomic_write(path, j.dump(2) + "\n");
}

}  // namespace bdbf
