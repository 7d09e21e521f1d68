#pragma once

// Dataset manifest: a UTF-8 text file, first line "# dllrnn manifest v1",
// second line the tab-separated column names, then one example per line:
//
//   id  mixture  direct  length  width  height  absorption  snr_db  noise_sources  seed
//
// `mixture` and `direct` are paths relative to the manifest's directory
// (C-channel 32-bit float WAVs). Reals are printed with 17 significant digits.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dllrnn/config.hpp"
#include "dllrnn/errors.hpp"

namespace dllrnn {

inline constexpr const char* kManifestMagic = "# dllrnn manifest v1";
inline constexpr const char* kManifestColumns =
    "id\tmixture\tdirect\tlength\twidth\theight\tabsorption\tsnr_db\tnoise_sources\tseed";

struct ManifestEntry {
  std::string id;
  std::string mixture;
  std::string direct;
  double length = 0, width = 0, height = 0, absorption = 0;
  double snr_db = 0;
  std::size_t noise_sources = 0;
  std::uint64_t seed = 0;

  bool operator==(const ManifestEntry&) const = default;
};

struct Manifest {
  std::filesystem::path root;  // directory the entry paths are relative to
  std::vector<ManifestEntry> entries;

  std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
};

inline std::string format_manifest(const std::vector<ManifestEntry>& entries) {
  std::string out = std::string(kManifestMagic) + "\n" + kManifestColumns + "\n";
  for (const auto& e : entries) {
    out += e.id + "\t" + e.mixture + "\t" + e.direct + "\t" + detail::format_real(e.length) + "\t" +
           detail::format_real(e.width) + "\t" + detail::format_real(e.height) + "\t" +
           detail::format_real(e.absorption) + "\t" + detail::format_real(e.snr_db) + "\t" +
           std::to_string(e.noise_sources) + "\t" + std::to_string(e.seed) + "\n";
  }
  return out;
}

inline std::vector<ManifestEntry> parse_manifest(const std::string& text, const std::string& source = "<manifest>") {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) -> void {
    throw ParseError(source + ":" + std::to_string(lineno) + ": " + what);
  };
  std::vector<ManifestEntry> entries;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (line != kManifestMagic) fail("missing '" + std::string(kManifestMagic) + "' header");
      continue;
    }
    if (lineno == 2) {
      if (line != kManifestColumns) fail("unexpected column header");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (cols.size() != 10) fail("expected 10 tab-separated fields, found " + std::to_string(cols.size()));
    ManifestEntry e;
    try {
      e.id = cols[0];
      e.mixture = cols[1];
      e.direct = cols[2];
      e.length = detail::parse_real("length", cols[3]);
      e.width = detail::parse_real("width", cols[4]);
      e.height = detail::parse_real("height", cols[5]);
      e.absorption = detail::parse_real("absorption", cols[6]);
      e.snr_db = detail::parse_real("snr_db", cols[7]);
      e.noise_sources = detail::parse_uint("noise_sources", cols[8]);
      e.seed = detail::parse_uint("seed", cols[9]);
    } catch (const ConfigError& err) {
      fail(err.what());
    }
    entries.push_back(std::move(e));
  }
  if (lineno < 2) fail("truncated manifest header");
  return entries;
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return {std::filesystem::path(path).parent_path(), parse_manifest(ss.str(), path)};
}

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write manifest '" + path + "'");
  out << format_manifest(entries);
  if (!out) throw ConfigError("short write to manifest '" + path + "'");
}

}  // namespace dllrnn
