#pragma once

// Directory formats built on SMST files.
//
// Parameters:  DIR/manifest.txt plus DIR/tensors/<key>.smst
//   format=smsl-params
//   version=1
//   L=<levels>  C=<channels>  r=<reduction>  seed=<u64>  dtype=f32|f64  extra=0|1
//   tensor.<key>=tensors/<key>.smst crc32=<8 hex digits>
//
// Level sets:  DIR/levels.txt plus DIR/level_<l>.smst
//   l_min=<int>  l_max=<int>  C=<channels>  dtype=f32|f64  size.<l>=<H>x<W>
//
// One key=value pair per line in both manifests.

#include <zlib.h>

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>

#include "smsl/level_set.hpp"
#include "smsl/params.hpp"
#include "smsl/smst.hpp"

namespace smsl::io {

namespace fs = std::filesystem;

inline std::uint32_t crc32(const smst::Bytes& b) {
  return static_cast<std::uint32_t>(::crc32(0L, b.data(), static_cast<uInt>(b.size())));
}

using KeyValues = std::map<std::string, std::string>;

inline KeyValues read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline const std::string& require_key(const KeyValues& kv, const std::string& key, const fs::path& where) {
  auto it = kv.find(key);
  if (it == kv.end()) throw IoError(where.string() + ": missing key '" + key + "'");
  return it->second;
}

template <typename I>
I parse_int(const std::string& s, const std::string& what) {
  I v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) throw IoError("invalid integer for " + what + ": '" + s + "'");
  return v;
}

inline DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::F32;
  if (s == "f64") return DType::F64;
  throw IoError("unknown dtype '" + s + "'");
}

template <typename T>
void save_params(const fs::path& dir, const SmslParams<T>& p) {
  validate_params(p);
  fs::create_directories(dir / "tensors");
  std::ostringstream man;
  man << "format=smsl-params\nversion=1\n"
      << "L=" << p.L << "\nC=" << p.C << "\nr=" << p.r << "\nseed=" << p.seed << "\ndtype="
      << dtype_name(dtype_of<T>()) << "\nextra=" << (p.extra ? 1 : 0) << '\n';
  for_each_param(p, [&](const std::string& key, const Tensor<T>& t) {
    const auto bytes = smst::encode(t);
    const std::string rel = "tensors/" + key + ".smst";
    smst::write_file(dir / rel, bytes);
    man << "tensor." << key << '=' << rel << " crc32=" << std::hex << std::setw(8) << std::setfill('0')
        << crc32(bytes) << std::dec << '\n';
  });
  std::ofstream out(dir / "manifest.txt", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "manifest.txt").string());
  out << man.str();
}

/// Loads and checksum-verifies a parameter directory, converting to T.
template <typename T>
SmslParams<T> load_params(const fs::path& dir) {
  const fs::path man = dir / "manifest.txt";
  const KeyValues kv = read_key_values(man);
  if (require_key(kv, "format", man) != "smsl-params") throw IoError(man.string() + ": not a params manifest");
  if (require_key(kv, "version", man) != "1") throw IoError(man.string() + ": unsupported version");
  SmslParams<T> p;
  p.L = parse_int<std::size_t>(require_key(kv, "L", man), "L");
  p.C = parse_int<std::size_t>(require_key(kv, "C", man), "C");
  p.r = parse_int<std::size_t>(require_key(kv, "r", man), "r");
  p.seed = parse_int<std::uint64_t>(require_key(kv, "seed", man), "seed");
  check_structure(p.L, p.C, p.r);
  p.sfc_local.resize(p.L);
  if (parse_int<int>(require_key(kv, "extra", man), "extra") != 0) p.extra.emplace();
  for_each_param(p, [&](const std::string& key, Tensor<T>& t) {
    const std::string& entry = require_key(kv, "tensor." + key, man);
    const auto space = entry.find(" crc32=");
    if (space == std::string::npos) throw IoError(man.string() + ": tensor." + key + " lacks crc32");
    const fs::path file = dir / entry.substr(0, space);
    const auto bytes = smst::read_file(file);
    const std::string hex = entry.substr(space + 7);
    std::uint32_t want = 0;
    auto [ptr, ec] = std::from_chars(hex.data(), hex.data() + hex.size(), want, 16);
    if (ec != std::errc{} || ptr != hex.data() + hex.size()) throw IoError("bad crc32 field for " + key);
    if (crc32(bytes) != want) throw IoError("checksum mismatch for " + file.string());
    t = smst::decode<T>(bytes);
  });
  validate_params(p);
  return p;
}

template <typename T>
void save_levels(const fs::path& dir, const LevelSet<T>& levels) {
  validate_levels(levels);
  fs::create_directories(dir);
  std::ostringstream man;
  man << "l_min=" << levels.l_min << "\nl_max=" << levels.l_max() << "\nC=" << levels.channels()
      << "\ndtype=" << dtype_name(dtype_of<T>()) << '\n';
  for (int l = levels.l_min; l <= levels.l_max(); ++l) {
    const Shape3 s = levels.at_level(l).shape3();
    man << "size." << l << '=' << s.h << 'x' << s.w << '\n';
    smst::save(dir / ("level_" + std::to_string(l) + ".smst"), levels.at_level(l));
  }
  std::ofstream out(dir / "levels.txt", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "levels.txt").string());
  out << man.str();
}

inline DType levels_dtype(const fs::path& dir) {
  const fs::path man = dir / "levels.txt";
  return parse_dtype(require_key(read_key_values(man), "dtype", man));
}

template <typename T>
LevelSet<T> load_levels(const fs::path& dir) {
  const fs::path man = dir / "levels.txt";
  const KeyValues kv = read_key_values(man);
  LevelSet<T> levels;
  levels.l_min = parse_int<int>(require_key(kv, "l_min", man), "l_min");
  const int l_max = parse_int<int>(require_key(kv, "l_max", man), "l_max");
  const auto c = parse_int<std::size_t>(require_key(kv, "C", man), "C");
  if (l_max < levels.l_min) throw IoError(man.string() + ": l_max < l_min");
  for (int l = levels.l_min; l <= l_max; ++l) {
    Tensor<T> t = smst::load<T>(dir / ("level_" + std::to_string(l) + ".smst"));
    const Shape3 s = t.shape3();
    const std::string want = require_key(kv, "size." + std::to_string(l), man);
    if (want != std::to_string(s.h) + "x" + std::to_string(s.w) || s.c != c) {
      throw IoError("level_" + std::to_string(l) + ".smst does not match levels.txt");
    }
    levels.features.push_back(std::move(t));
  }
  validate_levels(levels);
  return levels;
}

}  // namespace smsl::io
