#pragma once

// Run manifests: a JSON record of what produced an output (command, spec,
// input hashes, seed, version, final criterion, check summary) so runs can be
// audited and reproduced. In deterministic mode the wall-clock field is
// zeroed so repeated runs produce byte-identical artifacts.

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "version.hpp"

namespace odsel {

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

inline std::string hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file for hashing: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return hex64(fnv1a64(ss.str()));
}

struct RunManifest {
  std::string command;
  std::string spec_path;
  std::map<std::string, std::string> input_hash;  // path -> fnv1a64 hex
  std::uint64_t seed = 0;
  std::string version = kVersion;
  double wall_ms = 0;  // 0 in deterministic mode
  double final_A = 0;
  bool has_final_A = false;
  std::string check_summary;
  std::map<std::string, std::string> extra;
};

inline void write_manifest(const std::string& path, const RunManifest& m) {
  nlohmann::ordered_json j;
  j["command"] = m.command;
  j["spec"] = m.spec_path;
  j["inputs"] = m.input_hash;
  j["seed"] = m.seed;
  j["version"] = m.version;
  j["wall_ms"] = m.wall_ms;
  if (m.has_final_A) j["final_A"] = m.final_A;
  j["checks"] = m.check_summary;
  for (const auto& [k, v] : m.extra) j[k] = v;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

inline RunManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  nlohmann::json j;
  in >> j;
  RunManifest m;
  m.command = j.value("command", "");
  m.spec_path = j.value("spec", "");
  if (j.contains("inputs"))
    for (auto it = j["inputs"].begin(); it != j["inputs"].end(); ++it)
      m.input_hash[it.key()] = it.value().get<std::string>();
  m.seed = j.value("seed", std::uint64_t(0));
  m.version = j.value("version", "");
  m.wall_ms = j.value("wall_ms", 0.0);
  if (j.contains("final_A")) {
    m.final_A = j["final_A"].get<double>();
    m.has_final_A = true;
  }
  m.check_summary = j.value("checks", "");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string k = it.key();
    if (k == "command" || k == "spec" || k == "inputs" || k == "seed" ||
        k == "version" || k == "wall_ms" || k == "final_A" || k == "checks")
      continue;
    if (it.value().is_string()) m.extra[k] = it.value().get<std::string>();
  }
  return m;
}

}  // namespace odsel
