#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <string>
#include <vector>

#include "osebm/rng.hpp"
#include "osebm/textio.hpp"

// Run provenance record written next to every command's outputs: tool version,
// a creation timestamp, a hash of the effective configuration, and hashes of
// the input files. The timestamp makes this the one output file that is not
// byte-stable across runs.

namespace osebm {

constexpr const char kToolVersion[] = "0.1.0";

inline std::string content_hash_hex(const std::string& bytes) {
  const uint64_t h = detail::fnv1a64(std::string_view(bytes));
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string utc_timestamp_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[40];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

inline void write_run_manifest(const std::string& path, const std::string& run_kind,
                               const std::string& config_text, const std::vector<std::string>& inputs,
                               const std::vector<std::string>& outputs) {
  std::string s;
  s += "run=" + run_kind + "\n";
  s += std::string("version=") + kToolVersion + "\n";
  s += "created=" + utc_timestamp_now() + "\n";
  s += "config_hash=" + content_hash_hex(config_text) + "\n";
  for (const std::string& in : inputs)
    s += "input=" + in + " hash=" + content_hash_hex(read_text_file(in)) + "\n";
  for (const std::string& out : outputs) s += "output=" + out + "\n";
  write_text_file(path, s);
}

}  // namespace osebm
