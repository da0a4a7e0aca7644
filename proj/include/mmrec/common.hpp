#ifndef MMREC_COMMON_HPP
#define MMREC_COMMON_HPP

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#define MMREC_VERSION "0.1.0"

namespace mmrec {

// Thrown for bad user input (files, configs, flag values). CLI maps it to exit code 1;
// everything else that escapes is a runtime error (exit code 2).
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

inline uint64_t splitmix64_mix(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Stream derivation: adding a new consumer label never perturbs existing streams.
inline uint64_t hash64(uint64_t seed, std::string_view label) {
  return splitmix64_mix(seed ^ fnv1a64(label));
}

// Shortest round-trip decimal form; locale-independent, stable across reruns.
inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string fmt_float(float v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string read_text_file(const std::filesystem::path& p);
void write_text_file(const std::filesystem::path& p, std::string_view content);
// FNV-1a over the raw bytes of every regular file under `dir` (sorted relative
// paths), used for dataset/config identity in run manifests.
uint64_t hash_directory(const std::filesystem::path& dir);
uint64_t hash_file(const std::filesystem::path& p);

}  // namespace mmrec

#endif
