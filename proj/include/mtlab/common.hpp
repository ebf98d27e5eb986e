// Shared plumbing: error type, deterministic RNG helpers, small string utils.
#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtlab {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void msg_append(std::ostringstream&) {}

template <typename T, typename... Rest>
void msg_append(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  msg_append(os, rest...);
}

}  // namespace detail

template <typename... Args>
std::string msg(const Args&... args) {
  std::ostringstream os;
  detail::msg_append(os, args...);
  return os.str();
}

template <typename... Args>
[[noreturn]] void fail(const Args&... args) {
  throw Error(msg(args...));
}

// mt19937 is fully specified by the standard; the std distributions are not,
// so draws are derived from raw engine output to keep results identical
// across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(static_cast<uint32_t>(seed ^ (seed >> 32))) {}

  uint32_t next_u32() { return engine_(); }

  uint64_t next_u64() {
    uint64_t hi = engine_();
    return (hi << 32) | engine_();
  }

  // uniform in [0, n)
  uint32_t below(uint32_t n) { return n ? next_u32() % n : 0; }

  // uniform in [0, 1), 53-bit resolution
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + uniform01() * (hi - lo); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = below(static_cast<uint32_t>(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937 engine_;
};

inline std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string join(const std::vector<std::string>& tokens, const std::string& sep = " ") {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

}  // namespace mtlab
