#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace qgen {

struct QgError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void fail(const std::string& msg) { throw QgError(msg); }

// Log level comes from QGEN_LOG (error|warn|info|debug), default warn.
enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

LogLevel log_level();
void log_msg(LogLevel lvl, const std::string& msg);

inline void log_error(const std::string& m) { log_msg(LogLevel::Error, m); }
inline void log_warn(const std::string& m) { log_msg(LogLevel::Warn, m); }
inline void log_info(const std::string& m) { log_msg(LogLevel::Info, m); }
inline void log_debug(const std::string& m) { log_msg(LogLevel::Debug, m); }

// Deterministic rng. All randomness in the library flows through this type so
// runs with the same seed reproduce bit for bit on any platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double unit() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // standard normal, Box-Muller with cached spare
  double normal();

  // uniform in [0, n)
  size_t uniform_index(size_t n);

  // index drawn with probability w[i] / sum(w); weights must be >= 0, sum > 0
  size_t pick_weighted(const std::vector<double>& w);

  // derived stream for a subtask, keeps the parent stream untouched
  Rng fork(uint64_t salt) { return Rng(gen_() ^ (salt * 0x9e3779b97f4a7c15ull)); }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Fixed-width bit vector used for production masks and parser lookahead sets.
class Bitset {
 public:
  Bitset() = default;
  explicit Bitset(size_t n, bool value = false);

  size_t size() const { return n_; }
  bool test(size_t i) const { return (words_[i >> 6] >> (i & 63)) & 1u; }
  void set(size_t i) { words_[i >> 6] |= uint64_t(1) << (i & 63); }
  void reset(size_t i) { words_[i >> 6] &= ~(uint64_t(1) << (i & 63)); }
  void set_all();
  void reset_all();
  size_t count() const;
  bool any() const;
  bool none() const { return !any(); }

  Bitset& operator&=(const Bitset& o);
  Bitset& operator|=(const Bitset& o);
  bool operator==(const Bitset& o) const { return n_ == o.n_ && words_ == o.words_; }

 private:
  size_t n_ = 0;
  std::vector<uint64_t> words_;
};

uint64_t fnv1a64(std::string_view s);
std::string to_hex(uint64_t v);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

std::vector<std::string> split_ws(std::string_view s);
std::string trim(std::string_view s);
std::string upper_ascii(std::string_view s);
bool starts_with(std::string_view s, std::string_view prefix);

// "a b c" -> ["a","b","c"]; used for space separated sequence files
std::vector<std::string> split_on(std::string_view s, char sep);

std::string join(const std::vector<std::string>& parts, const std::string& sep);

}  // namespace qgen
