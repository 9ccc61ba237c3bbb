#include "qgen/util.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace qgen {

LogLevel log_level() {
  static LogLevel lvl = [] {
    const char* env = std::getenv("QGEN_LOG");
    if (!env) return LogLevel::Warn;
    std::string v = upper_ascii(env);
    if (v == "ERROR") return LogLevel::Error;
    if (v == "WARN") return LogLevel::Warn;
    if (v == "INFO") return LogLevel::Info;
    if (v == "DEBUG") return LogLevel::Debug;
    return LogLevel::Warn;
  }();
  return lvl;
}

void log_msg(LogLevel lvl, const std::string& msg) {
  if (lvl > log_level()) return;
  static const char* names[] = {"error", "warn", "info", "debug"};
  std::cerr << "[qgen:" << names[static_cast<int>(lvl)] << "] " << msg << "\n";
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = unit();
  } while (u1 <= 0.0);
  double u2 = unit();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

size_t Rng::uniform_index(size_t n) {
  if (n == 0) fail("uniform_index over empty range");
  // rejection sampling keeps the draw unbiased
  uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<size_t>(x % n);
}

size_t Rng::pick_weighted(const std::vector<double>& w) {
  double total = 0.0;
  for (double v : w) {
    if (v < 0.0) fail("pick_weighted got a negative weight");
    total += v;
  }
  if (total <= 0.0) fail("pick_weighted got an all-zero weight vector");
  double r = unit() * total;
  double acc = 0.0;
  for (size_t i = 0; i < w.size(); ++i) {
    acc += w[i];
    if (r < acc) return i;
  }
  // floating point edge: return last nonzero weight
  for (size_t i = w.size(); i-- > 0;) {
    if (w[i] > 0.0) return i;
  }
  return w.size() - 1;
}

Bitset::Bitset(size_t n, bool value) : n_(n), words_((n + 63) / 64, 0) {
  if (value) set_all();
}

void Bitset::set_all() {
  for (auto& w : words_) w = ~uint64_t(0);
  if (n_ % 64) words_.back() &= (uint64_t(1) << (n_ % 64)) - 1;
}

void Bitset::reset_all() {
  for (auto& w : words_) w = 0;
}

size_t Bitset::count() const {
  size_t c = 0;
  for (uint64_t w : words_) c += static_cast<size_t>(__builtin_popcountll(w));
  return c;
}

bool Bitset::any() const {
  for (uint64_t w : words_)
    if (w) return true;
  return false;
}

Bitset& Bitset::operator&=(const Bitset& o) {
  if (n_ != o.n_) fail("bitset size mismatch");
  for (size_t i = 0; i < words_.size(); ++i) words_[i] &= o.words_[i];
  return *this;
}

Bitset& Bitset::operator|=(const Bitset& o) {
  if (n_ != o.n_) fail("bitset size mismatch");
  for (size_t i = 0; i < words_.size(); ++i) words_[i] |= o.words_[i];
  return *this;
}

uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string to_hex(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open file for reading: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open file for writing: " + path);
  out << content;
  if (!out) fail("write failed: " + path);
}

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string upper_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  return out;
}

bool starts_with(std::string_view s, std::string_view prefix) {
  return s.size() >= prefix.size() && s.substr(0, prefix.size()) == prefix;
}

std::vector<std::string> split_on(std::string_view s, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  for (size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace qgen
