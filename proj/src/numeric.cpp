#include "pwrd/numeric.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>

#include "pwrd/error.hpp"

namespace pwrd {

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

}  // namespace

double parse_double(std::string_view text, std::string_view what) {
  auto s = trim(text);
  if (s == "-inf" || s == "-Inf" || s == "-infinity") return -std::numeric_limits<double>::infinity();
  if (s == "inf" || s == "Inf" || s == "infinity") return std::numeric_limits<double>::infinity();
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    fail(ErrorKind::validation,
         "cannot parse '" + std::string(text) + "' as a number for " + std::string(what));
  }
  return value;
}

long long parse_int(std::string_view text, std::string_view what) {
  auto s = trim(text);
  long long value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    // Accept integral values written as floats, e.g. "3.0".
    double d = parse_double(s, what);
    if (std::floor(d) != d || std::abs(d) > 9.0e15) {
      fail(ErrorKind::validation,
           "expected an integer for " + std::string(what) + ", got '" + std::string(text) + "'");
    }
    return static_cast<long long>(d);
  }
  return value;
}

double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

double t_cdf(double t, double df) {
  if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  if (std::isinf(df)) return normal_cdf(t);
  boost::math::students_t dist(df);
  return boost::math::cdf(dist, t);
}

double t_quantile(double p, double df) {
  if (std::isinf(df)) {
    boost::math::normal dist;
    return boost::math::quantile(dist, p);
  }
  boost::math::students_t dist(df);
  return boost::math::quantile(dist, p);
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace pwrd
