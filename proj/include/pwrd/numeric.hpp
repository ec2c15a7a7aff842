#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace pwrd {

// Round-trip exact text form of a double (17 significant digits).
std::string format_double(double value);

// Strict parse of a decimal floating point field; throws Error(validation).
double parse_double(std::string_view text, std::string_view what);
long long parse_int(std::string_view text, std::string_view what);

// Student-t distribution helpers. An infinite df selects the standard normal.
double t_cdf(double t, double df);
double t_quantile(double p, double df);

double normal_cdf(double x);

// 64-bit FNV-1a, used for input checksums in run manifests.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

}  // namespace pwrd
