#include "caleido/numeric.hpp"

#include <cfenv>
#include <cmath>
#include <cstdio>

namespace caleido {

double round_half_even(double value, int decimals) {
  const long double scale = std::pow(10.0L, decimals);
  const long double scaled = static_cast<long double>(value) * scale;
  const int previous = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const long double rounded = std::nearbyint(scaled);
  std::fesetround(previous);
  return static_cast<double>(rounded / scale);
}

std::string format_fixed(double value, int decimals) {
  double r = round_half_even(value, decimals);
  if (r == 0) r = 0;  // no "-0.0"
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, r);
  return buf;
}

}  // namespace caleido
