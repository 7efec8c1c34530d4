#pragma once

#include <string>

namespace caleido {

/// Round to `decimals` places, ties to even.
double round_half_even(double value, int decimals);

/// round_half_even, then fixed notation with exactly `decimals` places.
std::string format_fixed(double value, int decimals);

}  // namespace caleido
