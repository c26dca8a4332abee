#pragma once

#include <string>

namespace qtewma {

// Exact textual form of a double ("%a"), parsed back bit-for-bit by from_hexfloat.
std::string to_hexfloat(double value);
double from_hexfloat(const std::string& text);

}  // namespace qtewma
