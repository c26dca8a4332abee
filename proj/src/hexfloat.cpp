#include "qtewma/hexfloat.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>

#include "qtewma/errors.hpp"

namespace qtewma {

std::string to_hexfloat(double value) {
    char buf[64];
    const int n = std::snprintf(buf, sizeof buf, "%a", value);
    return std::string(buf, static_cast<std::size_t>(n));
}

double from_hexfloat(const std::string& text) {
    errno = 0;
    char* end = nullptr;
    const double value = std::strtod(text.c_str(), &end);
    if (end == text.c_str() || *end != '\0' || errno == ERANGE) {
        throw ParseError("not a floating point literal: '" + text + "'");
    }
    return value;
}

}  // namespace qtewma
