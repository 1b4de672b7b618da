#include "iovqa/strings.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>

#include "iovqa/errors.hpp"

namespace iovqa {

std::string to_shortest(double x) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

std::string format_fixed(double x, int digits) {
    if (digits < 0 || digits > 12)
        throw InvalidArgument("format_fixed: digits must be in [0,12]");
    if (!std::isfinite(x)) throw InvalidArgument("format_fixed: non-finite value");
    double scale = 1.0;
    for (int i = 0; i < digits; ++i) scale *= 10.0;
    const long long scaled = std::llround((x + std::copysign(5e-13, x)) * scale);
    const bool neg = scaled < 0;
    unsigned long long mag = neg ? -static_cast<unsigned long long>(scaled) : scaled;
    std::string frac;
    for (int i = 0; i < digits; ++i) {
        frac.push_back(static_cast<char>('0' + mag % 10));
        mag /= 10;
    }
    std::string out = neg ? "-" : "";
    out += std::to_string(mag);
    if (digits > 0) {
        out.push_back('.');
        out.append(frac.rbegin(), frac.rend());
    }
    return out;
}

}  // namespace iovqa
