#pragma once

#include <charconv>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

namespace spoilcal::text {

// Shortest representation that parses back to the same double, always with
// a decimal point or exponent; "nan" for NaN.
inline std::string fmt_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    std::string out(buf, res.ptr);
    if (std::isfinite(v) && out.find_first_of(".e") == std::string::npos) out += ".0";
    return out;
}

// Fixed number of significant figures, e.g. 0.26190 -> "0.262" at 3.
inline std::string fmt_sig(double v, int digits) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, digits);
    return std::string(buf, res.ptr);
}

inline std::vector<std::string> split(std::string_view line, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = line.find(sep, start);
        out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

// Strict full-string parse; NaN accepted as "nan".
inline bool parse_double(std::string_view s, double& out) {
    if (s == "nan" || s == "NaN") {
        out = std::nan("");
        return true;
    }
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

} // namespace spoilcal::text
