#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "relux/net.hpp"

namespace relux {

/// Hexadecimal float64 text, e.g. "0x1.5bf0a8b145769p+1" or "-0x0p+0".
/// Round trips are bit-exact for every finite double.
std::string format_hex(double value);

/// Parses one token produced by format_hex (or any C99 hex-float literal).
/// Rejects decimal notation, trailing characters and non-finite values.
double parse_hex(std::string_view token);

/// Splits on ASCII whitespace and parses every token with parse_hex.
std::vector<double> parse_hex_list(std::string_view line);

std::string format_hex_list(const Vector& v);

/// Model text format:
///   relu2 v1 d=<d> h=<h> k=<K>
///   h lines of d values (rows of a0), 1 line of h values (b0),
///   K lines of h values (rows of a1), 1 line of K values (b1).
std::string serialize(const TwoLayerNet& net);
TwoLayerNet deserialize(std::string_view blob);

void save_model(const TwoLayerNet& net, const std::filesystem::path& path);
TwoLayerNet load_model(const std::filesystem::path& path);

}  // namespace relux
