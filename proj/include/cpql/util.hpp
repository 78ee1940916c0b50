#pragma once

#include <string>

#include <json.hpp>

namespace cpql {

using json = nlohmann::ordered_json;

/// SHA-256 of a byte string, lowercase hex.
std::string sha256_hex(const std::string& bytes);

/// Shortest text that round-trips the double exactly ("%.17g").
std::string format_double(double v);

/// Reads and parses a JSON file. Throws std::runtime_error naming the path.
json load_json_file(const std::string& path);

/// Writes text to a file, creating parent directories as needed.
void write_text_file(const std::string& path, const std::string& text);

std::string read_text_file(const std::string& path);

inline constexpr const char* kToolVersion = "pqlab 0.1.0";

}  // namespace cpql
