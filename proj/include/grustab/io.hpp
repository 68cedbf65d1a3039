#pragma once

#include <string>

#include "grustab/numerics.hpp"

#include "json.hpp"

namespace grustab {

// Shortest decimal representation that round-trips the exact double value.
std::string format_double(double v);

nlohmann::ordered_json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);
nlohmann::ordered_json vector_to_json(const Vector& v);
Vector vector_from_json(const nlohmann::json& j);

std::string read_file(const std::string& path);
// Writes via a temp file in the same directory, then renames into place.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace grustab
