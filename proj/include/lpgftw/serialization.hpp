#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lpgftw/common.hpp"

namespace lpgftw {

nlohmann::json vector_to_json(const Vector& v);
Vector vector_from_json(const nlohmann::json& j);
/// Nested row arrays.
nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

/// {"rows", "cols", "data"} with data = base64 of row-major little-endian float64.
nlohmann::json matrix_to_blob(const Matrix& m);
Matrix matrix_from_blob(const nlohmann::json& j);

void reject_unknown_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                         const std::string& where);

/// Writes through a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

/// 16-hex-digit FNV-1a digest of a string; stable across platforms.
std::string content_hash(std::string_view text);

}  // namespace lpgftw
