/*
 * Copyright 2026 The spa-kernels Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef SPA_MATRIX_IO_HPP_
#define SPA_MATRIX_IO_HPP_

#include <filesystem>
#include <string>
#include <string_view>

#include "spa/linalg.hpp"

namespace spa {

enum class OutputFormat { kCsv, kJson };

OutputFormat parse_output_format(std::string_view text);
std::string_view extension(OutputFormat format);

/// Shortest decimal that parses back to the same double; non-finite values
/// are spelled inf, -inf and nan.
std::string format_double(double value);
/// Throws kInvalidConfig on anything that is not a complete number.
double parse_double(std::string_view text);

/// One line per row, comma-separated, no header.
std::string matrix_to_csv(const Matrix& m);
Matrix matrix_from_csv(std::string_view text);

/// {"rows": r, "cols": c, "data": [[...], ...]}; non-finite entries are strings.
std::string matrix_to_json(const Matrix& m);
Matrix matrix_from_json(std::string_view text);

void write_matrix(const std::filesystem::path& path, const Matrix& m, OutputFormat format);
Matrix read_matrix(const std::filesystem::path& path, OutputFormat format);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

}  // namespace spa

#endif  // SPA_MATRIX_IO_HPP_
