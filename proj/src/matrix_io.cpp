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

#include "spa/matrix_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "json.hpp"

#include "spa/error.hpp"

namespace spa {

namespace {

using nlohmann::json;

[[noreturn]] void bad_number(std::string_view text) {
  throw Error(ErrorCode::kInvalidConfig, "not a number: '" + std::string(text) + "'");
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

json entry_to_json(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

double entry_from_json(const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return parse_double(j.get<std::string>());
  throw Error(ErrorCode::kInvalidConfig, "matrix entry is neither a number nor a string");
}

}  // namespace

OutputFormat parse_output_format(std::string_view text) {
  if (text == "csv") return OutputFormat::kCsv;
  if (text == "json") return OutputFormat::kJson;
  throw Error(ErrorCode::kInvalidConfig, "format must be csv or json, got '" + std::string(text) + "'");
}

std::string_view extension(OutputFormat format) { return format == OutputFormat::kCsv ? ".csv" : ".json"; }

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
  text = trim(text);
  if (text == "inf" || text == "+inf" || text == "Inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf" || text == "-Inf") return -std::numeric_limits<double>::infinity();
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size()) bad_number(text);
  return value;
}

std::string matrix_to_csv(const Matrix& m) {
  std::string out;
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out += ',';
      out += format_double(m(i, j));
    }
    out += '\n';
  }
  return out;
}

Matrix matrix_from_csv(std::string_view text) {
  std::vector<std::vector<double>> rows;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = trim(text.substr(0, eol));
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    if (line.empty()) continue;
    std::vector<double>& row = rows.emplace_back();
    while (true) {
      const auto comma = line.find(',');
      row.push_back(parse_double(line.substr(0, comma)));
      if (comma == std::string_view::npos) break;
      line = line.substr(comma + 1);
    }
  }
  if (rows.empty()) throw Error(ErrorCode::kDimensionMismatch, "empty matrix file");
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (Index i = 0; i < m.rows(); ++i) {
    if (static_cast<Index>(rows[i].size()) != m.cols())
      throw Error(ErrorCode::kDimensionMismatch, "ragged matrix rows");
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

std::string matrix_to_json(const Matrix& m) {
  json data = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(entry_to_json(m(i, j)));
    data.push_back(std::move(row));
  }
  json doc = {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
  return doc.dump() + "\n";
}

Matrix matrix_from_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("malformed matrix json: ") + e.what());
  }
  const Index rows = doc.at("rows").get<Index>();
  const Index cols = doc.at("cols").get<Index>();
  const json& data = doc.at("data");
  if (rows < 1 || cols < 1 || static_cast<Index>(data.size()) != rows)
    throw Error(ErrorCode::kDimensionMismatch, "matrix json shape does not match its data");
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    if (static_cast<Index>(data[i].size()) != cols)
      throw Error(ErrorCode::kDimensionMismatch, "ragged matrix rows");
    for (Index j = 0; j < cols; ++j) m(i, j) = entry_from_json(data[i][j]);
  }
  return m;
}

void write_matrix(const std::filesystem::path& path, const Matrix& m, OutputFormat format) {
  write_text(path, format == OutputFormat::kCsv ? matrix_to_csv(m) : matrix_to_json(m));
}

Matrix read_matrix(const std::filesystem::path& path, OutputFormat format) {
  const std::string text = read_text(path);
  return format == OutputFormat::kCsv ? matrix_from_csv(text) : matrix_from_json(text);
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorCode::kInvalidConfig, "cannot write " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kInvalidConfig, "cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace spa
