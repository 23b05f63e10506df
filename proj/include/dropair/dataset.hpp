#pragma once

#include "dropair/core.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace dropair {

/// Labeled feature rows.
struct Dataset {
  Matrix features;  // n x D
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  Eigen::Index dim() const { return features.cols(); }

  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset d;
    d.features.resize(static_cast<Eigen::Index>(idx.size()), features.cols());
    d.labels.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      d.features.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(idx[r]));
      d.labels.push_back(labels[idx[r]]);
    }
    return d;
  }
};

namespace detail {

inline double parse_double(std::string_view field, std::size_t line) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) field.remove_suffix(1);
  double v = 0.0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (field.empty() || ec != std::errc() || ptr != end || !std::isfinite(v))
    throw Error(ErrorKind::parse, "line " + std::to_string(line) + ": '" + std::string(field) + "' is not a number");
  return v;
}

}  // namespace detail

/// Parses rows "label,x1,...,xD". Labels must be non-negative integers and
/// every row must have the same width.
inline Dataset parse_dataset(std::istream& in) {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw Error(ErrorKind::parse, "line " + std::to_string(lineno) + ": empty row");
    std::vector<double> fields;
    std::size_t start = 0;
    while (true) {
      const auto comma = line.find(',', start);
      fields.push_back(detail::parse_double(std::string_view(line).substr(start, comma - start), lineno));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (fields.size() < 2) throw Error(ErrorKind::parse, "line " + std::to_string(lineno) + ": no feature columns");
    if (width == 0) width = fields.size();
    if (fields.size() != width)
      throw Error(ErrorKind::parse, "line " + std::to_string(lineno) + ": expected " + std::to_string(width) +
                                        " fields, found " + std::to_string(fields.size()));
    const double label = fields.front();
    if (label < 0 || label != std::floor(label))
      throw Error(ErrorKind::parse, "line " + std::to_string(lineno) + ": label must be a non-negative integer");
    labels.push_back(static_cast<int>(label));
    fields.erase(fields.begin());
    rows.push_back(std::move(fields));
  }
  if (rows.empty()) throw Error(ErrorKind::parse, "line 1: empty file");
  Dataset d;
  d.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width - 1));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c + 1 < width; ++c) d.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  d.labels = std::move(labels);
  return d;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::parse, "cannot open '" + path + "'");
  return parse_dataset(in);
}

/// Gaussian clusters around class means drawn uniformly on the unit sphere.
inline Dataset gen_synthetic(int classes, int per_class, int dim, double spread, std::uint64_t seed) {
  if (classes < 2) throw Error(ErrorKind::configuration, "need at least 2 classes");
  if (per_class < 1 || dim < 1) throw Error(ErrorKind::configuration, "per_class and dim must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix means(classes, dim);
  for (int c = 0; c < classes; ++c) {
    for (int k = 0; k < dim; ++k) means(c, k) = gauss(rng);
    means.row(c).normalize();
  }
  Dataset d;
  d.features.resize(static_cast<Eigen::Index>(classes) * per_class, dim);
  d.labels.reserve(static_cast<std::size_t>(classes) * per_class);
  Eigen::Index r = 0;
  for (int c = 0; c < classes; ++c) {
    for (int t = 0; t < per_class; ++t, ++r) {
      for (int k = 0; k < dim; ++k) d.features(r, k) = means(c, k) + spread * gauss(rng);
      d.labels.push_back(c);
    }
  }
  return d;
}

}  // namespace dropair
