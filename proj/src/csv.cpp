#include "deari/csv.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace deari {

namespace {

constexpr real kMissing = std::numeric_limits<real>::quiet_NaN();

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    // trim whitespace and stray CR
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

real parse_value(const std::string& path, int64_t line, const std::string& cell) {
  if (cell.empty()) return kMissing;
  try {
    size_t pos = 0;
    const real v = static_cast<real>(std::stod(cell, &pos));
    if (pos != cell.size()) throw std::invalid_argument(cell);
    return v;
  } catch (const std::exception&) {
    throw CsvError(path, line, "not a number: '" + cell + "'");
  }
}

struct EntityRows {
  // one row per time step: (timestamp, per-feature value with NaN missing)
  std::vector<std::pair<real, std::vector<real>>> rows;
};

SeriesBatch windows_from_entities(const std::map<std::string, EntityRows>& entities,
                                  const std::vector<std::string>& features, int64_t window) {
  if (window <= 0) throw std::invalid_argument("ingest_csv: window must be positive");
  const int64_t d = static_cast<int64_t>(features.size());
  int64_t total_windows = 0;
  for (const auto& [name, e] : entities) {
    total_windows += (static_cast<int64_t>(e.rows.size()) + window - 1) / window;
  }
  Array raw({total_windows, window, d}, kMissing);
  Array stamps({total_windows, window});
  int64_t w = 0;
  for (const auto& [name, e] : entities) {
    auto rows = e.rows;
    std::stable_sort(rows.begin(), rows.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    const int64_t n = static_cast<int64_t>(rows.size());
    for (int64_t start = 0; start < n; start += window, ++w) {
      for (int64_t i = 0; i < window; ++i) {
        const int64_t r = start + i;
        if (r < n) {
          stamps.at(w, i) = rows[static_cast<size_t>(r)].first;
          for (int64_t di = 0; di < d; ++di) {
            raw.at(w, i, di) = rows[static_cast<size_t>(r)].second[static_cast<size_t>(di)];
          }
        } else {
          // padded tail: fully missing, unit gaps past the last real stamp
          stamps.at(w, i) = (i > 0 ? stamps.at(w, i - 1) : real(0)) + 1;
        }
      }
    }
  }
  return make_batch(raw, stamps, features);
}

}  // namespace

SeriesBatch ingest_csv(const std::string& path, const IngestSpec& spec) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open csv: " + path);
  std::string line;
  int64_t lineno = 0;
  if (!std::getline(in, line)) throw CsvError(path, 1, "missing header row");
  ++lineno;
  const std::vector<std::string> header = split_line(line);

  std::map<std::string, EntityRows> entities;
  std::vector<std::string> features;

  if (spec.format == CsvFormat::long_form) {
    const std::vector<std::string> expected = {"entity_id", "timestamp", "feature", "value"};
    if (header != expected) {
      throw CsvError(path, 1, "unknown columns; expected entity_id,timestamp,feature,value");
    }
    // (entity, timestamp) -> feature -> value; feature set discovered unless declared
    std::map<std::string, std::map<real, std::map<std::string, real>>> cells;
    std::map<std::string, int64_t> feature_index;
    for (const auto& f : spec.features) {
      feature_index.emplace(f, static_cast<int64_t>(feature_index.size()));
    }
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto cols = split_line(line);
      if (cols.size() != 4) {
        throw CsvError(path, lineno, "expected 4 fields, got " + std::to_string(cols.size()));
      }
      if (cols[0].empty()) throw CsvError(path, lineno, "empty entity_id");
      if (cols[2].empty()) throw CsvError(path, lineno, "empty feature name");
      const real ts = parse_value(path, lineno, cols[1]);
      if (std::isnan(ts)) throw CsvError(path, lineno, "missing timestamp");
      if (!spec.features.empty() && feature_index.find(cols[2]) == feature_index.end()) {
        throw CsvError(path, lineno, "unknown feature: '" + cols[2] + "'");
      }
      feature_index.emplace(cols[2], static_cast<int64_t>(feature_index.size()));
      cells[cols[0]][ts][cols[2]] = parse_value(path, lineno, cols[3]);
    }
    features.resize(feature_index.size());
    if (!spec.features.empty()) {
      features = spec.features;
    } else {
      for (const auto& [f, idx] : feature_index) features[static_cast<size_t>(idx)] = f;
    }
    std::map<std::string, int64_t> order;
    for (size_t i = 0; i < features.size(); ++i) order[features[i]] = static_cast<int64_t>(i);
    for (const auto& [entity, by_ts] : cells) {
      EntityRows rows;
      for (const auto& [ts, by_feature] : by_ts) {
        std::vector<real> row(features.size(), kMissing);
        for (const auto& [f, v] : by_feature) row[static_cast<size_t>(order.at(f))] = v;
        rows.rows.emplace_back(ts, std::move(row));
      }
      entities[entity] = std::move(rows);
    }
  } else {
    if (header.size() < 3 || header[0] != "entity_id" || header[1] != "timestamp") {
      throw CsvError(path, 1, "unknown columns; expected entity_id,timestamp,<features...>");
    }
    features.assign(header.begin() + 2, header.end());
    if (!spec.features.empty() && spec.features != features) {
      throw CsvError(path, 1, "unknown columns; header features do not match the declared set");
    }
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto cols = split_line(line);
      if (cols.size() != header.size()) {
        throw CsvError(path, lineno, "expected " + std::to_string(header.size()) +
                                         " fields, got " + std::to_string(cols.size()));
      }
      if (cols[0].empty()) throw CsvError(path, lineno, "empty entity_id");
      const real ts = parse_value(path, lineno, cols[1]);
      if (std::isnan(ts)) throw CsvError(path, lineno, "missing timestamp");
      std::vector<real> row(features.size(), kMissing);
      for (size_t i = 0; i < features.size(); ++i) row[i] = parse_value(path, lineno, cols[i + 2]);
      entities[cols[0]].rows.emplace_back(ts, std::move(row));
    }
  }
  if (entities.empty()) throw CsvError(path, lineno, "no data rows");
  return windows_from_entities(entities, features, spec.window);
}

}  // namespace deari
