#pragma once

#include <string>
#include <vector>

#include "deari/series.hpp"

namespace deari {

/// `entity_id,timestamp,feature,value` rows vs one row per step.
enum class CsvFormat { long_form, wide };

struct IngestSpec {
  CsvFormat format = CsvFormat::wide;
  int64_t window = 24;  // steps per sample; trailing windows are padded
  /// Optional declared feature set. Long format: restricts/validates the
  /// feature column; wide format: must match the header when given.
  std::vector<std::string> features;
};

/// Thrown on malformed input; message carries the 1-based line number.
class CsvError : public std::runtime_error {
 public:
  CsvError(const std::string& path, int64_t line, const std::string& what)
      : std::runtime_error(path + ":" + std::to_string(line) + ": " + what) {}
};

/// Parse a UTF-8 CSV with header row into fixed-length windows per entity.
/// Empty fields are missing. Rows are sorted by timestamp within an entity
/// before windowing; entities are emitted in lexicographic order.
SeriesBatch ingest_csv(const std::string& path, const IngestSpec& spec);

}  // namespace deari
