#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace slingshot {

// One logged training step. Missing optionals are written as JSON null and
// mark undefined quantities (zero-norm reference, off-cadence sharpness).
struct MetricRecord {
  std::uint64_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double last_layer_norm = 0.0;
  std::vector<std::optional<double>> feature_change;
  std::optional<double> sharpness;
  std::optional<double> cos_dist_repr;
  std::optional<double> cos_dist_clf;
};

// Exact key set of a metric row, in emission order.
const std::vector<std::string>& metric_record_keys();

nlohmann::ordered_json to_json(const MetricRecord& record);
// Throws FormatError naming the first missing or mistyped key.
MetricRecord metric_record_from_json(const nlohmann::json& row);

// Compact single-line form with round-trip (17 significant digit) doubles.
std::string to_ndjson_line(const MetricRecord& record);

enum class LogRowKind { header, metrics, event, malformed };

struct ParsedLog {
  std::optional<nlohmann::json> header;
  std::vector<MetricRecord> records;
  std::vector<nlohmann::json> events;
  std::size_t malformed_rows = 0;
};

// Rows that are not valid JSON objects are counted and skipped; a metric row
// lacking a schema key raises FormatError.
ParsedLog parse_metric_log(std::istream& in);

}  // namespace slingshot
