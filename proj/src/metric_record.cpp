#include "slingshot/metric_record.hpp"

#include <cmath>
#include <istream>
#include <limits>

#include "slingshot/errors.hpp"

namespace slingshot {

namespace {

nlohmann::ordered_json number_or_null(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

nlohmann::ordered_json optional_or_null(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return nullptr;
  return *v;
}

const nlohmann::json& require(const nlohmann::json& row, const std::string& key) {
  auto it = row.find(key);
  if (it == row.end()) throw FormatError("metric row is missing field '" + key + "'");
  return *it;
}

double real_field(const nlohmann::json& row, const std::string& key) {
  const auto& v = require(row, key);
  if (v.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!v.is_number()) throw FormatError("metric field '" + key + "' is not a number");
  return v.get<double>();
}

std::optional<double> optional_field(const nlohmann::json& row, const std::string& key) {
  const auto& v = require(row, key);
  if (v.is_null()) return std::nullopt;
  if (!v.is_number()) throw FormatError("metric field '" + key + "' is not a number or null");
  return v.get<double>();
}

}  // namespace

const std::vector<std::string>& metric_record_keys() {
  static const std::vector<std::string> keys = {
      "step",         "lr",        "train_loss",    "train_acc",   "val_loss",     "val_acc",
      "last_layer_norm", "feature_change", "sharpness", "cos_dist_repr", "cos_dist_clf",
  };
  return keys;
}

nlohmann::ordered_json to_json(const MetricRecord& r) {
  nlohmann::ordered_json row;
  row["step"] = r.step;
  row["lr"] = number_or_null(r.lr);
  row["train_loss"] = number_or_null(r.train_loss);
  row["train_acc"] = number_or_null(r.train_acc);
  row["val_loss"] = number_or_null(r.val_loss);
  row["val_acc"] = number_or_null(r.val_acc);
  row["last_layer_norm"] = number_or_null(r.last_layer_norm);
  auto changes = nlohmann::ordered_json::array();
  for (const auto& c : r.feature_change) changes.push_back(optional_or_null(c));
  row["feature_change"] = std::move(changes);
  row["sharpness"] = optional_or_null(r.sharpness);
  row["cos_dist_repr"] = optional_or_null(r.cos_dist_repr);
  row["cos_dist_clf"] = optional_or_null(r.cos_dist_clf);
  return row;
}

MetricRecord metric_record_from_json(const nlohmann::json& row) {
  MetricRecord r;
  const auto& step = require(row, "step");
  if (!step.is_number_integer()) throw FormatError("metric field 'step' is not an integer");
  r.step = step.get<std::uint64_t>();
  r.lr = real_field(row, "lr");
  r.train_loss = real_field(row, "train_loss");
  r.train_acc = real_field(row, "train_acc");
  r.val_loss = real_field(row, "val_loss");
  r.val_acc = real_field(row, "val_acc");
  r.last_layer_norm = real_field(row, "last_layer_norm");
  const auto& changes = require(row, "feature_change");
  if (!changes.is_array()) throw FormatError("metric field 'feature_change' is not an array");
  for (const auto& c : changes) {
    if (c.is_null()) {
      r.feature_change.emplace_back(std::nullopt);
    } else if (c.is_number()) {
      r.feature_change.emplace_back(c.get<double>());
    } else {
      throw FormatError("metric field 'feature_change' holds a non-numeric entry");
    }
  }
  r.sharpness = optional_field(row, "sharpness");
  r.cos_dist_repr = optional_field(row, "cos_dist_repr");
  r.cos_dist_clf = optional_field(row, "cos_dist_clf");
  return r;
}

std::string to_ndjson_line(const MetricRecord& record) { return to_json(record).dump(); }

ParsedLog parse_metric_log(std::istream& in) {
  ParsedLog log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json row = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (row.is_discarded() || !row.is_object()) {
      ++log.malformed_rows;
      continue;
    }
    if (row.contains("header")) {
      log.header = row["header"];
    } else if (row.contains("event")) {
      log.events.push_back(std::move(row));
    } else {
      log.records.push_back(metric_record_from_json(row));
    }
  }
  return log;
}

}  // namespace slingshot
