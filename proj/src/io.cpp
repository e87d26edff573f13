/*
 * Copyright 2026 The detcal Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "detcal/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace detcal::io {

using nlohmann::json;

namespace {

[[noreturn]] void fail(std::string_view source, const std::string& where, const std::string& what) {
  throw ParseError(std::string(source) + ": " + where + ": " + what);
}

json parse_json(std::string_view text, std::string_view source) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string(source) + ": malformed JSON: " + e.what());
  }
}

const json& require(const json& obj, const char* key, std::string_view source, const std::string& where) {
  if (!obj.is_object()) fail(source, where, "expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) fail(source, where, std::string("missing required key '") + key + "'");
  return *it;
}

double number(const json& v, std::string_view source, const std::string& where) {
  if (!v.is_number()) fail(source, where, "expected a number");
  return v.get<double>();
}

std::int64_t integer(const json& v, std::string_view source, const std::string& where) {
  if (!v.is_number_integer()) fail(source, where, "expected an integer");
  return v.get<std::int64_t>();
}

Box bbox(const json& v, std::string_view source, const std::string& where) {
  if (!v.is_array() || v.size() != 4) fail(source, where, "expected [x, y, w, h]");
  double xywh[4];
  for (std::size_t i = 0; i < 4; ++i)
    xywh[i] = number(v[i], source, where + "[" + std::to_string(i) + "]");
  if (xywh[2] < 0.0 || xywh[3] < 0.0) fail(source, where, "negative width or height");
  return Box::FromXywh(xywh[0], xywh[1], xywh[2], xywh[3]);
}

int class_id(const json& v, std::string_view source, const std::string& where) {
  const std::int64_t id = integer(v, source, where);
  if (id < 0) fail(source, where, "negative category id");
  return static_cast<int>(id);
}

}  // namespace

void DatasetBundle::validate() const {
  if (categories.empty()) return;
  for (std::size_t i = 0; i < detections.size(); ++i)
    if (!categories.contains(detections[i].class_id))
      throw ParseError("detection " + std::to_string(i) + ": category " +
                       std::to_string(detections[i].class_id) + " not in the ground-truth category map");
}

CocoGroundTruth parse_coco_gt(std::string_view text, std::string_view source) {
  const json doc = parse_json(text, source);
  CocoGroundTruth out;
  const json& anns = require(doc, "annotations", source, "$");
  if (!anns.is_array()) fail(source, "$.annotations", "expected an array");
  const json& cats = require(doc, "categories", source, "$");
  if (!cats.is_array()) fail(source, "$.categories", "expected an array");

  for (std::size_t i = 0; i < cats.size(); ++i) {
    const std::string where = "$.categories[" + std::to_string(i) + "]";
    const int id = class_id(require(cats[i], "id", source, where), source, where + ".id");
    const json& name = require(cats[i], "name", source, where);
    if (!name.is_string()) fail(source, where + ".name", "expected a string");
    out.categories[id] = name.get<std::string>();
  }

  for (std::size_t i = 0; i < anns.size(); ++i) {
    const std::string where = "$.annotations[" + std::to_string(i) + "]";
    const json& a = anns[i];
    const ImageId image = integer(require(a, "image_id", source, where), source, where + ".image_id");
    const int cls = class_id(require(a, "category_id", source, where), source, where + ".category_id");
    const Box box = bbox(require(a, "bbox", source, where), source, where + ".bbox");
    if (const auto crowd = a.find("iscrowd"); crowd != a.end() && crowd->is_number() && crowd->get<int>() == 1) {
      ++out.crowd_skipped;
      continue;
    }
    out.ground_truths.push_back({image, box, cls});
  }
  return out;
}

std::vector<Detection> parse_coco_dets(std::string_view text, std::string_view source) {
  const json doc = parse_json(text, source);
  if (!doc.is_array()) fail(source, "$", "expected an array of detections");
  std::vector<Detection> out;
  out.reserve(doc.size());
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const std::string where = "$[" + std::to_string(i) + "]";
    const json& d = doc[i];
    Detection det;
    det.image_id = integer(require(d, "image_id", source, where), source, where + ".image_id");
    det.class_id = class_id(require(d, "category_id", source, where), source, where + ".category_id");
    det.box = bbox(require(d, "bbox", source, where), source, where + ".bbox");
    det.score = number(require(d, "score", source, where), source, where + ".score");
    if (!(det.score >= 0.0 && det.score <= 1.0))
      fail(source, where + ".score", "score " + json(det.score).dump() + " of detection " +
                                         std::to_string(i) + " outside [0, 1]");
    out.push_back(det);
  }
  return out;
}

CocoGroundTruth load_coco_gt(const std::filesystem::path& path) {
  return parse_coco_gt(read_file(path), path.string());
}

std::vector<Detection> load_coco_dets(const std::filesystem::path& path) {
  return parse_coco_dets(read_file(path), path.string());
}

DatasetBundle load_bundle(const std::filesystem::path& gt_path, const std::filesystem::path& dets_path) {
  CocoGroundTruth gt = load_coco_gt(gt_path);
  DatasetBundle bundle{std::move(gt.ground_truths), load_coco_dets(dets_path), std::move(gt.categories)};
  bundle.validate();
  return bundle;
}

std::vector<ScoredSample> parse_matched_csv(std::string_view text, std::string_view source) {
  std::vector<ScoredSample> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto comma = line.find(',');
    const std::string where = "line " + std::to_string(lineno);
    if (comma == std::string::npos) fail(source, where, "expected 'score,k'");
    const std::string score_text = line.substr(0, comma);
    const std::string k_text = line.substr(comma + 1);
    double score = 0.0;
    int k = 0;
    try {
      std::size_t used = 0;
      score = std::stod(score_text, &used);
      k = std::stoi(k_text);
    } catch (const std::exception&) {
      if (lineno == 1 && out.empty()) continue;  // header
      fail(source, where, "expected 'score,k'");
    }
    if (!(score >= 0.0 && score <= 1.0)) fail(source, where, "score outside [0, 1]");
    if (k != 0 && k != 1) fail(source, where, "k must be 0 or 1");
    out.push_back({score, k == 1});
  }
  return out;
}

std::vector<ScoredSample> load_matched_csv(const std::filesystem::path& path) {
  return parse_matched_csv(read_file(path), path.string());
}

Format format_from_string(std::string_view name) {
  if (name == "json") return Format::kJson;
  if (name == "csv") return Format::kCsv;
  throw std::invalid_argument("unknown format '" + std::string(name) + "'");
}

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s(buf);
  if (s.starts_with("-") && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

// Reports

std::string report_to_json(const CalibrationReport& report) {
  json bins = json::array();
  for (const auto& b : report.bins) {
    bins.push_back({{"bin_index", b.bin_index},
                    {"lower", b.lower},
                    {"upper", b.upper},
                    {"count", b.count},
                    {"mean_confidence", b.mean_confidence},
                    {"precision_or_accuracy", b.precision_or_accuracy}});
  }
  json doc = {{"kind", std::string(to_string(report.kind))},
              {"metric_value", report.metric_value},
              {"total_samples", report.total_samples},
              {"num_bins", report.num_bins},
              {"degenerate", report.degenerate()},
              {"bins", bins}};
  return doc.dump(2) + "\n";
}

CalibrationReport report_from_json(std::string_view text) {
  const json doc = parse_json(text, "report");
  try {
    CalibrationReport r;
    r.kind = metric_kind_from_string(doc.at("kind").get<std::string>());
    r.metric_value = doc.at("metric_value").get<double>();
    r.total_samples = doc.at("total_samples").get<std::size_t>();
    r.num_bins = doc.at("num_bins").get<int>();
    for (const auto& b : doc.at("bins")) {
      r.bins.push_back({b.at("bin_index").get<int>(), b.at("lower").get<double>(), b.at("upper").get<double>(),
                        b.at("count").get<std::size_t>(), b.at("mean_confidence").get<double>(),
                        b.at("precision_or_accuracy").get<double>()});
    }
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("report: ") + e.what());
  }
}

std::string reliability_csv(const CalibrationReport& report) {
  std::string out = "bin_lower,bin_upper,count,mean_confidence,precision,gap\n";
  for (const auto& row : reliability_data(report)) {
    out += fixed6(row.bin_lower) + "," + fixed6(row.bin_upper) + "," + std::to_string(row.count) + "," +
           fixed6(row.mean_confidence) + "," + fixed6(row.precision) + "," + fixed6(row.gap) + "\n";
  }
  return out;
}

std::string summary_to_json(const toy::EvalSummary& s) {
  const auto& c = s.partition_counts_hard;
  json doc = {{"domain", std::string(toy::to_string(s.domain))},
              {"d_ece", s.d_ece},
              {"d_ece_degenerate", s.d_ece_degenerate},
              {"ap_at_05", s.ap_at_05},
              {"map_at_05", s.map_at_05},
              {"num_detections", s.num_detections},
              {"partition_counts_hard", {{"t_ac", c.t_ac}, {"t_an", c.t_an}, {"t_ic", c.t_ic}, {"t_in", c.t_in}}},
              {"pc_ratio", s.aligned_fraction()}};
  return doc.dump(2) + "\n";
}

toy::EvalSummary summary_from_json(std::string_view text) {
  const json doc = parse_json(text, "summary");
  try {
    toy::EvalSummary s;
    s.domain = toy::domain_from_string(doc.at("domain").get<std::string>());
    s.d_ece = doc.at("d_ece").get<double>();
    s.d_ece_degenerate = doc.at("d_ece_degenerate").get<bool>();
    s.ap_at_05 = doc.at("ap_at_05").get<double>();
    s.map_at_05 = doc.at("map_at_05").get<double>();
    s.num_detections = doc.at("num_detections").get<std::size_t>();
    const json& c = doc.at("partition_counts_hard");
    s.partition_counts_hard = {c.at("t_ac").get<double>(), c.at("t_an").get<double>(),
                               c.at("t_ic").get<double>(), c.at("t_in").get<double>(), CountMode::kHard};
    return s;
  } catch (const json::exception& e) {
    throw ParseError(std::string("summary: ") + e.what());
  }
}

std::string curve_csv(const std::vector<toy::EpochStats>& curve) {
  std::string out = "epoch,l_det,l_bpc,l_total\n";
  for (const auto& e : curve)
    out += std::to_string(e.epoch) + "," + fixed6(e.det) + "," + fixed6(e.bpc) + "," + fixed6(e.total) + "\n";
  return out;
}

void write_report(const CalibrationReport& report, const std::filesystem::path& path, Format format) {
  write_file(path, format == Format::kJson ? report_to_json(report) : reliability_csv(report));
}

void write_report(const toy::EvalSummary& summary, const std::filesystem::path& path, Format format) {
  if (format != Format::kJson) throw std::invalid_argument("evaluation summaries are written as JSON");
  write_file(path, summary_to_json(summary));
}

CalibrationReport read_report(const std::filesystem::path& path) { return report_from_json(read_file(path)); }

toy::EvalSummary read_summary(const std::filesystem::path& path) { return summary_from_json(read_file(path)); }

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw IoError(path.string() + ": write failed");
}

}  // namespace detcal::io
