#include "wss/evalseg/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include <json.hpp>

#include "wss/dataio/preprocess.hpp"
#include "wss/error.hpp"

namespace wss {

BinaryMask truth_mask(const SliceSample& slice) {
  if (!slice.truth_mask) throw ValidationError("slice " + slice.id() + " has no truth mask");
  return BinaryMask(slice.size, slice.size, *slice.truth_mask);
}

std::vector<EvalRecord> evaluate_cohort(const CohortInputs& inputs, Cohort cohort, double threshold,
                                        const EmptyMaskPolicy& policy) {
  if (inputs.slices == nullptr) throw ValidationError("evaluate_cohort: no slices");
  const auto& slices = *inputs.slices;
  if (inputs.gate_probabilities.size() != slices.size() || inputs.heat.size() != slices.size()) {
    throw ShapeError("evaluate_cohort: " + std::to_string(slices.size()) + " slices, " +
                     std::to_string(inputs.gate_probabilities.size()) + " gate probabilities, " +
                     std::to_string(inputs.heat.size()) + " heat maps");
  }
  std::string missing;
  std::size_t missing_count = 0;
  for (const auto& s : slices) {
    if (!s.truth_mask) {
      if (missing_count++ < 20) missing += (missing.empty() ? "" : ", ") + s.id();
    }
  }
  if (missing_count > 0) {
    throw ValidationError("evaluate_cohort: " + std::to_string(missing_count) + " slices lack truth masks: " + missing +
                          (missing_count > 20 ? ", ..." : ""));
  }
  std::vector<EvalRecord> out;
  out.reserve(slices.size());
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const SliceSample& s = slices[i];
    const BinaryMask truth = truth_mask(s);
    const BinaryMask pred = segment(inputs.gate_probabilities[i], inputs.heat[i], s.size, s.size, threshold);
    EvalRecord r;
    r.image_id = s.id();
    r.cohort = cohort;
    r.dice = dice(pred, truth, policy);
    r.hd95 = hd95(pred, truth, policy);
    r.hd95_sentinel = hd95_is_sentinel(pred, truth);
    r.both_empty = pred.empty() && truth.empty();
    r.predicted_label = inputs.gate_probabilities[i] >= 0.5 ? 1 : 0;
    r.true_label = s.label;
    r.threshold = threshold;
    out.push_back(std::move(r));
  }
  return out;
}

std::string metrics_csv(const std::vector<EvalRecord>& records) {
  std::string out = "image_id,cohort,dice,hd95,pred_label,true_label,threshold\n";
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, ",%s,%.9g,%.9g,%d,%d,%.9g\n", cohort_name(r.cohort), r.dice, r.hd95,
                  r.predicted_label, r.true_label, r.threshold);
    out += r.image_id;
    out += buf;
  }
  return out;
}

std::vector<EvalRecord> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "image_id,cohort,dice,hd95,pred_label,true_label,threshold") {
    throw ValidationError("metrics csv: unexpected header");
  }
  std::vector<EvalRecord> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 7) throw ValidationError("metrics csv: row " + std::to_string(row) + " has " + std::to_string(f.size()) + " fields");
    EvalRecord r;
    try {
      r.image_id = f[0];
      r.cohort = parse_cohort(f[1]);
      r.dice = std::stod(f[2]);
      r.hd95 = std::stod(f[3]);
      r.predicted_label = std::stoi(f[4]);
      r.true_label = std::stoi(f[5]);
      r.threshold = std::stod(f[6]);
    } catch (const std::logic_error&) {
      throw ValidationError("metrics csv: row " + std::to_string(row) + " is malformed");
    }
    out.push_back(std::move(r));
  }
  return out;
}

Stats describe(std::vector<double> values) {
  Stats s;
  s.count = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  double sum = 0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double ss = 0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(values.size()));
  s.median = percentile_sorted(values, 50.0);
  return s;
}

namespace {

nlohmann::json to_json(const Stats& s) {
  return {{"count", s.count}, {"mean", s.mean}, {"median", s.median}, {"std", s.std}};
}

}  // namespace

std::string summary_json(const std::vector<EvalRecord>& records, const SummaryExtras& extras) {
  if (!extras.effective_superpixels.empty() && extras.effective_superpixels.size() != records.size()) {
    throw ShapeError("summary_json: effective superpixel counts do not align with the records");
  }
  nlohmann::json root;
  if (!extras.method.empty()) root["method"] = extras.method;
  if (extras.threshold) root["threshold"] = *extras.threshold;
  std::map<Cohort, std::vector<std::size_t>> by_cohort;
  for (std::size_t i = 0; i < records.size(); ++i) by_cohort[records[i].cohort].push_back(i);
  nlohmann::json cohorts = nlohmann::json::object();
  for (const auto& [cohort, rows] : by_cohort) {
    std::vector<double> d, h, h_measured, d_cancer, h_cancer;
    std::size_t sentinel = 0, both_empty = 0, correct_gate = 0;
    for (std::size_t i : rows) {
      const EvalRecord& r = records[i];
      d.push_back(r.dice);
      h.push_back(r.hd95);
      if (r.hd95_sentinel) ++sentinel;
      else h_measured.push_back(r.hd95);
      if (r.both_empty) ++both_empty;
      if (r.true_label == 1) {
        d_cancer.push_back(r.dice);
        h_cancer.push_back(r.hd95);
      }
      if (r.predicted_label == r.true_label) ++correct_gate;
    }
    nlohmann::json c;
    c["count"] = rows.size();
    c["dice"] = to_json(describe(d));
    c["hd95"] = to_json(describe(h));
    c["hd95_excluding_sentinel"] = to_json(describe(h_measured));
    c["dice_cancerous_only"] = to_json(describe(d_cancer));
    c["hd95_cancerous_only"] = to_json(describe(h_cancer));
    c["hd95_sentinel_count"] = sentinel;
    c["both_empty_count"] = both_empty;
    c["gate_accuracy"] = rows.empty() ? 0.0 : static_cast<double>(correct_gate) / static_cast<double>(rows.size());
    if (!extras.effective_superpixels.empty()) {
      std::vector<double> e;
      nlohmann::json per_image = nlohmann::json::object();
      long long lo = 0, hi = 0;
      for (std::size_t i : rows) {
        const long long v = extras.effective_superpixels[i];
        e.push_back(static_cast<double>(v));
        per_image[records[i].image_id] = v;
        lo = e.size() == 1 ? v : std::min(lo, v);
        hi = e.size() == 1 ? v : std::max(hi, v);
      }
      nlohmann::json eff = to_json(describe(e));
      eff["min"] = lo;
      eff["max"] = hi;
      eff["per_image"] = std::move(per_image);
      c["effective_superpixels"] = std::move(eff);
    }
    cohorts[cohort_name(cohort)] = std::move(c);
  }
  root["cohorts"] = std::move(cohorts);
  const EmptyMaskPolicy& p = extras.policy;
  root["conventions"] = {{"both_empty", {{"dice", p.both_empty_dice}, {"hd95", p.both_empty_hd95}}},
                         {"one_empty", {{"dice", p.one_empty_dice},
                                        {"hd95", p.diagonal_sentinel ? nlohmann::json("image diagonal")
                                                                     : nlohmann::json(p.one_empty_hd95)}}},
                         {"hd95_boundary", "4-connectivity"},
                         {"hd95_percentile", "95th, linear interpolation over pooled directed distances"}};
  return root.dump(2) + "\n";
}

}  // namespace wss
