#pragma once

#include <optional>
#include <string>
#include <vector>

#include "wss/evalseg/metrics.hpp"

namespace wss {

struct EvalRecord {
  std::string image_id;
  Cohort cohort = Cohort::Test;
  double dice = 0;
  double hd95 = 0;
  /// hd95 holds the one-empty convention rather than a measured distance.
  bool hd95_sentinel = false;
  int predicted_label = 0;
  int true_label = 0;
  double threshold = 0;
  /// Both prediction and truth empty.
  bool both_empty = false;
};

struct CohortInputs {
  const std::vector<SliceSample>* slices = nullptr;
  std::vector<double> gate_probabilities;
  std::vector<Eigen::ArrayXd> heat;
};

/// One record per slice. Throws ValidationError listing every slice id without a truth mask.
std::vector<EvalRecord> evaluate_cohort(const CohortInputs& inputs, Cohort cohort, double threshold,
                                        const EmptyMaskPolicy& policy = {});

BinaryMask truth_mask(const SliceSample& slice);

/// Header image_id,cohort,dice,hd95,pred_label,true_label,threshold.
std::string metrics_csv(const std::vector<EvalRecord>& records);
std::vector<EvalRecord> parse_metrics_csv(const std::string& text);

struct Stats {
  std::size_t count = 0;
  double mean = 0, median = 0, std = 0;
};

/// Population standard deviation; median by linear interpolation. Empty input gives zeros.
Stats describe(std::vector<double> values);

struct SummaryExtras {
  /// Effective superpixel count per record, aligned with the records passed to summary_json.
  std::vector<long long> effective_superpixels;
  std::optional<double> threshold;
  std::string method;
  EmptyMaskPolicy policy{};
};

/// Per-cohort statistics of Dice and HD95 (all rows, and with sentinel rows excluded), sentinel
/// and both-empty counts, and effective superpixel statistics when given.
std::string summary_json(const std::vector<EvalRecord>& records, const SummaryExtras& extras = {});

}  // namespace wss
