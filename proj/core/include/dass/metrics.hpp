#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dass/network.hpp"

namespace dass {

struct ParamCount {
  int64_t total = 0;    // every weight, bias and batch-norm affine entry
  int64_t nonzero = 0;  // mask popcounts plus all unmasked entries
  int64_t sparse_total = 0;
  int64_t sparse_nonzero = 0;
};

ParamCount count_params(const Network& network);

/// Accuracy (percent) per thousand parameters.
double nid(double top1_percent, double params_thousands);
double compression_rate(double baseline_params, double params);
double generalization_gap(double train_accuracy, double test_accuracy);

/// Tie-corrected Kendall tau (tau-b) scaled to [-100, 100], computed in
/// O(n log n). Throws ConfigError on length mismatch or fewer than two
/// elements, NumericError when either side is constant.
double kendall_tau(std::span<const double> a, std::span<const double> b);

/// At most `limit` entries taken at a fixed stride from the start.
std::vector<double> strided_subsample(std::span<const float> values, size_t limit = 4096);

/// Scaled tau between the flattened outputs of corresponding cells of two
/// networks on the same probe batch (evaluation mode). A cell whose
/// activations are constant on either side scores 0.
std::vector<double> feature_map_similarity(Network& a, ForwardMode mode_a, Network& b, ForwardMode mode_b,
                                           const Tensor& probe);

struct LossPoint {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct MetricsReport {
  std::string method;
  double pruning_ratio = 0.0;
  uint64_t seed = 0;
  double top1_accuracy = 0.0;  // percent, test split
  double train_accuracy = 0.0;  // percent, train split
  int64_t params_total = 0;
  int64_t params_nonzero = 0;
  int64_t sparse_params_nonzero = 0;
  int64_t sparse_k_total = 0;
  double baseline_params = 0.0;
  double compression_rate = 0.0;
  double nid = 0.0;
  double generalization_gap = 0.0;
  std::map<std::string, std::vector<LossPoint>> loss_curves;  // keyed by phase

  /// Throws InvariantError if counts or percentages are out of range.
  void validate() const;
};

std::string report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);
/// `epoch,train_loss,val_loss` rows, epochs numbered across phases in
/// pretrain, prune, finetune order.
std::string loss_curves_csv(const MetricsReport& report);

}  // namespace dass
