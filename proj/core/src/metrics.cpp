#include "dass/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dass/error.hpp"
#include "json.hpp"

namespace dass {
namespace {

int64_t tie_pairs(int64_t run) { return run * (run - 1) / 2; }

// Sorts v ascending and returns the number of inversions (i < j, v[i] > v[j]).
int64_t sort_count_inversions(std::vector<double>& v) {
  std::vector<double> buf(v.size());
  int64_t inversions = 0;
  for (size_t width = 1; width < v.size(); width *= 2) {
    for (size_t lo = 0; lo < v.size(); lo += 2 * width) {
      const size_t mid = std::min(lo + width, v.size()), hi = std::min(lo + 2 * width, v.size());
      size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (v[j] < v[i]) {
          inversions += static_cast<int64_t>(mid - i);
          buf[k++] = v[j++];
        } else {
          buf[k++] = v[i++];
        }
      }
      while (i < mid) buf[k++] = v[i++];
      while (j < hi) buf[k++] = v[j++];
    }
    std::swap(v, buf);
  }
  return inversions;
}

}  // namespace

ParamCount count_params(const Network& network) {
  ParamCount c;
  for (const auto& e : network.params().sparse) {
    c.sparse_total += e.param->numel();
    c.sparse_nonzero += e.param->popcount();
  }
  int64_t dense = 0;
  for (const auto& e : network.params().dense) dense += e.var->value().numel();
  c.total = c.sparse_total + dense;
  c.nonzero = c.sparse_nonzero + dense;
  return c;
}

double nid(double top1_percent, double params_thousands) {
  if (!(params_thousands > 0.0)) throw ConfigError("nid: parameter count must be positive");
  return top1_percent / params_thousands;
}

double compression_rate(double baseline_params, double params) {
  if (!(params > 0.0)) throw ConfigError("compression_rate: parameter count must be positive");
  return baseline_params / params;
}

double generalization_gap(double train_accuracy, double test_accuracy) { return train_accuracy - test_accuracy; }

double kendall_tau(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ConfigError("kendall_tau: length mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  if (a.size() < 2) throw ConfigError("kendall_tau: needs at least two elements");
  const auto n = static_cast<int64_t>(a.size());
  std::vector<size_t> order(a.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t i, size_t j) { return a[i] < a[j] || (a[i] == a[j] && b[i] < b[j]); });

  int64_t ties_a = 0, ties_joint = 0;
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j < order.size() && a[order[j]] == a[order[i]]) ++j;
    ties_a += tie_pairs(static_cast<int64_t>(j - i));
    for (size_t k = i; k < j;) {
      size_t m = k;
      while (m < j && b[order[m]] == b[order[k]]) ++m;
      ties_joint += tie_pairs(static_cast<int64_t>(m - k));
      k = m;
    }
    i = j;
  }
  std::vector<double> bs(a.size());
  for (size_t i = 0; i < order.size(); ++i) bs[i] = b[order[i]];
  const int64_t discordant = sort_count_inversions(bs);
  int64_t ties_b = 0;
  for (size_t i = 0; i < bs.size();) {
    size_t j = i;
    while (j < bs.size() && bs[j] == bs[i]) ++j;
    ties_b += tie_pairs(static_cast<int64_t>(j - i));
    i = j;
  }
  const int64_t pairs = tie_pairs(n);
  if (pairs == ties_a || pairs == ties_b) throw NumericError("kendall_tau: undefined for a constant sequence");
  const int64_t s = pairs - ties_a - ties_b + ties_joint - 2 * discordant;
  return 100.0 * static_cast<double>(s) /
         std::sqrt(static_cast<double>(pairs - ties_a) * static_cast<double>(pairs - ties_b));
}

std::vector<double> strided_subsample(std::span<const float> values, size_t limit) {
  const size_t stride = std::max<size_t>(1, (values.size() + limit - 1) / limit);
  std::vector<double> out;
  for (size_t i = 0; i < values.size() && out.size() < limit; i += stride) out.push_back(values[i]);
  return out;
}

std::vector<double> feature_map_similarity(Network& a, ForwardMode mode_a, Network& b, ForwardMode mode_b,
                                           const Tensor& probe) {
  if (a.cells().size() != b.cells().size()) {
    throw ConfigError("feature_map_similarity: networks have " + std::to_string(a.cells().size()) + " and " +
                      std::to_string(b.cells().size()) + " cells");
  }
  std::vector<Variable> fa, fb;
  a.forward(Variable(probe), {mode_a, false}, &fa);
  b.forward(Variable(probe), {mode_b, false}, &fb);
  std::vector<double> taus;
  for (size_t i = 0; i < fa.size(); ++i) {
    if (fa[i].value().numel() != fb[i].value().numel()) {
      throw ConfigError("feature_map_similarity: cell " + std::to_string(i) + " outputs " + shape_str(fa[i].shape()) +
                        " vs " + shape_str(fb[i].shape()));
    }
    const auto xa = strided_subsample(fa[i].value().values());
    const auto xb = strided_subsample(fb[i].value().values());
    try {
      taus.push_back(kendall_tau(xa, xb));
    } catch (const NumericError&) {
      taus.push_back(0.0);
    }
  }
  return taus;
}

void MetricsReport::validate() const {
  if (params_nonzero > params_total) throw InvariantError("report: nonzero parameters exceed total");
  for (double pct : {top1_accuracy, train_accuracy}) {
    if (!(pct >= 0.0 && pct <= 100.0)) throw InvariantError("report: accuracy outside [0, 100]");
  }
}

namespace {
const std::vector<std::string> kPhases{"pretrain", "prune", "finetune"};
}

std::string report_to_json(const MetricsReport& r) {
  nlohmann::ordered_json doc;
  doc["method"] = r.method;
  doc["pruning_ratio"] = r.pruning_ratio;
  doc["seed"] = r.seed;
  doc["top1_accuracy"] = r.top1_accuracy;
  doc["train_accuracy"] = r.train_accuracy;
  doc["params_total"] = r.params_total;
  doc["params_nonzero"] = r.params_nonzero;
  doc["sparse_params_nonzero"] = r.sparse_params_nonzero;
  doc["sparse_k_total"] = r.sparse_k_total;
  doc["baseline_params"] = r.baseline_params;
  doc["compression_rate"] = r.compression_rate;
  doc["nid"] = r.nid;
  doc["generalization_gap"] = r.generalization_gap;
  nlohmann::ordered_json curves = nlohmann::ordered_json::object();
  for (const auto& [phase, points] : r.loss_curves) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& p : points) arr.push_back({{"epoch", p.epoch}, {"train_loss", p.train_loss}, {"val_loss", p.val_loss}});
    curves[phase] = arr;
  }
  doc["loss_curves"] = curves;
  return doc.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("report: parse error at byte " + std::to_string(e.byte));
  }
  MetricsReport r;
  try {
    r.method = doc.at("method").get<std::string>();
    r.pruning_ratio = doc.at("pruning_ratio").get<double>();
    r.seed = doc.at("seed").get<uint64_t>();
    r.top1_accuracy = doc.at("top1_accuracy").get<double>();
    r.train_accuracy = doc.at("train_accuracy").get<double>();
    r.params_total = doc.at("params_total").get<int64_t>();
    r.params_nonzero = doc.at("params_nonzero").get<int64_t>();
    r.sparse_params_nonzero = doc.at("sparse_params_nonzero").get<int64_t>();
    r.sparse_k_total = doc.at("sparse_k_total").get<int64_t>();
    r.baseline_params = doc.at("baseline_params").get<double>();
    r.compression_rate = doc.at("compression_rate").get<double>();
    r.nid = doc.at("nid").get<double>();
    r.generalization_gap = doc.at("generalization_gap").get<double>();
    for (const auto& [phase, points] : doc.at("loss_curves").items()) {
      auto& out = r.loss_curves[phase];
      for (const auto& p : points) {
        out.push_back({p.at("epoch").get<int>(), p.at("train_loss").get<double>(), p.at("val_loss").get<double>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
  return r;
}

std::string loss_curves_csv(const MetricsReport& report) {
  std::ostringstream out;
  out.precision(9);
  out << "epoch,train_loss,val_loss\n";
  int epoch = 0;
  for (const auto& phase : kPhases) {
    const auto it = report.loss_curves.find(phase);
    if (it == report.loss_curves.end()) continue;
    for (const auto& p : it->second) out << ++epoch << ',' << p.train_loss << ',' << p.val_loss << '\n';
  }
  return out.str();
}

}  // namespace dass
