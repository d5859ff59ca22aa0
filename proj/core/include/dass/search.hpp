#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dass/checkpoint.hpp"
#include "dass/config.hpp"
#include "dass/metrics.hpp"
#include "dass/network.hpp"
#include "dass/optim.hpp"

namespace dass {

/// The phase a state will run next. Transitions only move forward.
enum class Phase { kPretrain, kPrune, kFinetune, kDone };
const char* to_string(Phase phase);
Phase phase_from_string(const std::string& name);

enum class Method { kDass, kBaseline };
const char* to_string(Method method);
Method method_from_string(const std::string& name);

/// Gradient-buffer inspection: in pre-training no score has a gradient, in
/// pruning no weight does, in fine-tuning no score or alpha does.
struct GradientAudit {
  int64_t checks = 0;
  int64_t violations = 0;
  std::map<std::string, int64_t> checks_per_phase;
  std::vector<std::string> messages;  // first few violations
};

struct SearchState {
  SearchConfig config;
  Method method = Method::kDass;
  Phase phase = Phase::kPretrain;
  int epoch = 0;
  Rng rng;
  NetworkConfig net_config;
  std::unique_ptr<Network> supernet;
  std::unique_ptr<Network> final_net;  // discrete network once derived
  SgdOptimizer alpha_opt;  // shared by steps 1 and 2
  std::optional<Genotype> dense_genotype;  // derived from alpha after step 1
  std::optional<Genotype> genotype;  // final architecture
  int64_t dense_params = 0;  // total parameters of the dense_genotype network
  std::map<std::string, std::vector<LossPoint>> curves;
  GradientAudit audit;

  /// The network the current phase trains: final_net when set, else supernet.
  Network& active();
  const Network& active() const;
  /// Dense before pruning, masked afterwards.
  ForwardMode forward_mode() const;
};

SearchState make_state(const SearchConfig& config, Method method, int in_channels, int num_classes);

/// Called after every fine-tune epoch, before the frozen-tensor check.
using EpochHook = std::function<void(SearchState&, int epoch)>;

void step1_pretrain(SearchState& state, const DataSplit& data, int epochs);
void step2_prune(SearchState& state, const DataSplit& data, int epochs, double ratio);
void step3_finetune(SearchState& state, const DataSplit& data, int epochs, const EpochHook& hook = {});

struct EvalResult {
  double accuracy = 0.0;  // percent
  double loss = 0.0;
};
EvalResult evaluate(Network& network, ForwardMode mode, const Dataset& data, int batch_size);

/// Metrics of the finished state. Throws InvariantError if the surviving
/// weight count differs from the per-layer k total or a pruned weight is
/// nonzero.
MetricsReport build_report(SearchState& state, const DataSplit& data);

CheckpointFile state_to_checkpoint(const SearchState& state);
/// Rebuilds a state. With `expected` set, refuses (ConfigError naming both
/// hashes) when the stored config hash differs.
SearchState state_from_checkpoint(const CheckpointFile& file, const SearchConfig* expected = nullptr);
SearchConfig checkpoint_config(const CheckpointFile& file);
void save_checkpoint(const SearchState& state, const std::filesystem::path& path);
SearchState load_checkpoint(const std::filesystem::path& path, const SearchConfig* expected = nullptr);

struct RunOptions {
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  std::optional<Phase> stop_after;
  std::function<void(SearchState&, Phase completed)> on_phase_end;
  EpochHook on_finetune_epoch;
};

struct RunResult {
  SearchState state;
  MetricsReport report;
  bool complete = false;
};

/// Runs the remaining phases of `state`, checkpointing after each.
RunResult run_pipeline(SearchState state, const DataSplit& data, const RunOptions& options = {});
RunResult run_dass(const SearchConfig& config, const DataSplit& data, const RunOptions& options = {});
RunResult run_darts_sparse_baseline(const SearchConfig& config, const DataSplit& data, const RunOptions& options = {});

/// Fixed probe batch drawn from the test split.
Tensor probe_batch(const SearchConfig& config, const Dataset& test);

struct SweepRow {
  double ratio = 0.0;
  uint64_t seed = 0;
  MetricsReport dass;
  MetricsReport baseline;
  std::vector<double> tau_dass;  // per cell, against the pre-trained supernet
  std::vector<double> tau_baseline;
  GradientAudit audit_dass;  // includes the shared pre-training checks
  GradientAudit audit_baseline;
};

/// Paired DASS and baseline runs per (seed, ratio). Pre-training runs once
/// per seed and is shared by every ratio and both methods.
std::vector<SweepRow> run_sweep(const SearchConfig& base, const std::vector<double>& ratios,
                                const std::vector<uint64_t>& seeds,
                                const std::function<void(const SweepRow&)>& on_row = {});

}  // namespace dass
