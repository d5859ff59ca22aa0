#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "dass/data.hpp"
#include "dass/network.hpp"

namespace dass {

enum class DatasetKind { kSynthetic, kCifar10Subset };
enum class FinetuneMode { kInherit, kScratch };  // inherit keeps theta_pre; scratch re-initializes it
enum class FinetuneTarget { kDiscrete, kSupernet };
enum class AlphaInitMode { kFromPretrain, kFresh };
enum class Alternation { kPerBatch, kPerEpoch };

/// Every tunable of a run. Serialized as one flat JSON object; unknown keys
/// are rejected.
struct SearchConfig {
  DatasetKind dataset = DatasetKind::kCifar10Subset;
  std::string data_dir;  // empty: fall back to $DASS_DATA_DIR
  double train_val_split = 0.5;
  int64_t subset_size = 30000;  // per split; 0 keeps everything
  int64_t synthetic_samples = 1000;  // per split
  int synthetic_classes = 10;
  int synthetic_image_size = 32;
  double synthetic_noise = 0.3;
  bool augment = false;

  int n_cells = 8;
  int n_nodes = 7;
  int init_channels = 16;
  int stem_multiplier = 3;
  bool include_zero_op = false;
  bool double_sep_conv = true;

  double pruning_ratio = 0.99;
  int epochs_pretrain = 50;
  int epochs_prune = 20;
  int epochs_finetune = 200;
  int batch_size = 64;
  double lr_theta = 0.025;
  double lr_score = 0.1;
  double lr_finetune = 0.01;
  double lr_alpha = 3e-4;
  double momentum = 0.9;
  double weight_decay = 3e-4;
  double alpha_momentum = 0.9;
  double alpha_weight_decay = 1e-3;
  uint64_t seed = 1;

  FinetuneMode finetune_mode = FinetuneMode::kInherit;
  FinetuneTarget finetune_target = FinetuneTarget::kDiscrete;
  AlphaInitMode alpha_init_mode = AlphaInitMode::kFromPretrain;
  Alternation step2_alternation = Alternation::kPerBatch;
  bool update_alpha_in_prune = true;
  double compression_baseline_params = 0.0;  // 0: dense network derived after pre-training
  int probe_size = 32;  // images in the feature-similarity probe batch

  /// Throws ConfigError naming the offending key.
  void validate() const;
  NetworkConfig network(int in_channels, int num_classes) const;
};

/// Full-scale defaults.
SearchConfig default_config();
/// Small CPU profile: 2 cells, 4 nodes, 8 channels, batch 32, epochs
/// {15, 8, 40}, synthetic data.
SearchConfig desk_preset();
/// Looks up a preset by name ("default" or "desk").
SearchConfig preset(const std::string& name);

/// Overlays the keys of a flat JSON object onto `base`. Throws FormatError on
/// malformed JSON and ConfigError on unknown keys or wrong value types.
SearchConfig config_from_json(const std::string& text, SearchConfig base = default_config());
SearchConfig load_config(const std::filesystem::path& file, SearchConfig base = default_config());
/// Every field, defaults included, in a fixed key order.
std::string config_to_json(const SearchConfig& config);
/// FNV-1a over the canonical JSON form.
uint64_t config_hash(const SearchConfig& config);
std::string hash_hex(uint64_t hash);

/// Loads the configured dataset. CIFAR-10 reads from `data_dir`, or
/// $DASS_DATA_DIR when that is empty.
DataSplit load_data(const SearchConfig& config);
std::filesystem::path resolve_data_dir(const SearchConfig& config);

}  // namespace dass
