#include "dass/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "dass/error.hpp"
#include "json.hpp"

namespace dass {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

template <typename E>
struct EnumNames {
  std::vector<std::pair<E, const char*>> names;

  const char* to_name(E value) const {
    for (const auto& [v, n] : names)
      if (v == value) return n;
    return "?";
  }
  E from_name(const std::string& key, const std::string& name) const {
    std::string allowed;
    for (const auto& [v, n] : names) {
      if (name == n) return v;
      allowed += allowed.empty() ? n : std::string(", ") + n;
    }
    throw ConfigError("config key '" + key + "': '" + name + "' is not one of {" + allowed + "}");
  }
};

const EnumNames<DatasetKind> kDatasetNames{{{DatasetKind::kSynthetic, "synthetic"},
                                            {DatasetKind::kCifar10Subset, "cifar10-subset"}}};
const EnumNames<FinetuneMode> kFinetuneModeNames{{{FinetuneMode::kInherit, "inherit"}, {FinetuneMode::kScratch, "scratch"}}};
const EnumNames<FinetuneTarget> kFinetuneTargetNames{{{FinetuneTarget::kDiscrete, "discrete"},
                                                      {FinetuneTarget::kSupernet, "supernet"}}};
const EnumNames<AlphaInitMode> kAlphaInitNames{{{AlphaInitMode::kFromPretrain, "from_pretrain"},
                                                {AlphaInitMode::kFresh, "fresh"}}};
const EnumNames<Alternation> kAlternationNames{{{Alternation::kPerBatch, "per_batch"}, {Alternation::kPerEpoch, "per_epoch"}}};

struct Field {
  std::string key;
  std::function<json(const SearchConfig&)> get;
  std::function<void(SearchConfig&, const json&)> set;
};

template <typename T>
T typed(const std::string& key, const json& v) {
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError("");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<int64_t>() < 0) throw ConfigError("");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError("");
    } else {
      if (!v.is_string()) throw ConfigError("");
    }
    return v.get<T>();
  } catch (const ConfigError&) {
    throw ConfigError("config key '" + key + "' has the wrong type (" + std::string(v.type_name()) + ")");
  }
}

template <typename T>
Field plain(const std::string& key, T SearchConfig::*member) {
  return {key, [member](const SearchConfig& c) { return json(c.*member); },
          [key, member](SearchConfig& c, const json& v) { c.*member = typed<T>(key, v); }};
}

template <typename E>
Field enumerated(const std::string& key, E SearchConfig::*member, const EnumNames<E>& names) {
  return {key, [member, &names](const SearchConfig& c) { return json(names.to_name(c.*member)); },
          [key, member, &names](SearchConfig& c, const json& v) {
            c.*member = names.from_name(key, typed<std::string>(key, v));
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      enumerated("dataset", &SearchConfig::dataset, kDatasetNames),
      plain("data_dir", &SearchConfig::data_dir),
      plain("train_val_split", &SearchConfig::train_val_split),
      plain("subset_size", &SearchConfig::subset_size),
      plain("synthetic_samples", &SearchConfig::synthetic_samples),
      plain("synthetic_classes", &SearchConfig::synthetic_classes),
      plain("synthetic_image_size", &SearchConfig::synthetic_image_size),
      plain("synthetic_noise", &SearchConfig::synthetic_noise),
      plain("augment", &SearchConfig::augment),
      plain("n_cells", &SearchConfig::n_cells),
      plain("n_nodes", &SearchConfig::n_nodes),
      plain("init_channels", &SearchConfig::init_channels),
      plain("stem_multiplier", &SearchConfig::stem_multiplier),
      plain("include_zero_op", &SearchConfig::include_zero_op),
      plain("double_sep_conv", &SearchConfig::double_sep_conv),
      plain("pruning_ratio", &SearchConfig::pruning_ratio),
      plain("epochs_pretrain", &SearchConfig::epochs_pretrain),
      plain("epochs_prune", &SearchConfig::epochs_prune),
      plain("epochs_finetune", &SearchConfig::epochs_finetune),
      plain("batch_size", &SearchConfig::batch_size),
      plain("lr_theta", &SearchConfig::lr_theta),
      plain("lr_score", &SearchConfig::lr_score),
      plain("lr_finetune", &SearchConfig::lr_finetune),
      plain("lr_alpha", &SearchConfig::lr_alpha),
      plain("momentum", &SearchConfig::momentum),
      plain("weight_decay", &SearchConfig::weight_decay),
      plain("alpha_momentum", &SearchConfig::alpha_momentum),
      plain("alpha_weight_decay", &SearchConfig::alpha_weight_decay),
      plain("seed", &SearchConfig::seed),
      enumerated("finetune_mode", &SearchConfig::finetune_mode, kFinetuneModeNames),
      enumerated("finetune_target", &SearchConfig::finetune_target, kFinetuneTargetNames),
      enumerated("alpha_init_mode", &SearchConfig::alpha_init_mode, kAlphaInitNames),
      enumerated("step2_alternation", &SearchConfig::step2_alternation, kAlternationNames),
      plain("update_alpha_in_prune", &SearchConfig::update_alpha_in_prune),
      plain("compression_baseline_params", &SearchConfig::compression_baseline_params),
      plain("probe_size", &SearchConfig::probe_size),
  };
  return table;
}

void require(bool ok, const std::string& key, const std::string& rule) {
  if (!ok) throw ConfigError("config key '" + key + "' " + rule);
}

}  // namespace

void SearchConfig::validate() const {
  require(train_val_split > 0.0 && train_val_split < 1.0, "train_val_split", "must lie in (0, 1)");
  require(subset_size >= 0, "subset_size", "must be non-negative");
  require(synthetic_samples >= synthetic_classes, "synthetic_samples", "must be at least synthetic_classes");
  require(synthetic_classes >= 2, "synthetic_classes", "must be at least 2");
  require(synthetic_image_size >= 4, "synthetic_image_size", "must be at least 4");
  require(synthetic_noise >= 0.0, "synthetic_noise", "must be non-negative");
  require(pruning_ratio >= 0.0 && pruning_ratio <= 1.0, "pruning_ratio", "must lie in [0, 1]");
  require(epochs_pretrain >= 0, "epochs_pretrain", "must be non-negative");
  require(epochs_prune >= 0, "epochs_prune", "must be non-negative");
  require(epochs_finetune >= 0, "epochs_finetune", "must be non-negative");
  require(batch_size >= 1, "batch_size", "must be positive");
  require(lr_theta > 0.0, "lr_theta", "must be positive");
  require(lr_score > 0.0, "lr_score", "must be positive");
  require(lr_finetune > 0.0, "lr_finetune", "must be positive");
  require(lr_alpha > 0.0, "lr_alpha", "must be positive");
  require(momentum >= 0.0 && momentum < 1.0, "momentum", "must lie in [0, 1)");
  require(alpha_momentum >= 0.0 && alpha_momentum < 1.0, "alpha_momentum", "must lie in [0, 1)");
  require(weight_decay >= 0.0, "weight_decay", "must be non-negative");
  require(alpha_weight_decay >= 0.0, "alpha_weight_decay", "must be non-negative");
  require(compression_baseline_params >= 0.0, "compression_baseline_params", "must be non-negative");
  require(probe_size >= 1, "probe_size", "must be positive");
  network(3, 10).validate();
}

NetworkConfig SearchConfig::network(int in_channels, int num_classes) const {
  NetworkConfig n;
  n.in_channels = in_channels;
  n.num_classes = num_classes;
  n.n_cells = n_cells;
  n.n_nodes = n_nodes;
  n.init_channels = init_channels;
  n.stem_multiplier = stem_multiplier;
  n.include_zero_op = include_zero_op;
  n.double_sep_conv = double_sep_conv;
  return n;
}

SearchConfig default_config() { return SearchConfig{}; }

SearchConfig desk_preset() {
  SearchConfig c;
  c.dataset = DatasetKind::kSynthetic;
  c.subset_size = 4000;
  c.synthetic_samples = 400;
  c.synthetic_image_size = 16;
  c.n_cells = 2;
  c.n_nodes = 5;  // two intermediate nodes
  c.init_channels = 8;
  c.batch_size = 32;
  c.epochs_pretrain = 15;
  c.epochs_prune = 8;
  c.epochs_finetune = 40;
  return c;
}

SearchConfig preset(const std::string& name) {
  if (name == "default") return default_config();
  if (name == "desk") return desk_preset();
  throw ConfigError("unknown preset '" + name + "' (expected default or desk)");
}

SearchConfig config_from_json(const std::string& text, SearchConfig base) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError("config: parse error at byte " + std::to_string(e.byte));
  }
  if (!doc.is_object()) throw ConfigError("config must be a flat JSON object");
  for (const auto& [key, value] : doc.items()) {
    const Field* field = nullptr;
    for (const auto& f : fields())
      if (f.key == key) field = &f;
    if (!field) throw ConfigError("unknown config key '" + key + "'");
    field->set(base, value);
  }
  base.validate();
  return base;
}

SearchConfig load_config(const std::filesystem::path& file, SearchConfig base) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return config_from_json(buf.str(), std::move(base));
  } catch (const FormatError& e) {
    throw ConfigError(file.string() + ": " + e.what());
  }
}

std::string config_to_json(const SearchConfig& config) {
  ordered_json doc = ordered_json::object();
  for (const auto& f : fields()) doc[f.key] = f.get(config);
  return doc.dump(2) + "\n";
}

uint64_t config_hash(const SearchConfig& config) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config_to_json(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(uint64_t hash) {
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << hash;
  return out.str();
}

std::filesystem::path resolve_data_dir(const SearchConfig& config) {
  if (!config.data_dir.empty()) return config.data_dir;
  if (const char* env = std::getenv("DASS_DATA_DIR"); env && *env) return env;
  throw ConfigError("dataset cifar10-subset needs data_dir or DASS_DATA_DIR");
}

DataSplit load_data(const SearchConfig& config) {
  if (config.dataset == DatasetKind::kSynthetic) {
    return gen_synthetic(config.synthetic_samples, config.synthetic_classes, config.synthetic_image_size, config.seed,
                         config.synthetic_noise);
  }
  return load_cifar10(resolve_data_dir(config), config.subset_size, config.train_val_split, config.seed);
}

}  // namespace dass
