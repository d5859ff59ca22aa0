#include "dass/search.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <sstream>

#include "dass/error.hpp"
#include "dass/ops.hpp"
#include "json.hpp"

namespace dass {
namespace {

using nlohmann::json;

constexpr size_t kMaxAuditMessages = 8;

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

int64_t batch_count(const Dataset& d, int batch_size) { return (d.size() + batch_size - 1) / batch_size; }

std::vector<std::vector<int64_t>> shuffled_batches(const Dataset& d, int batch_size, Rng& rng) {
  const auto order = rng.permutation(d.size());
  std::vector<std::vector<int64_t>> out;
  for (size_t i = 0; i < order.size(); i += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), i + static_cast<size_t>(batch_size));
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

Batch make_batch(const Dataset& d, const std::vector<int64_t>& indices, bool augment, Rng& rng) {
  Batch b{d.batch_images(indices), d.batch_labels(indices)};
  if (augment) augment_batch(b.images, rng);
  return b;
}

// One forward and backward pass; gradients land in the variables that
// currently require them.
double forward_backward(Network& net, const Batch& batch, ForwardMode mode, const char* phase, int epoch,
                        size_t index, float lr) {
  Tape tape;
  Variable loss;
  {
    TapeScope scope(tape);
    loss = ops::cross_entropy(net.forward(Variable(batch.images), {mode, true}), batch.labels);
  }
  const float value = loss.value().item();
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << "non-finite loss in " << phase << " at epoch " << epoch << ", batch " << index << " (lr=" << lr << ")";
    throw NumericError(msg.str());
  }
  tape.backward(loss);
  return value;
}

void audit(SearchState& s, const char* where) {
  std::vector<Variable> watched;
  auto add = [&watched](const std::vector<Variable>& vs) { watched.insert(watched.end(), vs.begin(), vs.end()); };
  switch (s.phase) {
    case Phase::kPretrain:
      add(s.active().score_params());
      break;
    case Phase::kPrune:
      add(s.active().theta_params());
      break;
    case Phase::kFinetune:
      add(s.active().score_params());
      add(s.active().alpha_params());
      add(s.supernet->alpha_params());
      break;
    case Phase::kDone:
      return;
  }
  ++s.audit.checks;
  ++s.audit.checks_per_phase[to_string(s.phase)];
  const auto hit = std::count_if(watched.begin(), watched.end(), [](const Variable& v) { return v.has_grad(); });
  if (hit > 0) {
    ++s.audit.violations;
    if (s.audit.messages.size() < kMaxAuditMessages) {
      s.audit.messages.push_back(std::string(to_string(s.phase)) + " " + where + ": " + std::to_string(hit) +
                                 " frozen tensors hold gradients");
    }
  }
}

void require_phase(const SearchState& s, Phase expected, const char* op) {
  if (s.phase != expected) {
    throw ConfigError(std::string(op) + " needs phase " + to_string(expected) + " but the state is in " +
                      to_string(s.phase));
  }
}

void reinit_alpha(Network& net, Rng& rng) {
  for (auto* table : {&net.alpha_normal(), &net.alpha_reduce()}) {
    for (auto& row : *table) {
      for (float& v : row.mutable_value().values()) v = static_cast<float>(1e-3 * rng.normal());
    }
  }
}

SgdOptimizer make_alpha_opt(const SearchState& s) {
  return SgdOptimizer(s.supernet->alpha_params(), static_cast<float>(s.config.lr_alpha),
                      static_cast<float>(s.config.alpha_momentum), static_cast<float>(s.config.alpha_weight_decay));
}

void rebinarize(Network& net) {
  for (const auto& e : net.params().sparse) e.param->mask.mutable_value() = binarize_topk(e.param->scores.value(), e.param->k);
}

// theta <- theta * mask, leaving +0 at every pruned position.
void apply_masks(Network& net) {
  for (const auto& e : net.params().sparse) {
    auto theta = e.param->theta.mutable_value().values();
    const auto mask = e.param->mask.value().values();
    for (size_t i = 0; i < theta.size(); ++i)
      if (mask[i] == 0.0f) theta[i] = 0.0f;
  }
}

// Copies weights (not masks) position by position between identically built networks.
void copy_weights(Network& dst, const Network& src) {
  const auto& a = dst.params();
  const auto& b = src.params();
  for (size_t i = 0; i < a.sparse.size(); ++i) a.sparse[i].param->theta.mutable_value() = b.sparse[i].param->theta.value();
  for (size_t i = 0; i < a.dense.size(); ++i) a.dense[i].var->mutable_value() = b.dense[i].var->value();
  for (size_t i = 0; i < a.buffers.size(); ++i) *a.buffers[i].tensor = *b.buffers[i].tensor;
}

std::vector<Tensor> frozen_snapshot(SearchState& s) {
  std::vector<Tensor> out;
  for (const auto& e : s.active().params().sparse) out.push_back(e.param->mask.value());
  for (const auto& v : s.supernet->alpha_params()) out.push_back(v.value());
  return out;
}

void check_frozen(SearchState& s, const std::vector<Tensor>& snapshot, int epoch) {
  const auto now = frozen_snapshot(s);
  for (size_t i = 0; i < now.size(); ++i) {
    if (!now[i].bitwise_equal(snapshot[i])) {
      const bool is_mask = i < s.active().params().sparse.size();
      throw InvariantError(std::string(is_mask ? "mask '" + s.active().params().sparse[i].name + "'" : "alpha") +
                           " changed during fine-tuning (epoch " + std::to_string(epoch + 1) + ")");
    }
  }
}

json curves_to_json(const std::map<std::string, std::vector<LossPoint>>& curves) {
  json out = json::object();
  for (const auto& [phase, points] : curves) {
    json arr = json::array();
    for (const auto& p : points) arr.push_back({p.epoch, p.train_loss, p.val_loss});
    out[phase] = arr;
  }
  return out;
}

std::map<std::string, std::vector<LossPoint>> curves_from_json(const json& doc) {
  std::map<std::string, std::vector<LossPoint>> out;
  for (const auto& [phase, points] : doc.items()) {
    auto& dst = out[phase];
    for (const auto& p : points) dst.push_back({p.at(0).get<int>(), p.at(1).get<double>(), p.at(2).get<double>()});
  }
  return out;
}

void export_network(const Network& net, const std::string& prefix, CheckpointFile& file, json& ks) {
  const auto& reg = net.params();
  for (const auto& e : reg.sparse) {
    file.tensors.emplace_back(prefix + e.name + ".theta", e.param->theta.value());
    file.tensors.emplace_back(prefix + e.name + ".scores", e.param->scores.value());
    file.tensors.emplace_back(prefix + e.name + ".mask", e.param->mask.value());
    ks[prefix + e.name] = e.param->k;
  }
  for (const auto& e : reg.dense) file.tensors.emplace_back(prefix + e.name, e.var->value());
  for (const auto& e : reg.buffers) file.tensors.emplace_back(prefix + e.name, *e.tensor);
  const auto alpha = net.alpha_params();
  for (size_t i = 0; i < alpha.size(); ++i) file.tensors.emplace_back(prefix + "alpha." + std::to_string(i), alpha[i].value());
}

Tensor fetch(const CheckpointFile& file, const std::string& name, const Tensor& like) {
  const Tensor& t = file.tensor(name);
  if (!t.same_shape(like)) {
    throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                      shape_str(like.shape()));
  }
  return t;
}

void import_network(Network& net, const std::string& prefix, const CheckpointFile& file, const json& ks) {
  const auto& reg = net.params();
  for (const auto& e : reg.sparse) {
    auto& p = *e.param;
    p.theta.mutable_value() = fetch(file, prefix + e.name + ".theta", p.theta.value());
    p.scores.mutable_value() = fetch(file, prefix + e.name + ".scores", p.scores.value());
    p.mask.mutable_value() = fetch(file, prefix + e.name + ".mask", p.mask.value());
    if (!ks.contains(prefix + e.name)) throw FormatError("checkpoint has no k for '" + prefix + e.name + "'");
    p.k = ks.at(prefix + e.name).get<int64_t>();
  }
  for (const auto& e : reg.dense) e.var->mutable_value() = fetch(file, prefix + e.name, e.var->value());
  for (const auto& e : reg.buffers) *e.tensor = fetch(file, prefix + e.name, *e.tensor);
  auto alpha = net.alpha_params();
  for (size_t i = 0; i < alpha.size(); ++i) {
    alpha[i].mutable_value() = fetch(file, prefix + "alpha." + std::to_string(i), alpha[i].value());
  }
}

json optional_genotype(const std::optional<Genotype>& g) { return g ? json(serialize(*g)) : json(nullptr); }

std::optional<Genotype> genotype_field(const json& header, const char* key) {
  if (!header.contains(key) || header.at(key).is_null()) return std::nullopt;
  return deserialize(header.at(key).get<std::string>());
}

}  // namespace

const char* to_string(Phase phase) {
  switch (phase) {
    case Phase::kPretrain: return "pretrain";
    case Phase::kPrune: return "prune";
    case Phase::kFinetune: return "finetune";
    case Phase::kDone: return "done";
  }
  return "?";
}

Phase phase_from_string(const std::string& name) {
  for (Phase p : {Phase::kPretrain, Phase::kPrune, Phase::kFinetune, Phase::kDone})
    if (name == to_string(p)) return p;
  throw FormatError("unknown phase '" + name + "'");
}

const char* to_string(Method method) { return method == Method::kDass ? "dass" : "darts_sparse"; }

Method method_from_string(const std::string& name) {
  if (name == "dass") return Method::kDass;
  if (name == "darts_sparse") return Method::kBaseline;
  throw FormatError("unknown method '" + name + "'");
}

Network& SearchState::active() { return final_net ? *final_net : *supernet; }
const Network& SearchState::active() const { return final_net ? *final_net : *supernet; }

ForwardMode SearchState::forward_mode() const {
  return phase == Phase::kPretrain || phase == Phase::kPrune ? ForwardMode::kDense : ForwardMode::kMasked;
}

SearchState make_state(const SearchConfig& config, Method method, int in_channels, int num_classes) {
  config.validate();
  SearchState s;
  s.config = config;
  s.method = method;
  s.rng = Rng(config.seed);
  s.net_config = config.network(in_channels, num_classes);
  s.net_config.validate();
  s.supernet = Network::supernet(s.net_config, s.rng);
  s.alpha_opt = make_alpha_opt(s);
  return s;
}

void step1_pretrain(SearchState& s, const DataSplit& data, int epochs) {
  require_phase(s, Phase::kPretrain, "step1_pretrain");
  if (epochs < 0) throw ConfigError("step1_pretrain: negative epoch count");
  const auto& cfg = s.config;
  Network& net = *s.supernet;
  SgdOptimizer theta_opt(net.theta_params(), static_cast<float>(cfg.lr_theta), static_cast<float>(cfg.momentum),
                         static_cast<float>(cfg.weight_decay));
  const int64_t per_epoch = std::min(batch_count(data.train, cfg.batch_size), batch_count(data.val, cfg.batch_size));
  const int total = static_cast<int>(per_epoch) * epochs;
  auto& curve = s.curves["pretrain"];
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto train_b = shuffled_batches(data.train, cfg.batch_size, s.rng);
    const auto val_b = shuffled_batches(data.val, cfg.batch_size, s.rng);
    double train_loss = 0.0, val_loss = 0.0;
    for (int64_t b = 0; b < per_epoch; ++b) {
      const float lr = cosine_lr(static_cast<int>(epoch * per_epoch + b), total, static_cast<float>(cfg.lr_theta));
      theta_opt.set_lr(lr);
      net.set_trainable(true, false, false);
      const Batch tb = make_batch(data.train, train_b[static_cast<size_t>(b)], cfg.augment, s.rng);
      train_loss += forward_backward(net, tb, ForwardMode::kDense, "pretrain", epoch, static_cast<size_t>(b), lr);
      audit(s, "weight step");
      theta_opt.step();
      net.clear_grads();

      net.set_trainable(false, false, true);
      const Batch vb = make_batch(data.val, val_b[static_cast<size_t>(b)], false, s.rng);
      val_loss += forward_backward(net, vb, ForwardMode::kDense, "pretrain", epoch, static_cast<size_t>(b),
                                   s.alpha_opt.lr());
      audit(s, "alpha step");
      s.alpha_opt.step();
      net.clear_grads();
    }
    curve.push_back({epoch + 1, train_loss / static_cast<double>(per_epoch), val_loss / static_cast<double>(per_epoch)});
  }
  net.set_trainable(false, false, false);

  s.dense_genotype = derive(net.alpha_table(false), net.alpha_table(true), net.op_set());
  Rng census_rng = Rng(cfg.seed).fork(0xc0de);
  s.dense_params = count_params(*Network::discrete(s.net_config, *s.dense_genotype, census_rng)).total;
  s.phase = Phase::kPrune;
  s.epoch = 0;
}

void step2_prune(SearchState& s, const DataSplit& data, int epochs, double ratio) {
  require_phase(s, Phase::kPrune, "step2_prune");
  if (epochs < 0) throw ConfigError("step2_prune: negative epoch count");
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("pruning ratio must lie in [0, 1]");
  const auto& cfg = s.config;
  if (s.method == Method::kBaseline) {
    s.final_net = instantiate(*s.dense_genotype, s.net_config, s.rng, s.supernet.get(), InheritMode::kAll);
  } else if (cfg.alpha_init_mode == AlphaInitMode::kFresh) {
    reinit_alpha(*s.supernet, s.rng);
    s.alpha_opt = make_alpha_opt(s);
  }
  Network& net = s.active();
  for (const auto& e : net.params().sparse) {
    auto& p = *e.param;
    p.scores.mutable_value() = init_scores(p.theta.value());
    p.k = layer_k_from_ratio(p.numel(), ratio);
  }
  rebinarize(net);

  SgdOptimizer score_opt(net.score_params(), static_cast<float>(cfg.lr_score), static_cast<float>(cfg.momentum),
                         static_cast<float>(cfg.weight_decay));
  const bool alpha_steps = s.method == Method::kDass && cfg.update_alpha_in_prune;
  const bool per_batch = cfg.step2_alternation == Alternation::kPerBatch;
  const int64_t n_train = batch_count(data.train, cfg.batch_size), n_val = batch_count(data.val, cfg.batch_size);
  const int64_t score_batches = alpha_steps && per_batch ? std::min(n_train, n_val) : n_train;
  const int64_t alpha_batches = !alpha_steps ? 0 : per_batch ? score_batches : n_val;
  const int total = static_cast<int>(score_batches) * epochs;
  auto& curve = s.curves["prune"];

  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto train_b = shuffled_batches(data.train, cfg.batch_size, s.rng);
    const auto val_b = alpha_steps ? shuffled_batches(data.val, cfg.batch_size, s.rng) : decltype(train_b){};
    double train_loss = 0.0, val_loss = 0.0;
    auto score_step = [&](int64_t b) {
      const float lr = cosine_lr(static_cast<int>(epoch * score_batches + b), total, static_cast<float>(cfg.lr_score));
      score_opt.set_lr(lr);
      net.set_trainable(false, true, false);
      const Batch tb = make_batch(data.train, train_b[static_cast<size_t>(b)], cfg.augment, s.rng);
      train_loss += forward_backward(net, tb, ForwardMode::kScoreScaled, "prune", epoch, static_cast<size_t>(b), lr);
      audit(s, "score step");
      score_opt.step();
      net.clear_grads();
      rebinarize(net);
    };
    auto alpha_step = [&](int64_t b) {
      net.set_trainable(false, false, true);
      const Batch vb = make_batch(data.val, val_b[static_cast<size_t>(b)], false, s.rng);
      val_loss += forward_backward(net, vb, ForwardMode::kMasked, "prune", epoch, static_cast<size_t>(b),
                                   s.alpha_opt.lr());
      audit(s, "alpha step");
      s.alpha_opt.step();
      net.clear_grads();
    };
    if (per_batch) {
      for (int64_t b = 0; b < score_batches; ++b) {
        score_step(b);
        if (alpha_steps) alpha_step(b);
      }
    } else {
      for (int64_t b = 0; b < score_batches; ++b) score_step(b);
      for (int64_t b = 0; b < alpha_batches; ++b) alpha_step(b);
    }
    const double mean_val = alpha_steps ? val_loss / static_cast<double>(alpha_batches)
                                        : evaluate(net, ForwardMode::kMasked, data.val, cfg.batch_size).loss;
    curve.push_back({epoch + 1, train_loss / static_cast<double>(score_batches), mean_val});
  }
  net.set_trainable(false, false, false);
  s.phase = Phase::kFinetune;
  s.epoch = 0;
}

void step3_finetune(SearchState& s, const DataSplit& data, int epochs, const EpochHook& hook) {
  require_phase(s, Phase::kFinetune, "step3_finetune");
  if (epochs < 0) throw ConfigError("step3_finetune: negative epoch count");
  const auto& cfg = s.config;
  const bool scratch = cfg.finetune_mode == FinetuneMode::kScratch;
  if (s.method == Method::kDass) {
    s.genotype = derive(s.supernet->alpha_table(false), s.supernet->alpha_table(true), s.supernet->op_set());
    if (cfg.finetune_target == FinetuneTarget::kDiscrete) {
      s.final_net = instantiate(*s.genotype, s.net_config, s.rng, s.supernet.get(),
                                scratch ? InheritMode::kMaskOnly : InheritMode::kAll);
    } else if (scratch) {
      copy_weights(*s.supernet, *Network::supernet(s.net_config, s.rng));
    }
  } else {
    s.genotype = s.dense_genotype;
    if (scratch) s.final_net = instantiate(*s.genotype, s.net_config, s.rng, s.final_net.get(), InheritMode::kMaskOnly);
  }
  Network& net = s.active();
  apply_masks(net);
  const auto frozen = frozen_snapshot(s);

  SgdOptimizer opt(net.theta_params(), static_cast<float>(cfg.lr_finetune), static_cast<float>(cfg.momentum),
                   static_cast<float>(cfg.weight_decay));
  const int64_t per_epoch = batch_count(data.train, cfg.batch_size);
  const int total = static_cast<int>(per_epoch) * epochs;
  auto& curve = s.curves["finetune"];
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto train_b = shuffled_batches(data.train, cfg.batch_size, s.rng);
    double train_loss = 0.0;
    for (int64_t b = 0; b < per_epoch; ++b) {
      const float lr = cosine_lr(static_cast<int>(epoch * per_epoch + b), total, static_cast<float>(cfg.lr_finetune));
      opt.set_lr(lr);
      net.set_trainable(true, false, false);
      const Batch tb = make_batch(data.train, train_b[static_cast<size_t>(b)], cfg.augment, s.rng);
      train_loss += forward_backward(net, tb, ForwardMode::kMasked, "finetune", epoch, static_cast<size_t>(b), lr);
      audit(s, "weight step");
      opt.step();
      net.clear_grads();
    }
    net.set_trainable(false, false, false);
    const double val_loss = evaluate(net, ForwardMode::kMasked, data.val, cfg.batch_size).loss;
    curve.push_back({epoch + 1, train_loss / static_cast<double>(per_epoch), val_loss});
    if (hook) hook(s, epoch);
    check_frozen(s, frozen, epoch);
  }
  net.set_trainable(false, false, false);
  s.phase = Phase::kDone;
  s.epoch = 0;
}

EvalResult evaluate(Network& net, ForwardMode mode, const Dataset& data, int batch_size) {
  if (data.size() == 0) throw ConfigError("evaluate: empty dataset");
  int64_t correct = 0;
  double loss_sum = 0.0;
  std::vector<int64_t> idx;
  for (int64_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (int64_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const auto labels = data.batch_labels(idx);
    const Variable logits = net.forward(Variable(data.batch_images(idx)), {mode, false});
    loss_sum += static_cast<double>(ops::cross_entropy(logits, labels).value().item()) * static_cast<double>(idx.size());
    const int64_t classes = logits.shape()[1];
    const float* z = logits.value().data();
    for (size_t n = 0; n < idx.size(); ++n) {
      const float* row = z + static_cast<int64_t>(n) * classes;
      const auto pred = std::max_element(row, row + classes) - row;
      if (pred == labels[n]) ++correct;
    }
  }
  return {100.0 * static_cast<double>(correct) / static_cast<double>(data.size()),
          loss_sum / static_cast<double>(data.size())};
}

MetricsReport build_report(SearchState& s, const DataSplit& data) {
  if (s.phase != Phase::kDone) throw ConfigError("build_report: the run has not finished fine-tuning");
  Network& net = s.active();
  const auto& cfg = s.config;
  MetricsReport r;
  r.method = to_string(s.method);
  r.pruning_ratio = cfg.pruning_ratio;
  r.seed = cfg.seed;
  r.top1_accuracy = evaluate(net, ForwardMode::kMasked, data.test, cfg.batch_size).accuracy;
  r.train_accuracy = evaluate(net, ForwardMode::kMasked, data.train, cfg.batch_size).accuracy;

  const ParamCount pc = count_params(net);
  int64_t k_total = 0;
  for (const auto& e : net.params().sparse) {
    k_total += e.param->k;
    const auto theta = e.param->theta.value().values();
    const auto mask = e.param->mask.value().values();
    for (size_t i = 0; i < theta.size(); ++i) {
      if (mask[i] == 0.0f && std::bit_cast<uint32_t>(theta[i]) != 0u) {
        throw InvariantError("pruned weight " + std::to_string(i) + " of '" + e.name + "' is nonzero");
      }
    }
  }
  if (pc.sparse_nonzero != k_total) {
    throw InvariantError("surviving weights " + std::to_string(pc.sparse_nonzero) + " differ from the k total " +
                         std::to_string(k_total));
  }
  r.params_total = pc.total;
  r.params_nonzero = pc.nonzero;
  r.sparse_params_nonzero = pc.sparse_nonzero;
  r.sparse_k_total = k_total;
  r.baseline_params = cfg.compression_baseline_params > 0.0 ? cfg.compression_baseline_params
                                                            : static_cast<double>(s.dense_params);
  r.compression_rate = compression_rate(r.baseline_params, static_cast<double>(pc.nonzero));
  r.nid = nid(r.top1_accuracy, static_cast<double>(pc.nonzero) / 1000.0);
  r.generalization_gap = generalization_gap(r.train_accuracy, r.top1_accuracy);
  r.loss_curves = s.curves;
  r.validate();
  return r;
}

CheckpointFile state_to_checkpoint(const SearchState& s) {
  CheckpointFile file;
  json ks = json::object();
  export_network(*s.supernet, "supernet.", file, ks);
  if (s.final_net) export_network(*s.final_net, "final.", file, ks);
  const auto& states = s.alpha_opt.states();
  for (size_t i = 0; i < states.size(); ++i) {
    if (states[i].velocity.defined()) file.tensors.emplace_back("opt.alpha." + std::to_string(i), states[i].velocity);
  }
  json header;
  header["phase"] = to_string(s.phase);
  header["method"] = to_string(s.method);
  header["epoch"] = s.epoch;
  header["config"] = json::parse(config_to_json(s.config));
  header["config_hash"] = hash_hex(config_hash(s.config));
  header["rng_seed"] = s.rng.seed();
  header["rng_counter"] = s.rng.counter();
  header["in_channels"] = s.net_config.in_channels;
  header["num_classes"] = s.net_config.num_classes;
  header["dense_genotype"] = optional_genotype(s.dense_genotype);
  header["genotype"] = optional_genotype(s.genotype);
  header["final_genotype"] = s.final_net ? optional_genotype(s.final_net->genotype()) : json(nullptr);
  header["dense_params"] = s.dense_params;
  header["curves"] = curves_to_json(s.curves);
  header["audit"] = {{"checks", s.audit.checks},
                     {"violations", s.audit.violations},
                     {"checks_per_phase", s.audit.checks_per_phase},
                     {"messages", s.audit.messages}};
  header["sparse_k"] = ks;
  file.header_json = header.dump();
  return file;
}

SearchConfig checkpoint_config(const CheckpointFile& file) {
  try {
    const json header = json::parse(file.header_json);
    return config_from_json(header.at("config").dump());
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
}

SearchState state_from_checkpoint(const CheckpointFile& file, const SearchConfig* expected) {
  json header;
  try {
    header = json::parse(file.header_json);
  } catch (const json::parse_error& e) {
    throw FormatError("checkpoint header: parse error at byte " + std::to_string(e.byte));
  }
  SearchState s;
  try {
    s.config = config_from_json(header.at("config").dump());
    const std::string stored = header.at("config_hash").get<std::string>();
    if (stored != hash_hex(config_hash(s.config))) throw FormatError("checkpoint config does not match its stored hash");
    if (expected && stored != hash_hex(config_hash(*expected))) {
      throw ConfigError("checkpoint config hash " + stored + " does not match the current config hash " +
                        hash_hex(config_hash(*expected)));
    }
    s.method = method_from_string(header.at("method").get<std::string>());
    s.phase = phase_from_string(header.at("phase").get<std::string>());
    s.epoch = header.at("epoch").get<int>();
    s.rng = Rng(header.at("rng_seed").get<uint64_t>(), header.at("rng_counter").get<uint64_t>());
    s.net_config = s.config.network(header.at("in_channels").get<int>(), header.at("num_classes").get<int>());
    const json& ks = header.at("sparse_k");
    Rng scratch(0);
    s.supernet = Network::supernet(s.net_config, scratch);
    import_network(*s.supernet, "supernet.", file, ks);
    if (auto g = genotype_field(header, "final_genotype")) {
      s.final_net = Network::discrete(s.net_config, *g, scratch);
      import_network(*s.final_net, "final.", file, ks);
    }
    s.alpha_opt = make_alpha_opt(s);
    auto& states = s.alpha_opt.states();
    for (size_t i = 0; i < states.size(); ++i) {
      const std::string name = "opt.alpha." + std::to_string(i);
      if (file.has(name)) states[i].velocity = file.tensor(name);
    }
    s.dense_genotype = genotype_field(header, "dense_genotype");
    s.genotype = genotype_field(header, "genotype");
    s.dense_params = header.at("dense_params").get<int64_t>();
    s.curves = curves_from_json(header.at("curves"));
    s.audit.checks = header.at("audit").at("checks").get<int64_t>();
    s.audit.violations = header.at("audit").at("violations").get<int64_t>();
    s.audit.checks_per_phase = header.at("audit").at("checks_per_phase").get<std::map<std::string, int64_t>>();
    s.audit.messages = header.at("audit").at("messages").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  return s;
}

void save_checkpoint(const SearchState& state, const std::filesystem::path& path) {
  write_checkpoint_file(state_to_checkpoint(state), path);
}

SearchState load_checkpoint(const std::filesystem::path& path, const SearchConfig* expected) {
  return state_from_checkpoint(read_checkpoint_file(path), expected);
}

RunResult run_pipeline(SearchState s, const DataSplit& data, const RunOptions& options) {
  const auto& cfg = s.config;
  auto finish = [&](Phase completed, const char* file) {
    if (!options.checkpoint_dir.empty()) save_checkpoint(s, options.checkpoint_dir / file);
    if (options.on_phase_end) options.on_phase_end(s, completed);
    return options.stop_after && *options.stop_after == completed;
  };
  if (s.phase == Phase::kPretrain) {
    step1_pretrain(s, data, cfg.epochs_pretrain);
    if (finish(Phase::kPretrain, "ckpt_pretrain.bin")) return {std::move(s), {}, false};
  }
  if (s.phase == Phase::kPrune) {
    step2_prune(s, data, cfg.epochs_prune, cfg.pruning_ratio);
    if (finish(Phase::kPrune, "ckpt_prune.bin")) return {std::move(s), {}, false};
  }
  if (s.phase == Phase::kFinetune) {
    step3_finetune(s, data, cfg.epochs_finetune, options.on_finetune_epoch);
    if (finish(Phase::kFinetune, "ckpt_finetune.bin")) return {std::move(s), {}, false};
  }
  MetricsReport report = build_report(s, data);
  return {std::move(s), std::move(report), true};
}

RunResult run_dass(const SearchConfig& config, const DataSplit& data, const RunOptions& options) {
  return run_pipeline(make_state(config, Method::kDass, data.train.channels, data.train.num_classes), data, options);
}

RunResult run_darts_sparse_baseline(const SearchConfig& config, const DataSplit& data, const RunOptions& options) {
  return run_pipeline(make_state(config, Method::kBaseline, data.train.channels, data.train.num_classes), data, options);
}

Tensor probe_batch(const SearchConfig& config, const Dataset& test) {
  Rng rng = Rng(config.seed).fork(0x9b0be);
  auto order = rng.permutation(test.size());
  order.resize(static_cast<size_t>(std::min<int64_t>(config.probe_size, test.size())));
  return test.batch_images(order);
}

std::vector<SweepRow> run_sweep(const SearchConfig& base, const std::vector<double>& ratios,
                                const std::vector<uint64_t>& seeds, const std::function<void(const SweepRow&)>& on_row) {
  std::vector<SweepRow> rows;
  for (uint64_t seed : seeds) {
    SearchConfig cfg = base;
    cfg.seed = seed;
    const DataSplit data = load_data(cfg);
    SearchState pre = make_state(cfg, Method::kDass, data.train.channels, data.train.num_classes);
    step1_pretrain(pre, data, cfg.epochs_pretrain);
    const CheckpointFile snapshot = state_to_checkpoint(pre);
    const Tensor probe = probe_batch(cfg, data.test);
    for (double ratio : ratios) {
      SweepRow row;
      row.ratio = ratio;
      row.seed = seed;
      for (Method method : {Method::kDass, Method::kBaseline}) {
        SearchState s = state_from_checkpoint(snapshot);
        s.method = method;
        s.config.pruning_ratio = ratio;
        RunResult result = run_pipeline(std::move(s), data);
        auto taus = feature_map_similarity(*pre.supernet, ForwardMode::kDense, result.state.active(),
                                           ForwardMode::kMasked, probe);
        if (method == Method::kDass) {
          row.dass = std::move(result.report);
          row.tau_dass = std::move(taus);
          row.audit_dass = result.state.audit;
        } else {
          row.baseline = std::move(result.report);
          row.tau_baseline = std::move(taus);
          row.audit_baseline = result.state.audit;
        }
      }
      if (on_row) on_row(row);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace dass
