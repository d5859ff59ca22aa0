#include "dass/network.hpp"

#include <algorithm>

#include "dass/error.hpp"

namespace dass {

void NetworkConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError(field + ": " + why); };
  if (in_channels < 1) fail("in_channels", "must be positive");
  if (num_classes < 2) fail("num_classes", "must be at least 2");
  if (n_cells < 2) fail("n_cells", "must be at least 2");
  if (n_nodes < 4) fail("n_nodes", "must be at least 4 (two inputs, one intermediate, one output)");
  if (init_channels < 2) fail("init_channels", "must be at least 2");
  if (stem_multiplier < 1) fail("stem_multiplier", "must be positive");
}

std::vector<int> reduction_positions(int n_cells) {
  std::vector<int> out;
  const int first = std::max(n_cells / 3, 1);
  const int second = 2 * n_cells / 3;
  if (first < n_cells) out.push_back(first);
  if (second > first && second < n_cells) out.push_back(second);
  return out;
}

int edges_per_cell(int steps) { return steps * (steps + 3) / 2; }

Variable mixed_forward(const Variable& x, const MixedEdge& edge, const RunContext& ctx) {
  if (!edge.alpha.defined()) {
    if (edge.ops.size() != 1) throw ConfigError("discrete edge must hold exactly one operation");
    return edge.ops.front()->forward(x, ctx);
  }
  const Variable weights = ops::softmax(edge.alpha);
  std::vector<Variable> outs;
  outs.reserve(edge.ops.size());
  for (const auto& op : edge.ops) outs.push_back(op->forward(x, ctx));
  return ops::mix(weights, outs);
}

Variable node_forward(const std::vector<Variable>& incoming) {
  if (incoming.size() == 1) return incoming.front();
  return ops::add_n(incoming);
}

namespace {

std::unique_ptr<Module> make_preprocess0(int c_prev_prev, int channels, bool reduction_prev, Rng& rng) {
  if (reduction_prev) return std::make_unique<FactorizedReduce>(c_prev_prev, channels, rng);
  return std::make_unique<ReluConvBn>(c_prev_prev, channels, rng);
}

}  // namespace

Cell::Cell(int steps, int c_prev_prev, int c_prev, int channels, bool reduction, bool reduction_prev,
           const OperationSet& op_set, const std::vector<Variable>& alpha, bool double_sep_conv, Rng& rng)
    : steps_(steps), channels_(channels), reduction_(reduction) {
  pre0_ = make_preprocess0(c_prev_prev, channels, reduction_prev, rng);
  pre1_ = std::make_unique<ReluConvBn>(c_prev, channels, rng);
  size_t e = 0;
  for (int j = 0; j < steps; ++j) {
    for (int src = 0; src < j + 2; ++src, ++e) {
      const int stride = reduction && src < 2 ? 2 : 1;
      MixedEdge edge;
      edge.source = src;
      edge.dest = j + 2;
      edge.alpha = alpha.at(e);
      edge.kinds = op_set.ops;
      for (OpKind kind : op_set.ops) edge.ops.push_back(make_operation(kind, channels, stride, double_sep_conv, rng));
      edges_.push_back(std::move(edge));
    }
  }
}

Cell::Cell(int steps, int c_prev_prev, int c_prev, int channels, bool reduction, bool reduction_prev,
           const std::vector<Genotype::Edge>& edges, bool double_sep_conv, Rng& rng)
    : steps_(steps), channels_(channels), reduction_(reduction) {
  if (edges.size() != static_cast<size_t>(2 * steps)) {
    throw ConfigError("genotype lists " + std::to_string(edges.size()) + " edges for " + std::to_string(steps) +
                      " intermediate nodes");
  }
  pre0_ = make_preprocess0(c_prev_prev, channels, reduction_prev, rng);
  pre1_ = std::make_unique<ReluConvBn>(c_prev, channels, rng);
  for (int j = 0; j < steps; ++j) {
    for (int k = 0; k < 2; ++k) {
      const Genotype::Edge& ge = edges[static_cast<size_t>(2 * j + k)];
      const int stride = reduction && ge.source < 2 ? 2 : 1;
      MixedEdge edge;
      edge.source = ge.source;
      edge.dest = j + 2;
      edge.kinds = {ge.op};
      edge.ops.push_back(make_operation(ge.op, channels, stride, double_sep_conv, rng));
      edges_.push_back(std::move(edge));
    }
  }
}

Variable Cell::forward(const Variable& s0, const Variable& s1, const RunContext& ctx) {
  std::vector<Variable> states{pre0_->forward(s0, ctx), pre1_->forward(s1, ctx)};
  if (states[0].shape() != states[1].shape()) {
    throw ShapeError("cell: preprocessed inputs disagree " + shape_str(states[0].shape()) + " vs " +
                     shape_str(states[1].shape()));
  }
  size_t e = 0;
  for (int j = 0; j < steps_; ++j) {
    std::vector<Variable> incoming;
    for (; e < edges_.size() && edges_[e].dest == j + 2; ++e) {
      incoming.push_back(mixed_forward(states[static_cast<size_t>(edges_[e].source)], edges_[e], ctx));
    }
    states.push_back(node_forward(incoming));
  }
  return ops::concat_channels(std::vector<Variable>(states.begin() + 2, states.end()));
}

void Cell::collect(ParamRegistry& reg, const std::string& prefix) {
  pre0_->collect(reg, prefix + ".pre0");
  pre1_->collect(reg, prefix + ".pre1");
  for (auto& edge : edges_) {
    const std::string ep = prefix + ".edge_" + std::to_string(edge.source) + "_" + std::to_string(edge.dest);
    for (size_t i = 0; i < edge.ops.size(); ++i) edge.ops[i]->collect(reg, ep + "." + std::string(op_name(edge.kinds[i])));
  }
}

std::unique_ptr<Network> Network::supernet(const NetworkConfig& config, Rng& rng) {
  return std::unique_ptr<Network>(new Network(config, nullptr, rng));
}

std::unique_ptr<Network> Network::discrete(const NetworkConfig& config, const Genotype& genotype, Rng& rng) {
  return std::unique_ptr<Network>(new Network(config, &genotype, rng));
}

Network::Network(const NetworkConfig& config, const Genotype* genotype, Rng& rng)
    : config_(config), op_set_(OperationSet::standard(config.include_zero_op)) {
  config_.validate();
  const int steps = config_.steps();
  if (genotype) {
    genotype->validate();
    if (genotype->steps() != steps) {
      throw ConfigError("genotype has " + std::to_string(genotype->steps()) + " intermediate nodes but config n_nodes=" +
                        std::to_string(config_.n_nodes) + " implies " + std::to_string(steps));
    }
    genotype_ = *genotype;
  } else {
    const int n_edges = edges_per_cell(steps);
    for (auto* table : {&alpha_normal_, &alpha_reduce_}) {
      for (int e = 0; e < n_edges; ++e) {
        Tensor row(Shape{static_cast<int64_t>(op_set_.size())});
        for (float& v : row.values()) v = static_cast<float>(1e-3 * rng.normal());
        table->push_back(Variable(std::move(row), true));
      }
    }
  }

  const int c_stem = config_.stem_multiplier * config_.init_channels;
  stem_conv_ = std::make_unique<DenseConv>(config_.in_channels, c_stem, 3, ops::Conv2dOptions{.padding = 1}, rng);
  stem_bn_ = std::make_unique<BatchNorm2d>(c_stem, true);

  const std::vector<int> reductions = reduction_positions(config_.n_cells);
  int c_prev_prev = c_stem, c_prev = c_stem, c_curr = config_.init_channels;
  bool reduction_prev = false;
  for (int i = 0; i < config_.n_cells; ++i) {
    const bool reduction = std::find(reductions.begin(), reductions.end(), i) != reductions.end();
    if (reduction) c_curr *= 2;
    if (genotype_) {
      cells_.push_back(std::make_unique<Cell>(steps, c_prev_prev, c_prev, c_curr, reduction, reduction_prev,
                                              reduction ? genotype_->reduce : genotype_->normal,
                                              config_.double_sep_conv, rng));
    } else {
      cells_.push_back(std::make_unique<Cell>(steps, c_prev_prev, c_prev, c_curr, reduction, reduction_prev, op_set_,
                                              reduction ? alpha_reduce_ : alpha_normal_, config_.double_sep_conv,
                                              rng));
    }
    reduction_prev = reduction;
    c_prev_prev = c_prev;
    c_prev = cells_.back()->out_channels();
  }
  classifier_ = std::make_unique<SparseLinear>(c_prev, config_.num_classes, rng);

  stem_conv_->collect(registry_, "stem.conv");
  stem_bn_->collect(registry_, "stem.bn");
  for (size_t i = 0; i < cells_.size(); ++i) cells_[i]->collect(registry_, "cells." + std::to_string(i));
  classifier_->collect(registry_, "classifier");
}

Variable Network::forward(const Variable& images, const RunContext& ctx, std::vector<Variable>* cell_outputs) {
  const Variable stem = stem_bn_->forward(stem_conv_->forward(images), ctx);
  Variable s0 = stem, s1 = stem;
  for (auto& cell : cells_) {
    Variable out = cell->forward(s0, s1, ctx);
    if (cell_outputs) cell_outputs->push_back(out);
    s0 = std::move(s1);
    s1 = std::move(out);
  }
  return classifier_->forward(ops::global_avg_pool(s1), ctx.mode);
}

AlphaTable Network::alpha_table(bool reduce) const {
  AlphaTable table;
  for (const auto& row : reduce ? alpha_reduce_ : alpha_normal_) {
    table.emplace_back(row.value().values().begin(), row.value().values().end());
  }
  return table;
}

std::vector<Variable> Network::theta_params() const {
  std::vector<Variable> out;
  for (const auto& e : registry_.sparse) out.push_back(e.param->theta);
  for (const auto& e : registry_.dense) out.push_back(*e.var);
  return out;
}

std::vector<Variable> Network::score_params() const {
  std::vector<Variable> out;
  for (const auto& e : registry_.sparse) out.push_back(e.param->scores);
  return out;
}

std::vector<Variable> Network::alpha_params() const {
  std::vector<Variable> out(alpha_normal_);
  out.insert(out.end(), alpha_reduce_.begin(), alpha_reduce_.end());
  return out;
}

void Network::set_trainable(bool theta, bool scores, bool alpha) {
  for (auto& v : theta_params()) v.set_requires_grad(theta);
  for (auto& v : score_params()) v.set_requires_grad(scores);
  for (auto& v : alpha_params()) v.set_requires_grad(alpha);
}

void Network::clear_grads() {
  for (auto& v : theta_params()) v.clear_grad();
  for (auto& v : score_params()) v.clear_grad();
  for (auto& v : alpha_params()) v.clear_grad();
}

}  // namespace dass
