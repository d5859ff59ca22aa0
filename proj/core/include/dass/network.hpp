#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "dass/genotype.hpp"
#include "dass/operations.hpp"

namespace dass {

struct NetworkConfig {
  int in_channels = 3;
  int num_classes = 10;
  int n_cells = 8;
  int n_nodes = 7;  // two inputs, the intermediate nodes, one output
  int init_channels = 16;
  int stem_multiplier = 3;
  bool include_zero_op = false;
  bool double_sep_conv = true;

  int steps() const { return n_nodes - 3; }
  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Cell depths that are reduction cells: floor(n/3) and floor(2n/3), with the
/// first pushed to at least 1 and duplicates collapsed.
std::vector<int> reduction_positions(int n_cells);

/// Edge between two cell states. A supernet edge mixes every candidate
/// through softmax(alpha); a discrete edge has one op and no alpha.
struct MixedEdge {
  int source = 0;
  int dest = 0;
  Variable alpha;
  std::vector<OpKind> kinds;
  std::vector<std::unique_ptr<Module>> ops;
};

/// sum_o softmax(alpha)_o * o(x), or op(x) for a discrete edge.
Variable mixed_forward(const Variable& x, const MixedEdge& edge, const RunContext& ctx);

/// Elementwise sum of the incoming edge outputs.
Variable node_forward(const std::vector<Variable>& incoming);

class Cell {
 public:
  /// Supernet cell: complete DAG, alpha rows aliased from `alpha`.
  Cell(int steps, int c_prev_prev, int c_prev, int channels, bool reduction, bool reduction_prev,
       const OperationSet& op_set, const std::vector<Variable>& alpha, bool double_sep_conv, Rng& rng);
  /// Discrete cell from a genotype edge list.
  Cell(int steps, int c_prev_prev, int c_prev, int channels, bool reduction, bool reduction_prev,
       const std::vector<Genotype::Edge>& edges, bool double_sep_conv, Rng& rng);

  Variable forward(const Variable& s0, const Variable& s1, const RunContext& ctx);
  void collect(ParamRegistry& reg, const std::string& prefix);

  bool reduction() const { return reduction_; }
  int steps() const { return steps_; }
  int out_channels() const { return steps_ * channels_; }
  const std::vector<MixedEdge>& edges() const { return edges_; }

 private:
  int steps_;
  int channels_;
  bool reduction_;
  std::unique_ptr<Module> pre0_, pre1_;
  std::vector<MixedEdge> edges_;
};

/// Stem, stacked cells, global average pool and a sparse classifier. Holds
/// raw pointers into itself, so it is neither copyable nor movable.
class Network {
 public:
  static std::unique_ptr<Network> supernet(const NetworkConfig& config, Rng& rng);
  static std::unique_ptr<Network> discrete(const NetworkConfig& config, const Genotype& genotype, Rng& rng);

  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;

  /// Logits [N, classes]. Appends each cell's output when `cell_outputs` is set.
  Variable forward(const Variable& images, const RunContext& ctx, std::vector<Variable>* cell_outputs = nullptr);

  bool is_supernet() const { return !genotype_.has_value(); }
  const NetworkConfig& config() const { return config_; }
  const OperationSet& op_set() const { return op_set_; }
  const std::optional<Genotype>& genotype() const { return genotype_; }
  const std::vector<std::unique_ptr<Cell>>& cells() const { return cells_; }
  const ParamRegistry& params() const { return registry_; }

  std::vector<Variable>& alpha_normal() { return alpha_normal_; }
  std::vector<Variable>& alpha_reduce() { return alpha_reduce_; }
  AlphaTable alpha_table(bool reduce) const;

  std::vector<Variable> theta_params() const;
  std::vector<Variable> score_params() const;
  std::vector<Variable> alpha_params() const;
  /// Chooses which parameter groups record gradients.
  void set_trainable(bool theta, bool scores, bool alpha);
  void clear_grads();

 private:
  Network(const NetworkConfig& config, const Genotype* genotype, Rng& rng);

  NetworkConfig config_;
  OperationSet op_set_;
  std::optional<Genotype> genotype_;
  std::unique_ptr<DenseConv> stem_conv_;
  std::unique_ptr<BatchNorm2d> stem_bn_;
  std::vector<std::unique_ptr<Cell>> cells_;
  std::unique_ptr<SparseLinear> classifier_;
  std::vector<Variable> alpha_normal_, alpha_reduce_;
  ParamRegistry registry_;
};

/// Number of edges in a complete cell DAG with `steps` intermediate nodes.
int edges_per_cell(int steps);

}  // namespace dass
