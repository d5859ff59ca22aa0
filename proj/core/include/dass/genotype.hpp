#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dass/operations.hpp"

namespace dass {

class Network;
struct NetworkConfig;

/// Discrete cell description. Each intermediate node (states 2, 3, ...)
/// keeps exactly two (operation, source state) pairs; `normal` and `reduce`
/// list them node by node. Source indices are below the destination state.
struct Genotype {
  struct Edge {
    OpKind op = OpKind::kSkipConnect;
    int source = 0;
    bool operator==(const Edge&) const = default;
  };
  std::vector<Edge> normal;
  std::vector<Edge> reduce;
  std::vector<int> concat_nodes;

  bool operator==(const Genotype&) const = default;

  /// Number of intermediate nodes described.
  int steps() const { return static_cast<int>(normal.size() / 2); }
  /// Throws ConfigError describing the first violated invariant.
  void validate() const;
};

/// One architecture-parameter row per edge, in canonical edge order:
/// destination node ascending, then source state ascending.
using AlphaTable = std::vector<std::vector<float>>;

/// Per edge, picks the strongest candidate (zero op excluded); per node,
/// keeps the two edges whose chosen op dominates its row most. Ties go to the
/// lower op index, then the lower source index.
Genotype derive(const AlphaTable& alpha_normal, const AlphaTable& alpha_reduce, const OperationSet& op_set);

/// True when derive() is unchanged by adding `scale` to every alpha entry
/// and by multiplying every entry by `scale` (scale > 0).
bool argmax_invariance_check(const AlphaTable& alpha_normal, const AlphaTable& alpha_reduce, const OperationSet& op_set,
                             float scale);

/// JSON document with fields normal, reduce, concat_nodes.
std::string serialize(const Genotype& genotype);
/// Throws FormatError on malformed JSON (with byte position) and
/// ConfigError when the document violates a genotype invariant.
Genotype deserialize(const std::string& text);

/// What a discrete network copies from a trained supernet.
enum class InheritMode { kNone, kMaskOnly, kAll };

/// Builds the discrete network for `genotype`. With a source network, every
/// tensor whose name survives in the discrete network is copied (all of them,
/// or only masks and their k for kMaskOnly); otherwise weights are freshly
/// initialized from `rng`.
std::unique_ptr<Network> instantiate(const Genotype& genotype, const NetworkConfig& config, Rng& rng,
                                     const Network* inherited = nullptr, InheritMode mode = InheritMode::kAll);

}  // namespace dass
