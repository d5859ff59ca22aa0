#include "dass/genotype.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dass/error.hpp"
#include "dass/network.hpp"
#include "json.hpp"

namespace dass {
namespace {

using nlohmann::json;

void validate_edges(const std::vector<Genotype::Edge>& edges, int steps, const char* which) {
  const std::string tag(which);
  if (edges.size() != static_cast<size_t>(2 * steps)) {
    throw ConfigError("genotype " + tag + ": expected " + std::to_string(2 * steps) + " edges (2 per node), got " +
                      std::to_string(edges.size()));
  }
  for (int j = 0; j < steps; ++j) {
    const auto& a = edges[static_cast<size_t>(2 * j)];
    const auto& b = edges[static_cast<size_t>(2 * j + 1)];
    for (const auto& e : {a, b}) {
      if (e.source < 0 || e.source >= j + 2) {
        throw ConfigError("genotype " + tag + ": node " + std::to_string(j + 2) + " has source " +
                          std::to_string(e.source) + " outside [0, " + std::to_string(j + 2) + ")");
      }
    }
    if (a.source == b.source) {
      throw ConfigError("genotype " + tag + ": node " + std::to_string(j + 2) + " repeats source " +
                        std::to_string(a.source));
    }
  }
}

int steps_from_edges(size_t n_edges) {
  for (int s = 1; edges_per_cell(s) <= static_cast<int>(n_edges); ++s) {
    if (edges_per_cell(s) == static_cast<int>(n_edges)) return s;
  }
  throw ConfigError("alpha table with " + std::to_string(n_edges) + " rows is not a complete cell DAG");
}

std::vector<Genotype::Edge> derive_cell(const AlphaTable& alpha, const OperationSet& op_set) {
  const int steps = steps_from_edges(alpha.size());
  std::vector<Genotype::Edge> out;
  size_t e = 0;
  for (int j = 0; j < steps; ++j) {
    struct Candidate {
      int source;
      size_t op;
      float strength;
    };
    std::vector<Candidate> cands;
    for (int src = 0; src < j + 2; ++src, ++e) {
      const auto& row = alpha[e];
      if (row.size() != op_set.size()) {
        throw ConfigError("alpha row " + std::to_string(e) + " has " + std::to_string(row.size()) + " entries for " +
                          std::to_string(op_set.size()) + " operations");
      }
      std::optional<size_t> best;
      for (size_t o = 0; o < row.size(); ++o) {
        if (op_set.ops[o] == OpKind::kZero) continue;
        if (!best || row[o] > row[*best]) best = o;
      }
      if (!best) throw ConfigError("operation set has no selectable operation");
      cands.push_back({src, *best, row[*best]});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.strength != b.strength) return a.strength > b.strength;
      if (a.op != b.op) return a.op < b.op;
      return a.source < b.source;
    });
    std::vector<Candidate> kept(cands.begin(), cands.begin() + 2);
    std::sort(kept.begin(), kept.end(), [](const Candidate& a, const Candidate& b) { return a.source < b.source; });
    for (const auto& c : kept) out.push_back({op_set.ops[c.op], c.source});
  }
  return out;
}

json edges_to_json(const std::vector<Genotype::Edge>& edges) {
  json arr = json::array();
  for (const auto& e : edges) arr.push_back(json::array({std::string(op_name(e.op)), e.source}));
  return arr;
}

std::vector<Genotype::Edge> edges_from_json(const json& doc, const char* field) {
  if (!doc.contains(field) || !doc[field].is_array()) {
    throw FormatError(std::string("genotype: missing array field '") + field + "'");
  }
  std::vector<Genotype::Edge> out;
  for (const auto& item : doc[field]) {
    if (!item.is_array() || item.size() != 2 || !item[0].is_string() || !item[1].is_number_integer()) {
      throw FormatError(std::string("genotype: entries of '") + field + "' must be [op_name, source] pairs");
    }
    const auto name = item[0].get<std::string>();
    const auto kind = op_from_name(name);
    if (!kind) throw FormatError("genotype: unknown operation '" + name + "'");
    out.push_back({*kind, item[1].get<int>()});
  }
  return out;
}

}  // namespace

void Genotype::validate() const {
  const int n = steps();
  if (n < 1) throw ConfigError("genotype: normal cell lists no edges");
  validate_edges(normal, n, "normal");
  validate_edges(reduce, n, "reduce");
  std::vector<int> expected;
  for (int j = 0; j < n; ++j) expected.push_back(j + 2);
  if (concat_nodes != expected) throw ConfigError("genotype: concat_nodes must list every intermediate node in order");
}

Genotype derive(const AlphaTable& alpha_normal, const AlphaTable& alpha_reduce, const OperationSet& op_set) {
  Genotype g;
  g.normal = derive_cell(alpha_normal, op_set);
  g.reduce = derive_cell(alpha_reduce, op_set);
  for (int j = 0; j < g.steps(); ++j) g.concat_nodes.push_back(j + 2);
  return g;
}

bool argmax_invariance_check(const AlphaTable& alpha_normal, const AlphaTable& alpha_reduce, const OperationSet& op_set,
                             float scale) {
  if (!(scale > 0.0f)) throw ConfigError("argmax_invariance_check: scale must be positive");
  auto transform = [](AlphaTable t, auto fn) {
    for (auto& row : t)
      for (float& v : row) v = fn(v);
    return t;
  };
  const Genotype base = derive(alpha_normal, alpha_reduce, op_set);
  auto shift = [scale](float v) { return v + scale; };
  auto mult = [scale](float v) { return v * scale; };
  const Genotype shifted = derive(transform(alpha_normal, shift), transform(alpha_reduce, shift), op_set);
  const Genotype scaled = derive(transform(alpha_normal, mult), transform(alpha_reduce, mult), op_set);
  return base == shifted && base == scaled;
}

std::string serialize(const Genotype& genotype) {
  json doc;
  doc["normal"] = edges_to_json(genotype.normal);
  doc["reduce"] = edges_to_json(genotype.reduce);
  doc["concat_nodes"] = genotype.concat_nodes;
  return doc.dump(2) + "\n";
}

Genotype deserialize(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError("genotype: parse error at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!doc.is_object()) throw FormatError("genotype: document must be a JSON object");
  Genotype g;
  g.normal = edges_from_json(doc, "normal");
  g.reduce = edges_from_json(doc, "reduce");
  if (!doc.contains("concat_nodes") || !doc["concat_nodes"].is_array()) {
    throw FormatError("genotype: missing array field 'concat_nodes'");
  }
  for (const auto& v : doc["concat_nodes"]) {
    if (!v.is_number_integer()) throw FormatError("genotype: concat_nodes must hold integers");
    g.concat_nodes.push_back(v.get<int>());
  }
  g.validate();
  return g;
}

std::unique_ptr<Network> instantiate(const Genotype& genotype, const NetworkConfig& config, Rng& rng,
                                     const Network* inherited, InheritMode mode) {
  auto net = Network::discrete(config, genotype, rng);
  if (!inherited || mode == InheritMode::kNone) return net;

  const ParamRegistry& src = inherited->params();
  std::map<std::string, SparseParam*> sparse;
  std::map<std::string, Variable*> dense;
  std::map<std::string, Tensor*> buffers;
  for (const auto& e : src.sparse) sparse[e.name] = e.param;
  for (const auto& e : src.dense) dense[e.name] = e.var;
  for (const auto& e : src.buffers) buffers[e.name] = e.tensor;

  auto check_shape = [](const std::string& name, const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) {
      throw ConfigError("instantiate: '" + name + "' has shape " + shape_str(a.shape()) + " in the source but " +
                        shape_str(b.shape()) + " in the genotype network");
    }
  };
  for (const auto& e : net->params().sparse) {
    const auto it = sparse.find(e.name);
    if (it == sparse.end()) throw ConfigError("instantiate: source network has no tensor '" + e.name + "'");
    const SparseParam& from = *it->second;
    check_shape(e.name, from.theta.value(), e.param->theta.value());
    e.param->mask.mutable_value() = from.mask.value();
    e.param->k = from.k;
    if (mode == InheritMode::kAll) {
      e.param->theta.mutable_value() = from.theta.value();
      e.param->scores.mutable_value() = from.scores.value();
    }
  }
  if (mode == InheritMode::kAll) {
    for (const auto& e : net->params().dense) {
      const auto it = dense.find(e.name);
      if (it == dense.end()) throw ConfigError("instantiate: source network has no tensor '" + e.name + "'");
      check_shape(e.name, it->second->value(), e.var->value());
      e.var->mutable_value() = it->second->value();
    }
    for (const auto& e : net->params().buffers) {
      const auto it = buffers.find(e.name);
      if (it == buffers.end()) throw ConfigError("instantiate: source network has no buffer '" + e.name + "'");
      check_shape(e.name, *it->second, *e.tensor);
      *e.tensor = *it->second;
    }
  }
  return net;
}

}  // namespace dass
