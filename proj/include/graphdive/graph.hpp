#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "graphdive/mat.hpp"

namespace graphdive {

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

// One sample. Undirected graphs store both directions, each direction with
// identical features; edge_feats row i belongs to edges[i]. Self-loops are
// not stored.
struct Graph {
  std::size_t num_nodes = 0;
  std::vector<Edge> edges;
  Mat node_feats;
  Mat edge_feats;

  friend bool operator==(const Graph&, const Graph&) = default;
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

ValidationReport validate_graph(const Graph& g);

// perm[v] is the new index of node v. Throws if perm is not a bijection.
Graph permute_nodes(const Graph& g, std::span<const std::size_t> perm);
std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> perm);

enum class Split { Train, Valid, Test };
std::string_view split_name(Split s);
Split parse_split(std::string_view s);

// values and mask are n x T; mask is 1 where the label is present, 0 where
// missing. Missing entries hold 0 in values and are never read.
struct LabelSet {
  Mat values;
  Mat mask;
  std::size_t tasks() const { return values.cols; }
  std::size_t size() const { return values.rows; }
  bool present(std::size_t i, std::size_t t) const { return mask(i, t) != 0.0; }
  friend bool operator==(const LabelSet&, const LabelSet&) = default;
};

struct Dataset {
  std::vector<Graph> graphs;
  LabelSet labels;
  std::vector<Split> split;
  std::size_t node_feat_dim = 0;
  std::size_t edge_feat_dim = 0;

  std::size_t size() const { return graphs.size(); }
  std::size_t tasks() const { return labels.tasks(); }
  std::vector<std::size_t> indices(Split s) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// Throws std::invalid_argument naming the first broken invariant (including
// any graph that fails validate_graph).
void validate_dataset(const Dataset& ds);

struct TaskStats {
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::size_t missing = 0;
  // Empty when every label of the task is missing.
  std::optional<double> positive_ratio;
};
using ClassStats = std::vector<TaskStats>;

ClassStats class_stats(const Dataset& ds);
// Restricted to the listed rows.
ClassStats class_stats(const LabelSet& labels, std::span<const std::size_t> rows);

}  // namespace graphdive
