#include "graphdive/graph.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>
#include <utility>

namespace graphdive {

namespace {

bool rows_equal(const Mat& m, std::size_t a, std::size_t b) {
  return std::equal(m.row(a).begin(), m.row(a).end(), m.row(b).begin());
}

}  // namespace

ValidationReport validate_graph(const Graph& g) {
  ValidationReport r;
  auto add = [&r](std::string msg) { r.violations.push_back(std::move(msg)); };
  if (g.num_nodes == 0) add("graph has no nodes");
  if (g.node_feats.rows != g.num_nodes)
    add("node feature rows (" + std::to_string(g.node_feats.rows) + ") != num_nodes (" +
        std::to_string(g.num_nodes) + ")");
  if (g.edge_feats.rows != g.edges.size())
    add("edge feature rows (" + std::to_string(g.edge_feats.rows) + ") != edge count (" +
        std::to_string(g.edges.size()) + ")");
  if (!g.node_feats.all_finite()) add("non-finite node feature");
  if (!g.edge_feats.all_finite()) add("non-finite edge feature");

  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> by_pair;
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    const auto [u, v] = g.edges[i];
    if (u >= g.num_nodes || v >= g.num_nodes) {
      add("edge " + std::to_string(i) + " (" + std::to_string(u) + "," + std::to_string(v) +
          "): endpoint out of range");
      continue;
    }
    if (u == v) add("edge " + std::to_string(i) + ": self loop on node " + std::to_string(u));
    by_pair[{u, v}].push_back(i);
  }
  const bool feats_ok = g.edge_feats.rows == g.edges.size();
  for (const auto& [key, ids] : by_pair) {
    const auto rev = by_pair.find({key.second, key.first});
    if (rev == by_pair.end()) {
      add("edge (" + std::to_string(key.first) + "," + std::to_string(key.second) +
          "): missing reverse edge");
      continue;
    }
    if (!feats_ok) continue;
    for (std::size_t i : ids) {
      const bool match = std::any_of(rev->second.begin(), rev->second.end(),
                                     [&](std::size_t j) { return rows_equal(g.edge_feats, i, j); });
      if (!match) {
        add("edge " + std::to_string(i) + ": reverse edge carries different features");
      }
    }
  }
  return r;
}

std::vector<std::size_t> inverse_permutation(std::span<const std::size_t> perm) {
  std::vector<std::size_t> inv(perm.size(), perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] >= perm.size() || inv[perm[i]] != perm.size())
      throw std::invalid_argument("permutation is not a bijection");
    inv[perm[i]] = i;
  }
  return inv;
}

Graph permute_nodes(const Graph& g, std::span<const std::size_t> perm) {
  if (perm.size() != g.num_nodes) throw std::invalid_argument("permutation length != num_nodes");
  const auto inv = inverse_permutation(perm);
  Graph out;
  out.num_nodes = g.num_nodes;
  out.node_feats = Mat(g.node_feats.rows, g.node_feats.cols);
  for (std::size_t nv = 0; nv < g.num_nodes; ++nv) {
    const auto src = g.node_feats.row(inv[nv]);
    std::copy(src.begin(), src.end(), out.node_feats.row(nv).begin());
  }
  out.edges.reserve(g.edges.size());
  for (const auto& e : g.edges) out.edges.push_back({perm[e.src], perm[e.dst]});
  out.edge_feats = g.edge_feats;
  return out;
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "valid") return Split::Valid;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split[i] == s) out.push_back(i);
  return out;
}

void validate_dataset(const Dataset& ds) {
  const auto& L = ds.labels;
  if (L.tasks() == 0) throw std::invalid_argument("dataset: task count must be >= 1");
  if (L.size() != ds.graphs.size())
    throw std::invalid_argument("dataset: label rows != graph count");
  if (!L.mask.same_shape(L.values)) throw std::invalid_argument("dataset: mask shape mismatch");
  if (ds.split.size() != ds.graphs.size())
    throw std::invalid_argument("dataset: split tags != graph count");
  for (std::size_t i = 0; i < L.values.size(); ++i) {
    const double m = L.mask.data[i], v = L.values.data[i];
    if (m != 0.0 && m != 1.0) throw std::invalid_argument("dataset: mask entries must be 0/1");
    if (m == 1.0 && v != 0.0 && v != 1.0)
      throw std::invalid_argument("dataset: labels must be 0/1");
  }
  for (std::size_t i = 0; i < ds.graphs.size(); ++i) {
    const Graph& g = ds.graphs[i];
    if (g.node_feats.cols != ds.node_feat_dim || g.edge_feats.cols != ds.edge_feat_dim)
      throw std::invalid_argument("graph " + std::to_string(i) + ": feature width mismatch");
    const auto rep = validate_graph(g);
    if (!rep.ok())
      throw std::invalid_argument("graph " + std::to_string(i) + ": " + rep.violations.front());
  }
}

ClassStats class_stats(const LabelSet& labels, std::span<const std::size_t> rows) {
  ClassStats stats(labels.tasks());
  for (std::size_t t = 0; t < labels.tasks(); ++t) {
    auto& s = stats[t];
    for (std::size_t i : rows) {
      if (!labels.present(i, t)) {
        ++s.missing;
      } else if (labels.values(i, t) != 0.0) {
        ++s.positives;
      } else {
        ++s.negatives;
      }
    }
    const std::size_t present = s.positives + s.negatives;
    if (present > 0) s.positive_ratio = static_cast<double>(s.positives) / present;
  }
  return stats;
}

ClassStats class_stats(const Dataset& ds) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), 0);
  return class_stats(ds.labels, all);
}

}  // namespace graphdive
