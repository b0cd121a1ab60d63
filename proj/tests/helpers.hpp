#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "graphdive/graph.hpp"
#include "graphdive/rng.hpp"

namespace testutil {

using graphdive::Edge;
using graphdive::Graph;
using graphdive::Mat;

// Undirected graph from a list of pairs; both directions share features.
inline Graph undirected(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                        std::size_t fv, std::size_t fe, graphdive::Rng& rng) {
  Graph g;
  g.num_nodes = n;
  g.node_feats = Mat(n, fv);
  for (double& x : g.node_feats.data) x = rng.uniform(-1.0, 1.0);
  std::vector<double> feats;
  for (auto [u, v] : pairs) {
    std::vector<double> f(fe);
    for (double& x : f) x = rng.uniform(-1.0, 1.0);
    g.edges.push_back({u, v});
    g.edges.push_back({v, u});
    feats.insert(feats.end(), f.begin(), f.end());
    feats.insert(feats.end(), f.begin(), f.end());
  }
  g.edge_feats = Mat(g.edges.size(), fe);
  g.edge_feats.data = std::move(feats);
  return g;
}

// Connected random graph: a random tree plus a few extra edges.
inline Graph random_graph(std::size_t n, std::size_t fv, std::size_t fe, graphdive::Rng& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::vector<bool>> adj(n, std::vector<bool>(n, false));
  for (std::size_t i = 1; i < n; ++i) {
    const std::size_t j = rng.below(i);
    pairs.emplace_back(j, i);
    adj[i][j] = adj[j][i] = true;
  }
  for (std::size_t k = 0; k < n / 2; ++k) {
    const std::size_t a = rng.below(n), b = rng.below(n);
    if (a == b || adj[a][b]) continue;
    adj[a][b] = adj[b][a] = true;
    pairs.emplace_back(a, b);
  }
  return undirected(n, pairs, fv, fe, rng);
}

inline std::vector<std::size_t> random_perm(std::size_t n, graphdive::Rng& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  rng.shuffle(p);
  return p;
}

inline Mat random_mat(std::size_t r, std::size_t c, graphdive::Rng& rng, double scale = 1.0) {
  Mat m(r, c);
  for (double& x : m.data) x = rng.uniform(-scale, scale);
  return m;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) d = std::max(d, std::abs(a.data[i] - b.data[i]));
  return d;
}

}  // namespace testutil
