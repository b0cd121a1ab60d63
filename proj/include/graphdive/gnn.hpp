#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "graphdive/autodiff.hpp"
#include "graphdive/graph.hpp"
#include "graphdive/params.hpp"

namespace graphdive {

class Rng;

// Creates tape leaves for parameters on first use, one per parameter. With
// track = false parameters enter the tape as constants (evaluation only).
class ParamBinding {
 public:
  ParamBinding(ad::Tape& tape, ParamStore& params, bool track = true)
      : tape_(tape),
        params_(params),
        track_(track),
        leaves_(params.size()),
        bound_(params.size(), false) {}

  ad::Var operator()(std::string_view name);
  ad::Tape& tape() { return tape_; }
  ParamStore& params() { return params_; }

 private:
  ad::Tape& tape_;
  ParamStore& params_;
  bool track_;
  std::vector<ad::Var> leaves_;
  std::vector<bool> bound_;
};

enum class BackboneKind { GCN, GIN };
std::string_view backbone_name(BackboneKind k);
BackboneKind parse_backbone(std::string_view s);

struct BackboneSpec {
  BackboneKind kind = BackboneKind::GCN;
  std::size_t hidden_dim = 64;
  std::size_t layers = 5;
  std::size_t node_feat_dim = 0;
  std::size_t edge_feat_dim = 0;
};

// Registers, in order: node encoder, then per layer the edge encoder followed
// by the layer weights. Weights are Glorot-uniform, biases and GIN eps zero.
void register_backbone(const BackboneSpec& spec, ParamStore& params, Rng& rng);

// Several graphs packed block-diagonally; node i belongs to graph_of_node[i].
struct GraphBatch {
  std::size_t num_graphs = 0;
  std::size_t num_nodes = 0;
  Mat node_feats;
  Mat edge_feats;
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;
  std::vector<std::size_t> graph_of_node;
  // 1 / sqrt((deg(u)+1)(deg(v)+1)) per edge and 1 / (deg(v)+1) per node,
  // deg counting incoming edges.
  std::vector<double> gcn_edge_coef;
  std::vector<double> gcn_self_coef;
};

GraphBatch make_graph_batch(std::span<const Graph* const> graphs);
GraphBatch make_graph_batch(const Dataset& ds, std::span<const std::size_t> rows);
GraphBatch make_graph_batch(const Graph& g);

struct Encoded {
  ad::Var nodes;               // layer-0 node states, num_nodes x d
  std::vector<ad::Var> edges;  // one encoded edge block per layer, num_edges x d
};

Encoded encode(const GraphBatch& batch, const BackboneSpec& spec, ParamBinding& bind);

// m_v = sum_u c_uv (h_u W + e_uv) + h_v W / (deg(v)+1); h' = ReLU(m_v + b),
// ReLU omitted when `last`.
ad::Var gcn_layer(ad::Var h, ad::Var edge_enc, const GraphBatch& batch, std::size_t layer,
                  bool last, ParamBinding& bind);
// h' = MLP((1+eps) h_v + sum_u ReLU(h_u + e_uv)), trailing ReLU omitted when `last`.
ad::Var gin_layer(ad::Var h, ad::Var edge_enc, const GraphBatch& batch, std::size_t layer,
                  bool last, ParamBinding& bind);

ad::Var readout_mean(ad::Var h, const GraphBatch& batch);

// encode -> K layers -> mean readout. Returns num_graphs x d.
ad::Var extract(const GraphBatch& batch, const BackboneSpec& spec, ParamBinding& bind);

// Value-only convenience for one graph: 1 x d embedding.
Mat extract_embedding(const Graph& g, const BackboneSpec& spec, ParamStore& params);

}  // namespace graphdive
