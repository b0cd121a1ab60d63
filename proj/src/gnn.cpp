#include "graphdive/gnn.hpp"

#include <cmath>
#include <stdexcept>

#include "graphdive/rng.hpp"

namespace graphdive {

ad::Var ParamBinding::operator()(std::string_view name) {
  const std::size_t i = params_.index_of(name);
  if (!bound_[i]) {
    leaves_[i] = track_ ? tape_.leaf(params_[i]) : tape_.constant(params_[i].value);
    bound_[i] = true;
  }
  return leaves_[i];
}

std::string_view backbone_name(BackboneKind k) { return k == BackboneKind::GCN ? "gcn" : "gin"; }

BackboneKind parse_backbone(std::string_view s) {
  if (s == "gcn") return BackboneKind::GCN;
  if (s == "gin") return BackboneKind::GIN;
  throw std::invalid_argument("unknown backbone '" + std::string(s) + "'");
}

namespace {

std::string layer_key(std::size_t k, const char* suffix) {
  return "gnn.l" + std::to_string(k) + "." + suffix;
}

}  // namespace

void register_backbone(const BackboneSpec& spec, ParamStore& params, Rng& rng) {
  if (spec.layers == 0 || spec.hidden_dim == 0)
    throw std::invalid_argument("backbone: layers and hidden_dim must be >= 1");
  const std::size_t d = spec.hidden_dim;
  params.add_glorot("gnn.node_enc.w", spec.node_feat_dim, d, rng);
  params.add_zeros("gnn.node_enc.b", 1, d);
  for (std::size_t k = 0; k < spec.layers; ++k) {
    params.add_glorot(layer_key(k, "edge_enc.w"), spec.edge_feat_dim, d, rng);
    params.add_zeros(layer_key(k, "edge_enc.b"), 1, d);
    if (spec.kind == BackboneKind::GCN) {
      params.add_glorot(layer_key(k, "w"), d, d, rng);
      params.add_zeros(layer_key(k, "b"), 1, d);
    } else {
      params.add_glorot(layer_key(k, "mlp1.w"), d, d, rng);
      params.add_zeros(layer_key(k, "mlp1.b"), 1, d);
      params.add_glorot(layer_key(k, "mlp2.w"), d, d, rng);
      params.add_zeros(layer_key(k, "mlp2.b"), 1, d);
      params.add_zeros(layer_key(k, "eps"), 1, 1);
    }
  }
}

GraphBatch make_graph_batch(std::span<const Graph* const> graphs) {
  if (graphs.empty()) throw std::invalid_argument("graph batch: no graphs");
  GraphBatch b;
  b.num_graphs = graphs.size();
  std::size_t nodes = 0, edges = 0;
  for (const Graph* g : graphs) {
    if (g->num_nodes == 0) throw std::invalid_argument("graph batch: empty graph");
    nodes += g->num_nodes;
    edges += g->edges.size();
  }
  const std::size_t fv = graphs.front()->node_feats.cols;
  const std::size_t fe = graphs.front()->edge_feats.cols;
  b.num_nodes = nodes;
  b.node_feats = Mat(nodes, fv);
  b.edge_feats = Mat(edges, fe);
  b.src.reserve(edges);
  b.dst.reserve(edges);
  b.graph_of_node.reserve(nodes);
  std::size_t node_off = 0, edge_off = 0;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const Graph& g = *graphs[gi];
    if (g.node_feats.cols != fv || g.edge_feats.cols != fe)
      throw std::invalid_argument("graph batch: feature width mismatch");
    std::copy(g.node_feats.data.begin(), g.node_feats.data.end(),
              b.node_feats.data.begin() + node_off * fv);
    std::copy(g.edge_feats.data.begin(), g.edge_feats.data.end(),
              b.edge_feats.data.begin() + edge_off * fe);
    for (const auto& e : g.edges) {
      b.src.push_back(e.src + node_off);
      b.dst.push_back(e.dst + node_off);
    }
    b.graph_of_node.insert(b.graph_of_node.end(), g.num_nodes, gi);
    node_off += g.num_nodes;
    edge_off += g.edges.size();
  }
  std::vector<double> deg(nodes, 0.0);
  for (std::size_t v : b.dst) deg[v] += 1.0;
  b.gcn_edge_coef.resize(edges);
  for (std::size_t i = 0; i < edges; ++i)
    b.gcn_edge_coef[i] = 1.0 / std::sqrt((deg[b.src[i]] + 1.0) * (deg[b.dst[i]] + 1.0));
  b.gcn_self_coef.resize(nodes);
  for (std::size_t v = 0; v < nodes; ++v) b.gcn_self_coef[v] = 1.0 / (deg[v] + 1.0);
  return b;
}

GraphBatch make_graph_batch(const Dataset& ds, std::span<const std::size_t> rows) {
  std::vector<const Graph*> ptrs;
  ptrs.reserve(rows.size());
  for (std::size_t r : rows) ptrs.push_back(&ds.graphs.at(r));
  return make_graph_batch(ptrs);
}

GraphBatch make_graph_batch(const Graph& g) {
  const Graph* p = &g;
  return make_graph_batch(std::span<const Graph* const>(&p, 1));
}

Encoded encode(const GraphBatch& batch, const BackboneSpec& spec, ParamBinding& bind) {
  auto& tape = bind.tape();
  if (batch.node_feats.cols != spec.node_feat_dim || batch.edge_feats.cols != spec.edge_feat_dim)
    throw std::invalid_argument("encode: feature width does not match encoder");
  Encoded out;
  const ad::Var x = tape.constant(batch.node_feats);
  out.nodes = ad::add_row(ad::matmul(x, bind("gnn.node_enc.w")), bind("gnn.node_enc.b"));
  const ad::Var e = tape.constant(batch.edge_feats);
  for (std::size_t k = 0; k < spec.layers; ++k) {
    out.edges.push_back(
        ad::add_row(ad::matmul(e, bind(layer_key(k, "edge_enc.w"))), bind(layer_key(k, "edge_enc.b"))));
  }
  return out;
}

ad::Var gcn_layer(ad::Var h, ad::Var edge_enc, const GraphBatch& batch, std::size_t layer,
                  bool last, ParamBinding& bind) {
  const ad::Var hw = ad::matmul(h, bind(layer_key(layer, "w")));
  const ad::Var msg = ad::add(ad::gather_rows(hw, batch.src), edge_enc);
  const ad::Var agg = ad::scatter_rows(msg, batch.dst, batch.gcn_edge_coef, batch.num_nodes);
  const ad::Var self = ad::row_scale(hw, batch.gcn_self_coef);
  const ad::Var out = ad::add_row(ad::add(agg, self), bind(layer_key(layer, "b")));
  return last ? out : ad::relu(out);
}

ad::Var gin_layer(ad::Var h, ad::Var edge_enc, const GraphBatch& batch, std::size_t layer,
                  bool last, ParamBinding& bind) {
  const ad::Var self = ad::add(h, ad::scale_by(h, bind(layer_key(layer, "eps"))));
  const ad::Var msg = ad::relu(ad::add(ad::gather_rows(h, batch.src), edge_enc));
  const std::vector<double> ones(batch.src.size(), 1.0);
  const ad::Var agg = ad::scatter_rows(msg, batch.dst, ones, batch.num_nodes);
  const ad::Var z = ad::add(self, agg);
  const ad::Var hidden = ad::relu(
      ad::add_row(ad::matmul(z, bind(layer_key(layer, "mlp1.w"))), bind(layer_key(layer, "mlp1.b"))));
  const ad::Var out =
      ad::add_row(ad::matmul(hidden, bind(layer_key(layer, "mlp2.w"))), bind(layer_key(layer, "mlp2.b")));
  return last ? out : ad::relu(out);
}

ad::Var readout_mean(ad::Var h, const GraphBatch& batch) {
  return ad::segment_mean(h, batch.graph_of_node, batch.num_graphs);
}

ad::Var extract(const GraphBatch& batch, const BackboneSpec& spec, ParamBinding& bind) {
  Encoded enc = encode(batch, spec, bind);
  ad::Var h = enc.nodes;
  for (std::size_t k = 0; k < spec.layers; ++k) {
    const bool last = k + 1 == spec.layers;
    h = spec.kind == BackboneKind::GCN ? gcn_layer(h, enc.edges[k], batch, k, last, bind)
                                       : gin_layer(h, enc.edges[k], batch, k, last, bind);
  }
  return readout_mean(h, batch);
}

Mat extract_embedding(const Graph& g, const BackboneSpec& spec, ParamStore& params) {
  ad::Tape tape;
  ParamBinding bind(tape, params, false);
  const GraphBatch batch = make_graph_batch(g);
  return extract(batch, spec, bind).value();
}

}  // namespace graphdive
