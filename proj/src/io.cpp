#include "graphdive/io.hpp"

#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "graphdive/rng.hpp"

namespace graphdive {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Files

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw std::runtime_error("read failed: " + path.string());
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw std::runtime_error("write failed: " + path.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw std::runtime_error("cannot rename onto " + path.string());
  }
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    ++line;
    fn(text.substr(0, nl), line);
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
}

std::uint64_t to_u64(std::string_view s, const std::string& what) {
  s = trim(s);
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    throw std::invalid_argument(what + ": expected a nonnegative integer, got '" + std::string(s) + "'");
  return v;
}

double to_double(std::string_view s, const std::string& what) {
  s = trim(s);
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty() || !std::isfinite(v))
    throw std::invalid_argument(what + ": expected a number, got '" + std::string(s) + "'");
  return v;
}

bool to_bool(std::string_view s, const std::string& what) {
  s = trim(s);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument(what + ": expected true or false, got '" + std::string(s) + "'");
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  for_each_line(text, [&](std::string_view raw, std::size_t line) {
    std::string_view s = raw.substr(0, raw.find('#'));
    s = trim(s);
    if (s.empty()) return;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw FormatError("expected key = value", line);
    const auto key = trim(s.substr(0, eq));
    if (key.empty()) throw FormatError("empty key", line);
    out.emplace_back(std::string(key), std::string(trim(s.substr(eq + 1))));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Datasets

namespace {

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows; ++r) {
    const auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

Mat mat_from_json(const json& j, std::size_t cols, const char* field) {
  if (!j.is_array()) throw std::invalid_argument(std::string(field) + " must be an array");
  Mat m(j.size(), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const json& row = j[r];
    if (!row.is_array() || row.size() != cols)
      throw std::invalid_argument(std::string(field) + " row " + std::to_string(r) + " must have " +
                                  std::to_string(cols) + " entries");
    for (std::size_t c = 0; c < cols; ++c) {
      if (!row[c].is_number()) throw std::invalid_argument(std::string(field) + " entries must be numbers");
      m(r, c) = row[c].get<double>();
    }
  }
  return m;
}

std::size_t get_size(const json& obj, const char* key) {
  if (!obj.contains(key)) throw std::invalid_argument(std::string("missing field '") + key + "'");
  const json& v = obj.at(key);
  if (!v.is_number_unsigned()) throw std::invalid_argument(std::string("field '") + key + "' must be a nonnegative integer");
  return v.get<std::size_t>();
}

}  // namespace

void write_dataset(std::ostream& out, const Dataset& ds) {
  validate_dataset(ds);
  json header = {{"format_version", kDatasetFormatVersion},
                 {"T", ds.tasks()},
                 {"f_v", ds.node_feat_dim},
                 {"f_e", ds.edge_feat_dim}};
  out << header.dump() << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Graph& g = ds.graphs[i];
    json edges = json::array();
    for (const Edge& e : g.edges) edges.push_back({e.src, e.dst});
    json labels = json::array();
    for (std::size_t t = 0; t < ds.tasks(); ++t) {
      if (ds.labels.present(i, t))
        labels.push_back(static_cast<int>(ds.labels.values(i, t)));
      else
        labels.push_back(nullptr);
    }
    json rec = {{"num_nodes", g.num_nodes},
                {"edges", std::move(edges)},
                {"node_feats", mat_to_json(g.node_feats)},
                {"edge_feats", mat_to_json(g.edge_feats)},
                {"labels", std::move(labels)},
                {"split", split_name(ds.split.empty() ? Split::Train : ds.split[i])}};
    out << rec.dump() << '\n';
  }
}

Dataset read_dataset(std::istream& in) {
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  std::vector<double> values, mask;
  std::size_t T = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      if (!j.is_object()) throw std::invalid_argument("record must be an object");
      if (!have_header) {
        if (!j.contains("format_version")) throw std::invalid_argument("header record expected first");
        const std::size_t version = get_size(j, "format_version");
        if (version != static_cast<std::size_t>(kDatasetFormatVersion))
          throw std::invalid_argument("unsupported format_version " + std::to_string(version));
        T = get_size(j, "T");
        ds.node_feat_dim = get_size(j, "f_v");
        ds.edge_feat_dim = get_size(j, "f_e");
        if (T == 0) throw std::invalid_argument("T must be >= 1");
        have_header = true;
        continue;
      }
      Graph g;
      g.num_nodes = get_size(j, "num_nodes");
      if (!j.contains("edges") || !j.at("edges").is_array()) throw std::invalid_argument("missing field 'edges'");
      for (const json& e : j.at("edges")) {
        if (!e.is_array() || e.size() != 2 || !e[0].is_number_unsigned() || !e[1].is_number_unsigned())
          throw std::invalid_argument("edges must be [src, dst] pairs of node indices");
        g.edges.push_back({e[0].get<std::size_t>(), e[1].get<std::size_t>()});
      }
      if (!j.contains("node_feats") || !j.contains("edge_feats"))
        throw std::invalid_argument("missing node_feats or edge_feats");
      g.node_feats = mat_from_json(j.at("node_feats"), ds.node_feat_dim, "node_feats");
      g.edge_feats = mat_from_json(j.at("edge_feats"), ds.edge_feat_dim, "edge_feats");
      const auto report = validate_graph(g);
      if (!report.ok()) throw std::invalid_argument("invalid graph: " + report.violations.front());
      if (!j.contains("labels") || !j.at("labels").is_array() || j.at("labels").size() != T)
        throw std::invalid_argument("labels must be an array of " + std::to_string(T) + " entries");
      for (const json& y : j.at("labels")) {
        if (y.is_null()) {
          values.push_back(0.0);
          mask.push_back(0.0);
        } else if (y.is_number() && (y.get<double>() == 0.0 || y.get<double>() == 1.0)) {
          values.push_back(y.get<double>());
          mask.push_back(1.0);
        } else {
          throw std::invalid_argument("labels must be 0, 1 or null");
        }
      }
      Split s = Split::Train;
      if (j.contains("split")) {
        if (!j.at("split").is_string()) throw std::invalid_argument("split must be a string");
        s = parse_split(j.at("split").get<std::string>());
      }
      ds.graphs.push_back(std::move(g));
      ds.split.push_back(s);
    } catch (const json::exception& e) {
      throw FormatError(std::string("malformed JSON: ") + e.what(), lineno);
    } catch (const std::invalid_argument& e) {
      throw FormatError(e.what(), lineno);
    }
  }
  if (in.bad()) throw std::runtime_error("read failed");
  if (!have_header) throw FormatError("missing header record", lineno ? lineno : 1);
  ds.labels.values = Mat(ds.graphs.size(), T);
  ds.labels.mask = Mat(ds.graphs.size(), T);
  ds.labels.values.data = std::move(values);
  ds.labels.mask.data = std::move(mask);
  validate_dataset(ds);
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ostringstream out;
  write_dataset(out, ds);
  write_file_atomic(path, out.str());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_dataset(in);
}

std::vector<Split> read_split_file(const std::filesystem::path& path, std::size_t num_graphs) {
  const std::string text = read_file(path);
  std::vector<int> seen(num_graphs, 0);
  std::vector<Split> out(num_graphs, Split::Train);
  for_each_line(text, [&](std::string_view raw, std::size_t line) {
    std::string_view s = trim(raw.substr(0, raw.find('#')));
    if (s.empty()) return;
    const auto sp = s.find_first_of(" \t");
    if (sp == std::string_view::npos) throw FormatError("expected 'index split'", line);
    std::size_t idx;
    Split tag;
    try {
      idx = to_u64(s.substr(0, sp), "index");
      tag = parse_split(trim(s.substr(sp)));
    } catch (const std::invalid_argument& e) {
      throw FormatError(e.what(), line);
    }
    if (idx >= num_graphs) throw FormatError("index " + std::to_string(idx) + " out of range", line);
    if (seen[idx]++) throw FormatError("index " + std::to_string(idx) + " listed twice", line);
    out[idx] = tag;
  });
  for (std::size_t i = 0; i < num_graphs; ++i)
    if (!seen[i]) throw FormatError("split file does not assign graph " + std::to_string(i));
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark

void SynthSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("synth spec: " + m); };
  if (n < 1) fail("n must be >= 1");
  if (!(positive_ratio > 0.0 && positive_ratio < 1.0)) fail("positive_ratio must be in (0, 1)");
  if (min_nodes > max_nodes) fail("min_nodes exceeds max_nodes");
  if (min_nodes < 3) fail("min_nodes must be >= 3 to hold a triangle");
  if (diversity > 0.0 && min_nodes < 4) fail("min_nodes must be >= 4 when diversity > 0");
  if (!(noise >= 0.0)) fail("noise must be >= 0");
  if (!(diversity >= 0.0 && diversity <= 1.0)) fail("diversity must be in [0, 1]");
  if (node_feat_dim < 1 || edge_feat_dim < 1) fail("feature dimensions must be >= 1");
  if (train_ratio < 0.0 || valid_ratio < 0.0 || test_ratio < 0.0 ||
      std::abs(train_ratio + valid_ratio + test_ratio - 1.0) > 1e-9)
    fail("split ratios must be nonnegative and sum to 1");
}

SynthSpec parse_synth_spec(std::string_view text) {
  SynthSpec s;
  for (const auto& [k, v] : parse_key_values(text)) {
    if (k == "n") s.n = to_u64(v, k);
    else if (k == "positive_ratio") s.positive_ratio = to_double(v, k);
    else if (k == "min_nodes") s.min_nodes = to_u64(v, k);
    else if (k == "max_nodes") s.max_nodes = to_u64(v, k);
    else if (k == "noise") s.noise = to_double(v, k);
    else if (k == "diversity") s.diversity = to_double(v, k);
    else if (k == "seed") s.seed = to_u64(v, k);
    else if (k == "node_feat_dim") s.node_feat_dim = to_u64(v, k);
    else if (k == "edge_feat_dim") s.edge_feat_dim = to_u64(v, k);
    else if (k == "train_ratio") s.train_ratio = to_double(v, k);
    else if (k == "valid_ratio") s.valid_ratio = to_double(v, k);
    else if (k == "test_ratio") s.test_ratio = to_double(v, k);
    else if (k == "format_version") {
      if (to_u64(v, k) != 1) throw std::invalid_argument("synth spec: unsupported format_version");
    } else throw std::invalid_argument("synth spec: unknown key '" + k + "'");
  }
  s.validate();
  return s;
}

std::string synth_spec_to_text(const SynthSpec& s) {
  std::ostringstream o;
  o << "format_version = 1\n"
    << "n = " << s.n << "\n"
    << "positive_ratio = " << fmt_double(s.positive_ratio) << "\n"
    << "min_nodes = " << s.min_nodes << "\n"
    << "max_nodes = " << s.max_nodes << "\n"
    << "noise = " << fmt_double(s.noise) << "\n"
    << "diversity = " << fmt_double(s.diversity) << "\n"
    << "seed = " << s.seed << "\n"
    << "node_feat_dim = " << s.node_feat_dim << "\n"
    << "edge_feat_dim = " << s.edge_feat_dim << "\n"
    << "train_ratio = " << fmt_double(s.train_ratio) << "\n"
    << "valid_ratio = " << fmt_double(s.valid_ratio) << "\n"
    << "test_ratio = " << fmt_double(s.test_ratio) << "\n";
  return o.str();
}

namespace {

using Adjacency = std::vector<std::vector<std::size_t>>;

enum class Motif { Tree, Triangle, FourCycle };

Adjacency random_tree(std::size_t n, Rng& rng) {
  Adjacency adj(n);
  for (std::size_t i = 1; i < n; ++i) {
    const std::size_t j = rng.below(i);
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  return adj;
}

// Adds one edge closing the requested cycle. Returns false if the tree has no
// place for it (only possible for a 4-cycle in a star).
bool close_motif(Adjacency& adj, Motif motif, Rng& rng) {
  const std::size_t n = adj.size();
  if (motif == Motif::Triangle) {
    std::vector<std::size_t> hubs;
    for (std::size_t v = 0; v < n; ++v)
      if (adj[v].size() >= 2) hubs.push_back(v);
    const std::size_t c = hubs[rng.below(hubs.size())];
    const auto& nb = adj[c];
    const std::size_t i = rng.below(nb.size());
    std::size_t j = rng.below(nb.size() - 1);
    if (j >= i) ++j;
    const std::size_t a = nb[i], b = nb[j];
    adj[a].push_back(b);
    adj[b].push_back(a);
    return true;
  }
  // Middle edge p-q of a path a-p-q-b.
  std::vector<std::pair<std::size_t, std::size_t>> middles;
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t q : adj[p])
      if (p < q && adj[p].size() >= 2 && adj[q].size() >= 2) middles.emplace_back(p, q);
  if (middles.empty()) return false;
  const auto [p, q] = middles[rng.below(middles.size())];
  auto pick_other = [&](std::size_t v, std::size_t exclude) {
    std::vector<std::size_t> c;
    for (std::size_t u : adj[v])
      if (u != exclude) c.push_back(u);
    return c[rng.below(c.size())];
  };
  const std::size_t a = pick_other(p, q);
  const std::size_t b = pick_other(q, p);
  adj[a].push_back(b);
  adj[b].push_back(a);
  return true;
}

Graph make_graph(const SynthSpec& spec, Motif motif, Rng& rng) {
  const std::size_t n = spec.min_nodes + rng.below(spec.max_nodes - spec.min_nodes + 1);
  Adjacency adj;
  do {
    adj = random_tree(n, rng);
  } while (motif != Motif::Tree && !close_motif(adj, motif, rng));

  Graph g;
  g.num_nodes = n;
  const std::size_t fv = spec.node_feat_dim, fe = spec.edge_feat_dim;
  g.node_feats = Mat(n, fv);
  for (std::size_t v = 0; v < n; ++v) {
    g.node_feats(v, 0) = 1.0;
    if (fv > 1) g.node_feats(v, 1 + rng.below(fv - 1)) = 1.0;
    for (double& x : g.node_feats.row(v)) x += spec.noise * rng.normal();
  }
  std::vector<double> feats;
  for (std::size_t u = 0; u < n; ++u) {
    auto nb = adj[u];
    std::sort(nb.begin(), nb.end());
    for (std::size_t v : nb) {
      if (v < u) continue;
      std::vector<double> f(fe, 0.0);
      f[0] = 1.0;
      if (fe > 1) f[1] = static_cast<double>(rng.below(2));
      for (double& x : f) x += spec.noise * rng.normal();
      g.edges.push_back({u, v});
      g.edges.push_back({v, u});
      feats.insert(feats.end(), f.begin(), f.end());
      feats.insert(feats.end(), f.begin(), f.end());
    }
  }
  g.edge_feats = Mat(g.edges.size(), fe);
  g.edge_feats.data = std::move(feats);
  return g;
}

}  // namespace

Dataset synth_generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const std::size_t n_pos = static_cast<std::size_t>(std::llround(static_cast<double>(spec.n) * spec.positive_ratio));
  std::vector<double> y(spec.n, 0.0);
  std::fill(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(n_pos), 1.0);
  rng.shuffle(y);

  Dataset ds;
  ds.node_feat_dim = spec.node_feat_dim;
  ds.edge_feat_dim = spec.edge_feat_dim;
  ds.labels.values = Mat(spec.n, 1);
  ds.labels.values.data = y;
  ds.labels.mask = Mat(spec.n, 1, 1.0);
  ds.graphs.resize(spec.n);
  ds.split = split_dataset(ds, SplitStrategy::RandomStratified, spec.train_ratio, spec.valid_ratio,
                           spec.test_ratio, spec.seed);

  std::size_t test_pos = 0;
  for (std::size_t i = 0; i < spec.n; ++i)
    if (y[i] != 0.0 && ds.split[i] == Split::Test) ++test_pos;
  std::size_t cycles_left =
      static_cast<std::size_t>(std::llround(spec.diversity * static_cast<double>(test_pos)));

  Rng graph_rng(mix_seed(spec.seed, 1));
  for (std::size_t i = 0; i < spec.n; ++i) {
    Motif m = Motif::Tree;
    if (y[i] != 0.0) {
      m = Motif::Triangle;
      if (ds.split[i] == Split::Test && cycles_left > 0) {
        m = Motif::FourCycle;
        --cycles_left;
      }
    }
    ds.graphs[i] = make_graph(spec, m, graph_rng);
  }
  return ds;
}

bool has_triangle(const Graph& g) {
  std::vector<std::set<std::size_t>> adj(g.num_nodes);
  for (const Edge& e : g.edges) {
    adj[e.src].insert(e.dst);
    adj[e.dst].insert(e.src);
  }
  for (std::size_t u = 0; u < g.num_nodes; ++u)
    for (std::size_t v : adj[u])
      if (v > u)
        for (std::size_t w : adj[v])
          if (w > v && adj[u].count(w)) return true;
  return false;
}

bool has_cycle(const Graph& g) {
  std::vector<std::size_t> parent(g.num_nodes);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const Edge& e : g.edges) {
    const auto key = std::minmax(e.src, e.dst);
    if (!seen.insert(key).second) continue;
    const std::size_t a = find(e.src), b = find(e.dst);
    if (a == b) return true;
    parent[a] = b;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Config

std::vector<std::size_t> parse_size_list(std::string_view s) {
  s = trim(s);
  std::vector<std::size_t> out;
  if (const auto dots = s.find(".."); dots != std::string_view::npos) {
    const std::size_t a = to_u64(s.substr(0, dots), "range start");
    const std::size_t b = to_u64(s.substr(dots + 2), "range end");
    if (a > b) throw std::invalid_argument("empty range '" + std::string(s) + "'");
    for (std::size_t v = a; v <= b; ++v) out.push_back(v);
    return out;
  }
  while (true) {
    const auto comma = s.find(',');
    out.push_back(to_u64(s.substr(0, comma), "list entry"));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

std::vector<double> parse_double_list(std::string_view s) {
  s = trim(s);
  std::vector<double> out;
  while (true) {
    const auto comma = s.find(',');
    out.push_back(to_double(s.substr(0, comma), "list entry"));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

TrainConfig parse_config(std::string_view text, TrainConfig c, bool check) {
  for (const auto& [k, v] : parse_key_values(text)) {
    if (k == "format_version") {
      if (to_u64(v, k) != 1) throw std::invalid_argument("config: unsupported format_version");
    } else if (k == "variant") c.variant = parse_variant(v);
    else if (k == "experts") c.experts = to_u64(v, k);
    else if (k == "lambda") c.lambda = to_double(v, k);
    else if (k == "temperature") c.temperature = to_double(v, k);
    else if (k == "backbone") c.backbone = parse_backbone(v);
    else if (k == "hidden_dim") c.hidden_dim = to_u64(v, k);
    else if (k == "layers") c.layers = to_u64(v, k);
    else if (k == "epochs") c.epochs = to_u64(v, k);
    else if (k == "batch_size") c.batch_size = to_u64(v, k);
    else if (k == "learning_rate") c.learning_rate = to_double(v, k);
    else if (k == "beta1") c.beta1 = to_double(v, k);
    else if (k == "beta2") c.beta2 = to_double(v, k);
    else if (k == "adam_eps") c.adam_eps = to_double(v, k);
    else if (k == "seed") c.seed = to_u64(v, k);
    else if (k == "gate_mode") c.gate_mode = parse_gate_mode(v);
    else if (k == "gate_bias") c.gate_bias = to_bool(v, k);
    else if (k == "cosine_gate") c.cosine_gate = to_bool(v, k);
    else if (k == "focal_gamma") c.focal_gamma = to_double(v, k);
    else if (k == "split") c.split = parse_split_strategy(v);
    else if (k == "split_file") c.split_file = v;
    else if (k == "split_train") c.split_train = to_double(v, k);
    else if (k == "split_valid") c.split_valid = to_double(v, k);
    else if (k == "split_test") c.split_test = to_double(v, k);
    else if (k == "grid_experts") c.grid_experts = parse_size_list(v);
    else if (k == "grid_lambda") c.grid_lambda = parse_double_list(v);
    else if (k == "sweep_seeds") {
      const auto seeds = parse_size_list(v);
      c.sweep_seeds.assign(seeds.begin(), seeds.end());
    } else if (k == "gradcheck_dim") c.gradcheck_dim = to_u64(v, k);
    else if (k == "gradcheck_layers") c.gradcheck_layers = to_u64(v, k);
    else if (k == "gradcheck_seeds") c.gradcheck_seeds = to_u64(v, k);
    else if (k == "gradcheck_tolerance") c.gradcheck_tolerance = to_double(v, k);
    else throw std::invalid_argument("config: unknown key '" + k + "'");
  }
  if (check) c.validate();
  return c;
}

std::string config_to_text(const TrainConfig& c) {
  auto join = [](const auto& v, auto fmt) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
    return s;
  };
  auto u = [](auto x) { return std::to_string(x); };
  std::ostringstream o;
  o << "format_version = 1\n"
    << "variant = " << variant_name(c.variant) << "\n"
    << "experts = " << c.experts << "\n"
    << "lambda = " << fmt_double(c.lambda) << "\n"
    << "temperature = " << fmt_double(c.temperature) << "\n"
    << "backbone = " << backbone_name(c.backbone) << "\n"
    << "hidden_dim = " << c.hidden_dim << "\n"
    << "layers = " << c.layers << "\n"
    << "epochs = " << c.epochs << "\n"
    << "batch_size = " << c.batch_size << "\n"
    << "learning_rate = " << fmt_double(c.learning_rate) << "\n"
    << "beta1 = " << fmt_double(c.beta1) << "\n"
    << "beta2 = " << fmt_double(c.beta2) << "\n"
    << "adam_eps = " << fmt_double(c.adam_eps) << "\n"
    << "seed = " << c.seed << "\n"
    << "gate_mode = " << gate_mode_name(c.gate_mode) << "\n"
    << "gate_bias = " << (c.gate_bias ? "true" : "false") << "\n"
    << "cosine_gate = " << (c.cosine_gate ? "true" : "false") << "\n"
    << "focal_gamma = " << fmt_double(c.focal_gamma) << "\n"
    << "split = " << split_strategy_name(c.split) << "\n";
  if (!c.split_file.empty()) o << "split_file = " << c.split_file << "\n";
  o << "split_train = " << fmt_double(c.split_train) << "\n"
    << "split_valid = " << fmt_double(c.split_valid) << "\n"
    << "split_test = " << fmt_double(c.split_test) << "\n"
    << "grid_experts = " << join(c.grid_experts, u) << "\n"
    << "grid_lambda = " << join(c.grid_lambda, fmt_double) << "\n"
    << "sweep_seeds = " << join(c.sweep_seeds, u) << "\n"
    << "gradcheck_dim = " << c.gradcheck_dim << "\n"
    << "gradcheck_layers = " << c.gradcheck_layers << "\n"
    << "gradcheck_seeds = " << c.gradcheck_seeds << "\n"
    << "gradcheck_tolerance = " << fmt_double(c.gradcheck_tolerance) << "\n";
  return o.str();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'G', 'D', 'I', 'V', 'E', 'C', 'K', 'P'};

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u64(s.size());
    buf_.append(s);
  }
  void mat(const Mat& m) {
    u64(m.rows);
    u64(m.cols);
    for (double v : m.data) f64(v);
  }
  void store(const ParamStore& ps) {
    u64(ps.size());
    for (const auto& p : ps) {
      str(p.name);
      mat(p.value);
    }
  }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string_view b) : b_(b) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(b_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(b_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  Mat mat() {
    const std::uint64_t r = u64(), c = u64();
    if (c != 0 && r > remaining() / 8 / c) throw FormatError("checkpoint: matrix larger than file");
    Mat m(r, c);
    for (double& v : m.data) v = f64();
    return m;
  }
  ParamStore store() {
    ParamStore ps;
    const std::uint64_t n = u64();
    for (std::uint64_t i = 0; i < n; ++i) {
      std::string name = str();
      ps.add(std::move(name), mat());
    }
    return ps;
  }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  void need(std::uint64_t n) const {
    if (n > remaining()) throw FormatError("checkpoint: truncated payload");
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::string_view s) {
  return static_cast<std::uint32_t>(
      ::crc32(::crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size())));
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  Writer p;
  p.str(config_to_text(ck.config));
  p.u64(ck.node_feat_dim);
  p.u64(ck.edge_feat_dim);
  p.u64(ck.tasks);
  p.u64(ck.epoch);
  p.store(ck.params);
  p.f64(ck.adam.config.lr);
  p.f64(ck.adam.config.beta1);
  p.f64(ck.adam.config.beta2);
  p.f64(ck.adam.config.eps);
  p.u64(ck.adam.step);
  p.u64(ck.adam.m.size());
  for (const Mat& m : ck.adam.m) p.mat(m);
  for (const Mat& v : ck.adam.v) p.mat(v);
  p.store(ck.best_params);
  p.u64(ck.history.epochs.size());
  for (const auto& e : ck.history.epochs) {
    p.f64(e.train_loss);
    p.u8(e.valid_auc.has_value());
    p.f64(e.valid_auc.value_or(0.0));
    p.f64(e.seconds);
  }
  p.u8(ck.history.best_epoch.has_value());
  p.u64(ck.history.best_epoch.value_or(0));

  Writer out;
  out.bytes().append(kMagic, sizeof kMagic);
  out.u32(kCheckpointFormatVersion);
  out.u64(p.bytes().size());
  out.bytes() += p.bytes();
  out.u32(crc32_of(p.bytes()));
  return std::move(out.bytes());
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < sizeof kMagic + 4 + 8 + 4 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw FormatError("not a checkpoint file");
  Reader head(bytes.substr(sizeof kMagic));
  const std::uint32_t version = head.u32();
  if (version != static_cast<std::uint32_t>(kCheckpointFormatVersion))
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  const std::uint64_t size = head.u64();
  const std::size_t offset = sizeof kMagic + 12;
  if (size != bytes.size() - offset - 4) throw FormatError("checkpoint: size mismatch (truncated or corrupt)");
  const std::string_view payload = bytes.substr(offset, size);
  Reader tail(bytes.substr(offset + size));
  if (tail.u32() != crc32_of(payload)) throw FormatError("checkpoint: checksum mismatch (corrupt file)");

  Reader r(payload);
  Checkpoint ck;
  try {
    ck.config = parse_config(r.str());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint: bad config: ") + e.what());
  }
  ck.node_feat_dim = r.u64();
  ck.edge_feat_dim = r.u64();
  ck.tasks = r.u64();
  ck.epoch = r.u64();
  ck.params = r.store();
  ck.adam.config.lr = r.f64();
  ck.adam.config.beta1 = r.f64();
  ck.adam.config.beta2 = r.f64();
  ck.adam.config.eps = r.f64();
  ck.adam.step = r.u64();
  const std::uint64_t nm = r.u64();
  if (nm != ck.params.size()) throw FormatError("checkpoint: optimizer state does not match parameters");
  for (std::uint64_t i = 0; i < nm; ++i) ck.adam.m.push_back(r.mat());
  for (std::uint64_t i = 0; i < nm; ++i) ck.adam.v.push_back(r.mat());
  ck.best_params = r.store();
  const std::uint64_t ne = r.u64();
  if (ne > r.remaining()) throw FormatError("checkpoint: truncated history");
  for (std::uint64_t i = 0; i < ne; ++i) {
    EpochRecord e;
    e.train_loss = r.f64();
    const bool has = r.u8() != 0;
    const double auc = r.f64();
    if (has) e.valid_auc = auc;
    e.seconds = r.f64();
    ck.history.epochs.push_back(e);
  }
  const bool has_best = r.u8() != 0;
  const std::uint64_t best = r.u64();
  if (has_best) ck.history.best_epoch = best;
  if (r.remaining() != 0) throw FormatError("checkpoint: trailing bytes");
  if (!ck.best_params.same_layout(ck.params) || ck.history.epochs.size() != ck.epoch ||
      (has_best && best >= ne))
    throw FormatError("checkpoint: inconsistent contents");
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(read_file(path));
}

// ---------------------------------------------------------------------------
// Reports

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string num(const std::optional<double>& v) { return v ? num(*v) : "NA"; }

}  // namespace

std::string format_eval_report(const EvalReport& rep) {
  std::ostringstream o;
  o << "# format_version=" << kReportFormatVersion << "\n"
    << "task\troc_auc\taccuracy\tmajority_acc\tminority_acc\tcross_entropy\tcount\tminority_class\n";
  std::size_t total = 0;
  for (std::size_t t = 0; t < rep.tasks.size(); ++t) {
    const TaskReport& r = rep.tasks[t];
    total += r.count;
    o << t << '\t' << num(r.roc_auc) << '\t' << num(r.accuracy) << '\t' << num(r.majority_accuracy) << '\t'
      << num(r.minority_accuracy) << '\t' << num(r.cross_entropy) << '\t' << r.count << '\t'
      << r.minority_class << '\n';
  }
  o << "mean\t" << num(rep.mean_auc) << '\t' << num(rep.mean_accuracy) << '\t'
    << num(rep.mean_majority_accuracy) << '\t' << num(rep.mean_minority_accuracy) << '\t'
    << num(rep.mean_cross_entropy) << '\t' << total << "\tNA\n";
  return o.str();
}

std::string format_sweep_table(const SweepResult& res) {
  std::ostringstream o;
  o << "# format_version=" << kReportFormatVersion << "\n"
    << "M\tlambda\tvalid_auc_mean\tvalid_auc_std\ttest_auc_mean\ttest_auc_std\tseeds\n";
  for (const auto& c : res.cells)
    o << c.experts << '\t' << num(c.lambda) << '\t' << num(c.valid.mean) << '\t' << num(c.valid.stddev)
      << '\t' << num(c.test.mean) << '\t' << num(c.test.stddev) << '\t' << c.valid.n << '\n';
  if (!res.cells.empty()) {
    const auto& b = res.cells[res.best];
    o << "# best\tM=" << b.experts << "\tlambda=" << num(b.lambda) << "\tvalid_auc=" << num(b.valid.mean)
      << "\ttest_auc=" << num(b.test.mean) << '\n';
  }
  // AUC-vs-M curve: best lambda per M by validation.
  o << "# curve\n"
    << "M\tbest_lambda\tvalid_auc_mean\ttest_auc_mean\ttest_auc_std\n";
  for (std::size_t i = 0; i < res.cells.size();) {
    std::size_t j = i, pick = i;
    while (j < res.cells.size() && res.cells[j].experts == res.cells[i].experts) {
      if (res.cells[j].valid.mean > res.cells[pick].valid.mean) pick = j;
      ++j;
    }
    const auto& c = res.cells[pick];
    o << c.experts << '\t' << num(c.lambda) << '\t' << num(c.valid.mean) << '\t' << num(c.test.mean) << '\t'
      << num(c.test.stddev) << '\n';
    i = j;
  }
  return o.str();
}

std::string format_expert_usage(const std::vector<ExpertUsage>& usage) {
  std::ostringstream o;
  o << "# format_version=" << kReportFormatVersion << "\n"
    << "task\tclass\texpert\tweight\tsamples\n";
  for (std::size_t t = 0; t < usage.size(); ++t) {
    const auto& u = usage[t];
    for (int c = 0; c < 2; ++c)
      for (std::size_t z = 0; z < u.experts; ++z)
        o << t << '\t' << c << '\t' << z << '\t' << num(u.weights(static_cast<std::size_t>(c), z)) << '\t'
          << u.count[c] << '\n';
  }
  for (std::size_t t = 0; t < usage.size(); ++t) {
    const auto& u = usage[t];
    if (u.count[0] == 0 || u.count[1] == 0) {
      o << "# task " << t << ": one class absent\n";
      continue;
    }
    const int minority = u.count[1] <= u.count[0] ? 1 : 0;
    const std::size_t zmin = u.argmax_expert(minority), zmaj = u.argmax_expert(1 - minority);
    o << "# task " << t << ": minority_class=" << minority << " minority_expert=" << zmin
      << " majority_expert=" << zmaj << (zmin != zmaj ? " specialized" : " shared") << '\n';
  }
  return o.str();
}

}  // namespace graphdive
