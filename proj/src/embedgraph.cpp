#include "great/embedgraph.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "great/errors.hpp"
#include "great/io.hpp"

namespace great::graph {

std::string to_string(EdgeType type) {
  switch (type) {
    case EdgeType::CleanClean: return "cc";
    case EdgeType::CleanAdv: return "ca";
    case EdgeType::AdvClean: return "ac";
    case EdgeType::AdvAdv: return "aa";
  }
  return "?";
}

EdgeType edge_type_from_string(const std::string& tag) {
  if (tag == "cc") return EdgeType::CleanClean;
  if (tag == "ca") return EdgeType::CleanAdv;
  if (tag == "ac") return EdgeType::AdvClean;
  if (tag == "aa") return EdgeType::AdvAdv;
  throw ParseError("unknown edge type '" + tag + "'");
}

EdgeType edge_type_for(bool src_adversarial, bool dst_adversarial) {
  if (!src_adversarial) return dst_adversarial ? EdgeType::CleanAdv : EdgeType::CleanClean;
  return dst_adversarial ? EdgeType::AdvAdv : EdgeType::AdvClean;
}

namespace {

// Strict weak order on adjacency entries: heavier first, then lower id.
bool ranks_before(double wa, std::size_t ida, double wb, std::size_t idb) {
  if (wa != wb) return wa > wb;
  return ida < idb;
}

}  // namespace

SimilarityGraph::SimilarityGraph(std::vector<NodeRecord> nodes,
                                 std::vector<std::vector<EdgeRecord>> adjacency, double tau,
                                 std::size_t k)
    : nodes_(std::move(nodes)), adjacency_(std::move(adjacency)), tau_(tau), k_(k) {
  if (nodes_.empty()) throw ContractError("similarity graph has no nodes");
  if (adjacency_.size() != nodes_.size()) throw ContractError("adjacency does not cover every node");
  if (!(tau_ >= 0.0 && tau_ <= 1.0)) throw ContractError("tau outside [0, 1]");
  if (k_ < 1) throw ContractError("k must be >= 1");
  const std::size_t dim = nodes_.front().embedding.size();
  std::size_t max_ref = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].id != i) throw ContractError("node ids must equal their positions");
    if (nodes_[i].embedding.size() != dim) throw DimensionError("node embeddings differ in length");
    max_ref = std::max(max_ref, nodes_[i].sample_ref);
  }
  clean_by_ref_.assign(max_ref + 1, std::nullopt);
  adv_by_ref_.assign(max_ref + 1, std::nullopt);
  for (const auto& n : nodes_) {
    auto& slot = n.is_adversarial ? adv_by_ref_[n.sample_ref] : clean_by_ref_[n.sample_ref];
    if (slot) throw ContractError("two nodes share sample_ref " + std::to_string(n.sample_ref));
    slot = n.id;
  }
  for (std::size_t i = 0; i < adjacency_.size(); ++i) {
    const auto& adj = adjacency_[i];
    if (adj.size() > k_) throw ContractError("node " + std::to_string(i) + " exceeds k neighbors");
    for (std::size_t e = 0; e < adj.size(); ++e) {
      const EdgeRecord& edge = adj[e];
      if (edge.src != i || edge.dst >= nodes_.size() || edge.dst == i) {
        throw ContractError("malformed edge at node " + std::to_string(i));
      }
      if (!(edge.weight >= tau_ && edge.weight <= 1.0)) {
        throw ContractError("edge weight below tau at node " + std::to_string(i));
      }
      if (edge.type != edge_type_for(nodes_[i].is_adversarial, nodes_[edge.dst].is_adversarial)) {
        throw ContractError("edge type inconsistent with endpoint flags at node " + std::to_string(i));
      }
      if (e > 0 && !ranks_before(adj[e - 1].weight, adj[e - 1].dst, edge.weight, edge.dst)) {
        throw ContractError("adjacency not sorted at node " + std::to_string(i));
      }
    }
    edge_count_ += adj.size();
  }
}

const NodeRecord& SimilarityGraph::node(std::size_t id) const {
  if (id >= nodes_.size()) throw LookupError("unknown node " + std::to_string(id));
  return nodes_[id];
}

const std::vector<EdgeRecord>& SimilarityGraph::adjacency(std::size_t id) const {
  if (id >= adjacency_.size()) throw LookupError("unknown node " + std::to_string(id));
  return adjacency_[id];
}

std::optional<std::size_t> SimilarityGraph::clean_node(std::size_t sample_ref) const {
  return sample_ref < clean_by_ref_.size() ? clean_by_ref_[sample_ref] : std::nullopt;
}

std::optional<std::size_t> SimilarityGraph::adversarial_node(std::size_t sample_ref) const {
  return sample_ref < adv_by_ref_.size() ? adv_by_ref_[sample_ref] : std::nullopt;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

namespace {

double cosine_from(double ab, double na, double nb) {
  if (na < 1e-12 || nb < 1e-12) return 0.0;
  return std::clamp(ab / (na * nb), 0.0, 1.0);
}

}  // namespace

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine: lengths " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()) + " differ");
  }
  return cosine_from(dot(a, b), norm2(a), norm2(b));
}

SimilarityGraph build_graph(std::vector<NodeRecord> nodes, const BuildOptions& options) {
  if (nodes.empty()) throw ContractError("build_graph: empty node set");
  if (!(options.tau >= 0.0 && options.tau <= 1.0)) throw ContractError("build_graph: tau outside [0, 1]");
  if (options.k < 1) throw ContractError("build_graph: k must be >= 1");
  const std::size_t n = nodes.size();
  const std::size_t dim = nodes.front().embedding.size();
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (nodes[i].id != i) throw ContractError("build_graph: node ids must equal positions");
    if (nodes[i].embedding.size() != dim) throw DimensionError("build_graph: embedding lengths differ");
    norms[i] = norm2(nodes[i].embedding);
  }

  std::vector<std::vector<EdgeRecord>> adjacency(n);
  for (std::size_t u = 0; u < n; ++u) {
    auto& top = adjacency[u];
    top.reserve(options.k + 1);
    for (std::size_t v = 0; v < n; ++v) {
      if (v == u) continue;
      const double w = cosine_from(dot(nodes[u].embedding, nodes[v].embedding), norms[u], norms[v]);
      if (w < options.tau) continue;
      if (top.size() == options.k && !ranks_before(w, v, top.back().weight, top.back().dst)) continue;
      auto pos = std::find_if(top.begin(), top.end(), [&](const EdgeRecord& e) {
        return ranks_before(w, v, e.weight, e.dst);
      });
      top.insert(pos, EdgeRecord{u, v, w, edge_type_for(nodes[u].is_adversarial, nodes[v].is_adversarial)});
      if (top.size() > options.k) top.pop_back();
    }
  }
  if (options.mutual) {
    auto has_edge = [&adjacency](std::size_t from, std::size_t to) {
      const auto& adj = adjacency[from];
      return std::any_of(adj.begin(), adj.end(), [to](const EdgeRecord& e) { return e.dst == to; });
    };
    std::vector<std::vector<EdgeRecord>> kept(n);
    for (std::size_t u = 0; u < n; ++u) {
      for (const auto& e : adjacency[u]) {
        if (has_edge(e.dst, u)) kept[u].push_back(e);
      }
    }
    adjacency = std::move(kept);
  }
  return SimilarityGraph(std::move(nodes), std::move(adjacency), options.tau, options.k);
}

std::vector<Neighbor> neighbors(const SimilarityGraph& graph, std::size_t node_id) {
  std::vector<Neighbor> out;
  for (const auto& e : graph.adjacency(node_id)) {
    out.push_back(Neighbor{&graph.node(e.dst), e.weight, e.type});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr const char* kMagic = "great-graph";
constexpr int kSchemaVersion = 1;

std::string full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class LineReader {
 public:
  explicit LineReader(const std::string& text) : in_(text) {}

  std::vector<std::string> next(const char* expecting) {
    std::string line;
    if (!std::getline(in_, line)) {
      throw ParseError("graph file truncated at line " + std::to_string(line_ + 1) + ": expected " +
                       expecting);
    }
    ++line_;
    std::istringstream fields(line);
    std::vector<std::string> out;
    for (std::string f; fields >> f;) out.push_back(f);
    return out;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("graph file line " + std::to_string(line_) + ": " + what);
  }

  double number(const std::string& field) const {
    char* end = nullptr;
    const double v = std::strtod(field.c_str(), &end);
    if (field.empty() || *end != '\0' || !std::isfinite(v)) fail("bad number '" + field + "'");
    return v;
  }

  std::size_t count(const std::string& field) const {
    if (field.empty() || field.find_first_not_of("0123456789") != std::string::npos) {
      fail("bad integer '" + field + "'");
    }
    return static_cast<std::size_t>(std::stoull(field));
  }

  bool at_end() {
    std::string rest;
    while (std::getline(in_, rest)) {
      if (rest.find_first_not_of(" \t\r") != std::string::npos) return false;
    }
    return true;
  }

 private:
  std::istringstream in_;
  std::size_t line_ = 0;
};

}  // namespace

std::string serialize(const SimilarityGraph& graph) {
  std::ostringstream out;
  const std::size_t dim = graph.node_count() == 0 ? 0 : graph.nodes().front().embedding.size();
  out << kMagic << ' ' << kSchemaVersion << '\n';
  out << "tau " << full(graph.tau()) << " k " << graph.k() << " nodes " << graph.node_count()
      << " edges " << graph.edge_count() << " dim " << dim << '\n';
  for (const auto& n : graph.nodes()) {
    out << "N " << n.id << ' ' << n.sample_ref << ' ' << (n.is_adversarial ? 1 : 0) << ' ';
    if (n.label) {
      out << *n.label;
    } else {
      out << '-';
    }
    for (double e : n.embedding) out << ' ' << full(e);
    out << '\n';
  }
  for (std::size_t i = 0; i < graph.node_count(); ++i) {
    for (const auto& e : graph.adjacency(i)) {
      out << "E " << e.src << ' ' << e.dst << ' ' << full(e.weight) << ' ' << to_string(e.type) << '\n';
    }
  }
  out << "end\n";
  return out.str();
}

SimilarityGraph parse(const std::string& text) {
  LineReader r(text);
  auto header = r.next("header");
  if (header.size() != 2 || header[0] != kMagic) r.fail("not a graph file");
  if (header[1] != std::to_string(kSchemaVersion)) r.fail("unsupported schema version " + header[1]);

  auto meta = r.next("metadata");
  if (meta.size() != 10 || meta[0] != "tau" || meta[2] != "k" || meta[4] != "nodes" ||
      meta[6] != "edges" || meta[8] != "dim") {
    r.fail("malformed metadata line");
  }
  const double tau = r.number(meta[1]);
  const std::size_t k = r.count(meta[3]);
  const std::size_t node_count = r.count(meta[5]);
  const std::size_t edge_count = r.count(meta[7]);
  const std::size_t dim = r.count(meta[9]);
  if (node_count == 0) r.fail("graph has no nodes");

  std::vector<NodeRecord> nodes;
  nodes.reserve(node_count);
  for (std::size_t i = 0; i < node_count; ++i) {
    auto f = r.next("node record");
    if (f.size() != 5 + dim || f[0] != "N") r.fail("malformed node record");
    NodeRecord n;
    n.id = r.count(f[1]);
    n.sample_ref = r.count(f[2]);
    if (f[3] != "0" && f[3] != "1") r.fail("bad adversarial flag '" + f[3] + "'");
    n.is_adversarial = f[3] == "1";
    if (f[4] != "-") n.label = static_cast<int>(r.count(f[4]));
    n.embedding.reserve(dim);
    for (std::size_t j = 0; j < dim; ++j) n.embedding.push_back(r.number(f[5 + j]));
    if (n.id != i) r.fail("node ids must be consecutive");
    nodes.push_back(std::move(n));
  }

  std::vector<std::vector<EdgeRecord>> adjacency(node_count);
  for (std::size_t i = 0; i < edge_count; ++i) {
    auto f = r.next("edge record");
    if (f.size() != 5 || f[0] != "E") r.fail("malformed edge record");
    EdgeRecord e;
    e.src = r.count(f[1]);
    e.dst = r.count(f[2]);
    e.weight = r.number(f[3]);
    try {
      e.type = edge_type_from_string(f[4]);
    } catch (const ParseError&) {
      r.fail("unknown edge type '" + f[4] + "'");
    }
    if (e.src >= node_count || e.dst >= node_count) r.fail("edge endpoint out of range");
    adjacency[e.src].push_back(e);
  }
  auto trailer = r.next("end marker");
  if (trailer.size() != 1 || trailer[0] != "end") r.fail("missing end marker");
  if (!r.at_end()) r.fail("trailing content after end marker");

  try {
    return SimilarityGraph(std::move(nodes), std::move(adjacency), tau, k);
  } catch (const std::logic_error& e) {
    throw ParseError(std::string("graph file violates invariants: ") + e.what());
  }
}

void save_graph(const SimilarityGraph& graph, const std::filesystem::path& path) {
  io::atomic_write(path, serialize(graph));
}

SimilarityGraph load_graph(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("missing graph file " + path.string());
  return parse(io::read_file(path));
}

}  // namespace great::graph
