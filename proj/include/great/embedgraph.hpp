#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace great::graph {

enum class EdgeType { CleanClean, CleanAdv, AdvClean, AdvAdv };

std::string to_string(EdgeType type);
EdgeType edge_type_from_string(const std::string& tag);
EdgeType edge_type_for(bool src_adversarial, bool dst_adversarial);

struct NodeRecord {
  std::size_t id = 0;
  std::size_t sample_ref = 0;
  bool is_adversarial = false;
  std::vector<double> embedding;
  std::optional<int> label;

  friend bool operator==(const NodeRecord&, const NodeRecord&) = default;
};

struct EdgeRecord {
  std::size_t src = 0;
  std::size_t dst = 0;
  double weight = 0.0;
  EdgeType type = EdgeType::CleanClean;

  friend bool operator==(const EdgeRecord&, const EdgeRecord&) = default;
};

struct Neighbor {
  const NodeRecord* node = nullptr;
  double weight = 0.0;
  EdgeType type = EdgeType::CleanClean;
};

/// Directed similarity graph: each node keeps at most k out-edges, every
/// weight is >= tau, and adjacency lists are sorted by weight descending with
/// ties on the lower destination id first. Immutable once built.
class SimilarityGraph {
 public:
  SimilarityGraph() = default;
  /// Validates every invariant; throws ContractError on violation.
  SimilarityGraph(std::vector<NodeRecord> nodes, std::vector<std::vector<EdgeRecord>> adjacency,
                  double tau, std::size_t k);

  const std::vector<NodeRecord>& nodes() const { return nodes_; }
  const NodeRecord& node(std::size_t id) const;
  const std::vector<EdgeRecord>& adjacency(std::size_t id) const;
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t edge_count() const { return edge_count_; }
  double tau() const { return tau_; }
  std::size_t k() const { return k_; }

  /// Node ids by sample reference; nullopt when that sample has no such node.
  std::optional<std::size_t> clean_node(std::size_t sample_ref) const;
  std::optional<std::size_t> adversarial_node(std::size_t sample_ref) const;

  friend bool operator==(const SimilarityGraph& a, const SimilarityGraph& b) {
    return a.nodes_ == b.nodes_ && a.adjacency_ == b.adjacency_ && a.tau_ == b.tau_ && a.k_ == b.k_;
  }

 private:
  std::vector<NodeRecord> nodes_;
  std::vector<std::vector<EdgeRecord>> adjacency_;
  std::vector<std::optional<std::size_t>> clean_by_ref_;
  std::vector<std::optional<std::size_t>> adv_by_ref_;
  double tau_ = 0.0;
  std::size_t k_ = 0;
  std::size_t edge_count_ = 0;
};

double norm2(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);
/// Cosine similarity clamped to [0, 1]; 0 when either norm is below 1e-12.
double cosine(std::span<const double> a, std::span<const double> b);

struct BuildOptions {
  double tau = 0.8;
  std::size_t k = 2;
  // Keep u->v only if v->u was also selected.
  bool mutual = false;
};

/// Node ids must equal their positions in `nodes`.
SimilarityGraph build_graph(std::vector<NodeRecord> nodes, const BuildOptions& options);

std::vector<Neighbor> neighbors(const SimilarityGraph& graph, std::size_t node_id);

/// Text container, schema "great-graph 1":
///
///   great-graph 1
///   tau <tau> k <k> nodes <N> edges <E> dim <d>
///   N <id> <sample_ref> <adv 0|1> <label|-> <e_1> ... <e_d>     (N lines)
///   E <src> <dst> <weight> <cc|ca|ac|aa>                         (E lines)
///   end
///
/// Numbers are written with 17 significant digits, so reloading is exact.
std::string serialize(const SimilarityGraph& graph);
/// Throws ParseError naming the line on malformed, truncated, or unknown-version input.
SimilarityGraph parse(const std::string& text);
void save_graph(const SimilarityGraph& graph, const std::filesystem::path& path);
SimilarityGraph load_graph(const std::filesystem::path& path);

}  // namespace great::graph
