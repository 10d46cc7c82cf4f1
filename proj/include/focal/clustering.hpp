#pragma once

// Unsupervised inference over feature rows.
//
// HDBSCAN pipeline: core distances (k-th nearest other point) -> exact minimum
// spanning tree of the mutual-reachability graph (dense Prim) -> single-linkage
// dendrogram -> condensed tree (min_cluster_size) -> excess-of-mass selection.
// The resulting labels are mapped to a forgery mask by declaring the most
// populated cluster pristine and every other cluster forged.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "focal/error.hpp"
#include "focal/parallel.hpp"
#include "focal/random.hpp"
#include "focal/tensor.hpp"

namespace focal {

inline constexpr int kNoise = -1;

struct ClusterParams {
  std::size_t min_cluster_size = 64;
  /// k for core distances: distance to the k-th nearest other point.
  std::size_t min_samples = 8;
  std::size_t stride = 1;
  /// Lets the root of the condensed tree be selected, so data with a single
  /// density mode yields one cluster instead of being split.
  bool allow_single_cluster = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (min_cluster_size < 2) throw ConfigError("min_cluster_size must be >= 2");
    if (min_samples < 1) throw ConfigError("min_samples must be >= 1");
    if (stride < 1) throw ConfigError("stride must be >= 1");
  }
};

enum class ClusterAlgo { kHdbscan, kKmeans };

struct ClusterLabels {
  std::vector<int> labels;  // 0..cluster_count-1 or kNoise
  int cluster_count = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t noise_count() const noexcept {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), kNoise));
  }
};

struct WeightedEdge {
  std::size_t a = 0;  // a < b
  std::size_t b = 0;
  double weight = 0.0;
};

/// Rows of the condensed tree. Cluster ids start at num_points (the root);
/// child ids below num_points are single points falling out of `parent`.
struct CondensedTree {
  struct Row {
    std::size_t parent;
    std::size_t child;
    double lambda;
    std::size_t child_size;
  };
  std::size_t num_points = 0;
  std::size_t num_clusters = 0;
  std::vector<Row> rows;

  std::size_t root() const noexcept { return num_points; }
};

namespace detail {

inline constexpr std::size_t kTile = 64;

/// Points stored tile by tile: each tile holds kTile points as dims
/// contiguous runs of kTile floats (zero padded at the end).
class PointTiles {
 public:
  PointTiles(std::size_t n, std::size_t dims)
      : n_(n), dims_(dims), data_(((n + kTile - 1) / kTile) * kTile * dims, 0.0f) {}

  template <typename T>
  explicit PointTiles(const Matrix<T>& m) : PointTiles(m.rows(), m.cols()) {
    for (std::size_t r = 0; r < n_; ++r)
      for (std::size_t c = 0; c < dims_; ++c) at(r, c) = static_cast<float>(m(r, c));
  }

  std::size_t size() const noexcept { return n_; }
  std::size_t dims() const noexcept { return dims_; }
  float& at(std::size_t point, std::size_t dim) noexcept { return data_[offset(point, dim)]; }
  float at(std::size_t point, std::size_t dim) const noexcept { return data_[offset(point, dim)]; }
  const float* tile(std::size_t first_point) const noexcept { return data_.data() + first_point * dims_; }

  void move(std::size_t from, std::size_t to) noexcept {
    for (std::size_t d = 0; d < dims_; ++d) at(to, d) = at(from, d);
  }

 private:
  std::size_t offset(std::size_t point, std::size_t dim) const noexcept {
    return (point / kTile) * kTile * dims_ + dim * kTile + point % kTile;
  }

  std::size_t n_;
  std::size_t dims_;
  std::vector<float> data_;
};

#if defined(__AVX512F__)
inline constexpr std::size_t kVectorBytes = 64;
#else
inline constexpr std::size_t kVectorBytes = 32;
#endif

/// out[j] = sum_d (tile[d * kTile + j] - u[d])^2 for every slot of one tile.
/// Each pair is summed over d in increasing order, so d(a, b) == d(b, a)
/// bit-for-bit.
inline void tile_distances(const float* tile, std::size_t dims, const float* u, float* out) {
#if defined(__GNUC__)
  using vec = float __attribute__((vector_size(kVectorBytes)));
  constexpr std::size_t kLanes = kVectorBytes / sizeof(float), kVecs = kTile / kLanes;
  vec acc[kVecs] = {};
  for (std::size_t d = 0; d < dims; ++d) {
    const float* col = tile + d * kTile;
    const vec ud = vec{} + u[d];
    for (std::size_t t = 0; t < kVecs; ++t) {
      vec x;
      std::memcpy(&x, col + t * kLanes, sizeof x);
      const vec diff = x - ud;
      acc[t] += diff * diff;
    }
  }
  std::memcpy(out, acc, sizeof acc);
#else
  std::fill(out, out + kTile, 0.0f);
  for (std::size_t d = 0; d < dims; ++d)
    for (std::size_t j = 0; j < kTile; ++j) {
      const float diff = tile[d * kTile + j] - u[d];
      out[j] += diff * diff;
    }
#endif
}

/// Squared core distances: k-th smallest squared distance to another point.
inline std::vector<float> core_distances_squared(const PointTiles& pts, std::size_t k) {
  const std::size_t n = pts.size(), dims = pts.dims();
  if (k < 1) throw ConfigError("min_samples must be >= 1");
  if (n <= k)
    throw DimensionError("core distances need more than k=" + std::to_string(k) + " points, got " +
                         std::to_string(n));
  std::vector<float> core(n);
  // Queries go in blocks so that each tile is reused from cache.
  constexpr std::size_t kBlock = 32;
  const std::size_t blocks = (n + kBlock - 1) / kBlock;
  parallel_for(blocks, [&](std::size_t bbegin, std::size_t bend) {
    std::vector<float> u(kBlock * dims), best(kBlock * k);
    float dist[kTile];
    for (std::size_t b = bbegin; b < bend; ++b) {
      const std::size_t q0 = b * kBlock, qn = std::min(kBlock, n - q0);
      for (std::size_t q = 0; q < qn; ++q)
        for (std::size_t d = 0; d < dims; ++d) u[q * dims + d] = pts.at(q0 + q, d);
      std::fill(best.begin(), best.end(), std::numeric_limits<float>::infinity());
      for (std::size_t j0 = 0; j0 < n; j0 += kTile) {
        const std::size_t len = std::min(kTile, n - j0);
        for (std::size_t q = 0; q < qn; ++q) {
          tile_distances(pts.tile(j0), dims, u.data() + q * dims, dist);
          const std::size_t i = q0 + q;
          if (i >= j0 && i < j0 + len) dist[i - j0] = std::numeric_limits<float>::infinity();
          float* top = best.data() + q * k;
          for (std::size_t j = 0; j < len; ++j) {
            const float v = dist[j];
            if (!(v < top[k - 1])) continue;
            std::size_t pos = k - 1;
            while (pos > 0 && top[pos - 1] > v) {
              top[pos] = top[pos - 1];
              --pos;
            }
            top[pos] = v;
          }
        }
      }
      for (std::size_t q = 0; q < qn; ++q) core[q0 + q] = best[q * k + k - 1];
    }
  });
  return core;
}

/// Dense Prim over squared mutual-reachability distances. Keys are compared
/// in the squared domain (monotone), weights reported as distances. Among
/// equal keys the lower vertex index is taken; a vertex keeps its first
/// parent when a later candidate only ties its key.
inline std::vector<WeightedEdge> prim_mutual_reachability(const PointTiles& pts, std::span<const float> core_sq) {
  const std::size_t n = pts.size();
  if (core_sq.size() != n) throw DimensionError("core distance count differs from point count");
  std::vector<WeightedEdge> edges;
  if (n < 2) return edges;
  edges.reserve(n - 1);

  // Vertices not yet in the tree, kept compact by swap-removal.
  const std::size_t dims = pts.dims();
  const std::size_t m = n - 1;
  PointTiles rest(m, dims);
  std::vector<std::size_t> ids(m);
  std::vector<float> key(m, std::numeric_limits<float>::infinity());
  std::vector<std::size_t> parent(m, std::numeric_limits<std::size_t>::max());
  std::vector<float> core_r(m);
  for (std::size_t j = 1; j < n; ++j) {
    ids[j - 1] = j;
    core_r[j - 1] = core_sq[j];
    for (std::size_t d = 0; d < dims; ++d) rest.at(j - 1, d) = pts.at(j, d);
  }
  std::size_t remaining = m;
  std::size_t current = 0;
  std::vector<float> u(dims);
  float dist[kTile];
  while (remaining > 0) {
    for (std::size_t d = 0; d < dims; ++d) u[d] = pts.at(current, d);
    const float core_u = core_sq[current];
    float min_key = std::numeric_limits<float>::infinity();
    std::size_t best = 0;
    for (std::size_t j0 = 0; j0 < remaining; j0 += kTile) {
      const std::size_t len = std::min(kTile, remaining - j0);
      float* kt = key.data() + j0;
      std::size_t* pt = parent.data() + j0;
      const float* ct = core_r.data() + j0;
      // Keys are bounded below by max(core_u, core_r); skip tiles already there.
      bool open = false;
      for (std::size_t j = 0; j < len; ++j) open |= std::max(core_u, ct[j]) < kt[j];
      if (open) {
        tile_distances(rest.tile(j0), dims, u.data(), dist);
        for (std::size_t j = 0; j < len; ++j) {
          const float mr = std::max(std::max(dist[j], core_u), ct[j]);
          const bool take = mr < kt[j];
          kt[j] = take ? mr : kt[j];
          pt[j] = take ? current : pt[j];
        }
      }
      for (std::size_t j = 0; j < len; ++j)
        if (kt[j] < min_key || (kt[j] == min_key && ids[j0 + j] < ids[best])) {
          min_key = kt[j];
          best = j0 + j;
        }
    }

    const std::size_t v = ids[best];
    const std::size_t p = parent[best];
    edges.push_back({std::min(v, p), std::max(v, p), std::sqrt(static_cast<double>(key[best]))});
    current = v;

    const std::size_t last = remaining - 1;
    ids[best] = ids[last];
    key[best] = key[last];
    parent[best] = parent[last];
    core_r[best] = core_r[last];
    rest.move(last, best);
    --remaining;
  }
  return edges;
}

struct Dendrogram {
  // Internal node n + i merges left[i] and right[i] at distance[i].
  std::vector<std::size_t> left, right, size;
  std::vector<double> distance;
  std::size_t num_points = 0;

  std::size_t node_size(std::size_t node) const { return node < num_points ? 1 : size[node - num_points]; }
};

/// Single-linkage dendrogram from MST edges (sorted by weight, then by the
/// endpoint pair).
inline Dendrogram single_linkage(std::size_t n, std::vector<WeightedEdge> edges) {
  std::sort(edges.begin(), edges.end(), [](const WeightedEdge& x, const WeightedEdge& y) {
    if (x.weight != y.weight) return x.weight < y.weight;
    if (x.a != y.a) return x.a < y.a;
    return x.b < y.b;
  });
  Dendrogram dg;
  dg.num_points = n;
  std::vector<std::size_t> uf(2 * n - 1);
  std::iota(uf.begin(), uf.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    std::size_t r = x;
    while (uf[r] != r) r = uf[r];
    while (uf[x] != r) {
      const std::size_t next = uf[x];
      uf[x] = r;
      x = next;
    }
    return r;
  };
  std::size_t next = n;
  for (const auto& e : edges) {
    const std::size_t ra = find(e.a), rb = find(e.b);
    if (ra == rb) throw Error("spanning tree edges contain a cycle");
    dg.left.push_back(ra);
    dg.right.push_back(rb);
    dg.distance.push_back(e.weight);
    dg.size.push_back(dg.node_size(ra) + dg.node_size(rb));
    uf[ra] = next;
    uf[rb] = next;
    ++next;
  }
  return dg;
}

/// Lambda (inverse distance) used for coincident points.
inline constexpr double kMaxLambda = 1e300;

inline double lambda_of(double distance) { return distance > 0.0 ? 1.0 / distance : kMaxLambda; }

}  // namespace detail

/// Euclidean distance from each point to its k-th nearest other point.
template <typename T>
std::vector<double> core_distances(const Matrix<T>& points, std::size_t k) {
  const auto sq = detail::core_distances_squared(detail::PointTiles(points), k);
  std::vector<double> out(sq.size());
  std::transform(sq.begin(), sq.end(), out.begin(), [](float v) { return std::sqrt(static_cast<double>(v)); });
  return out;
}

/// Exact MST of the complete graph weighted by
/// max(core(a), core(b), |a - b|). N - 1 edges in the order Prim adds them.
template <typename T>
std::vector<WeightedEdge> mst_mutual_reachability(const Matrix<T>& points, std::span<const double> core) {
  if (core.size() != points.rows()) throw DimensionError("core distance count differs from point count");
  std::vector<float> core_sq(core.size());
  std::transform(core.begin(), core.end(), core_sq.begin(), [](double c) { return static_cast<float>(c * c); });
  return detail::prim_mutual_reachability(detail::PointTiles(points), core_sq);
}

inline CondensedTree condense_tree(const detail::Dendrogram& dg, std::size_t min_cluster_size) {
  const std::size_t n = dg.num_points;
  CondensedTree tree;
  tree.num_points = n;
  if (n < 2) {
    tree.num_clusters = 1;
    return tree;
  }
  const std::size_t top = 2 * n - 2;
  std::vector<std::size_t> relabel(2 * n - 1, 0);
  std::vector<char> ignore(2 * n - 1, 0);
  relabel[top] = n;
  std::size_t next_label = n + 1;

  auto children = [&](std::size_t node) -> std::pair<std::size_t, std::size_t> {
    return {dg.left[node - n], dg.right[node - n]};
  };
  // Emits every point under `node` as falling out of `parent` at `lambda`.
  auto shed = [&](std::size_t node, std::size_t parent, double lambda) {
    std::vector<std::size_t> stack{node};
    while (!stack.empty()) {
      const std::size_t s = stack.back();
      stack.pop_back();
      ignore[s] = 1;
      if (s < n) {
        tree.rows.push_back({parent, s, lambda, 1});
      } else {
        auto [l, r] = children(s);
        stack.push_back(r);
        stack.push_back(l);
      }
    }
  };

  // Breadth-first over the dendrogram from the top merge.
  std::vector<std::size_t> queue{top};
  for (std::size_t qi = 0; qi < queue.size(); ++qi) {
    const std::size_t node = queue[qi];
    if (node < n || ignore[node]) continue;
    auto [l, r] = children(node);
    queue.push_back(l);
    queue.push_back(r);
    const double lambda = detail::lambda_of(dg.distance[node - n]);
    const std::size_t ls = dg.node_size(l), rs = dg.node_size(r);
    const std::size_t parent = relabel[node];
    if (ls >= min_cluster_size && rs >= min_cluster_size) {
      relabel[l] = next_label++;
      tree.rows.push_back({parent, relabel[l], lambda, ls});
      relabel[r] = next_label++;
      tree.rows.push_back({parent, relabel[r], lambda, rs});
    } else if (ls < min_cluster_size && rs < min_cluster_size) {
      shed(l, parent, lambda);
      shed(r, parent, lambda);
    } else if (ls < min_cluster_size) {
      relabel[r] = parent;
      shed(l, parent, lambda);
    } else {
      relabel[l] = parent;
      shed(r, parent, lambda);
    }
  }
  tree.num_clusters = next_label - n;
  return tree;
}

/// Excess-of-mass stability per cluster (index = cluster id - num_points).
inline std::vector<double> cluster_stability(const CondensedTree& tree) {
  const std::size_t n = tree.num_points;
  std::vector<double> birth(tree.num_clusters, 0.0), stability(tree.num_clusters, 0.0);
  for (const auto& row : tree.rows)
    if (row.child >= n) birth[row.child - n] = row.lambda;
  for (const auto& row : tree.rows)
    stability[row.parent - n] += (row.lambda - birth[row.parent - n]) * static_cast<double>(row.child_size);
  return stability;
}

/// Selected cluster ids (ascending) under excess-of-mass.
inline std::vector<std::size_t> select_clusters_eom(const CondensedTree& tree, bool allow_single_cluster) {
  const std::size_t n = tree.num_points;
  auto stability = cluster_stability(tree);
  std::vector<std::vector<std::size_t>> kids(tree.num_clusters);
  for (const auto& row : tree.rows)
    if (row.child >= n) kids[row.parent - n].push_back(row.child);

  std::vector<char> selected(tree.num_clusters, 0);
  const std::size_t first = allow_single_cluster ? 0 : 1;
  for (std::size_t c = first; c < tree.num_clusters; ++c) selected[c] = 1;
  for (std::size_t c = tree.num_clusters; c-- > first;) {
    double subtree = 0.0;
    for (auto k : kids[c]) subtree += stability[k - n];
    if (subtree > stability[c]) {
      selected[c] = 0;
      stability[c] = subtree;
    } else {
      std::vector<std::size_t> stack(kids[c].begin(), kids[c].end());
      while (!stack.empty()) {
        const std::size_t s = stack.back();
        stack.pop_back();
        selected[s - n] = 0;
        stack.insert(stack.end(), kids[s - n].begin(), kids[s - n].end());
      }
    }
  }
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < tree.num_clusters; ++c)
    if (selected[c]) out.push_back(c + n);
  return out;
}

/// Point labels from the selected clusters. A point belongs to its nearest
/// selected ancestor. If the root itself is selected, only points that stay
/// until the root's last split/shedding level are labeled; the rest are noise.
inline ClusterLabels label_points(const CondensedTree& tree, const std::vector<std::size_t>& selected) {
  const std::size_t n = tree.num_points;
  ClusterLabels out;
  out.labels.assign(n, kNoise);
  out.cluster_count = static_cast<int>(selected.size());
  std::vector<int> label_of(tree.num_clusters, kNoise);
  for (std::size_t i = 0; i < selected.size(); ++i) label_of[selected[i] - n] = static_cast<int>(i);

  std::vector<std::size_t> cluster_parent(tree.num_clusters, tree.root());
  std::vector<std::size_t> point_parent(n, tree.root());
  std::vector<double> point_lambda(n, 0.0);
  double root_max_lambda = 0.0;
  for (const auto& row : tree.rows) {
    if (row.child >= n) {
      cluster_parent[row.child - n] = row.parent;
    } else {
      point_parent[row.child] = row.parent;
      point_lambda[row.child] = row.lambda;
    }
    if (row.parent == tree.root()) root_max_lambda = std::max(root_max_lambda, row.lambda);
  }
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t c = point_parent[p];
    while (label_of[c - n] == kNoise && c != tree.root()) c = cluster_parent[c - n];
    if (label_of[c - n] == kNoise) continue;
    if (c == tree.root() && point_lambda[p] < root_max_lambda) continue;
    out.labels[p] = label_of[c - n];
  }
  return out;
}

template <typename T>
ClusterLabels hdbscan(const Matrix<T>& points, const ClusterParams& params) {
  params.validate();
  const std::size_t n = points.rows();
  if (n < std::max(params.min_cluster_size, params.min_samples + 1))
    throw DimensionError("hdbscan needs at least max(min_cluster_size, min_samples + 1) points, got " +
                         std::to_string(n));
  const detail::PointTiles pts(points);
  const auto core = detail::core_distances_squared(pts, params.min_samples);
  auto edges = detail::prim_mutual_reachability(pts, core);
  const auto dg = detail::single_linkage(n, std::move(edges));
  const auto tree = condense_tree(dg, params.min_cluster_size);
  return label_points(tree, select_clusters_eom(tree, params.allow_single_cluster));
}

// ---------------------------------------------------------------------------
// K-means (k-means++ seeding, Lloyd iterations).

struct KMeansResult {
  ClusterLabels labels;
  Matrix<double> centroids;
  std::size_t iterations = 0;
};

template <typename T>
KMeansResult kmeans_fit(const Matrix<T>& points, std::size_t k, std::uint64_t seed, std::size_t max_iter = 100,
                        double tol = 1e-6) {
  const std::size_t n = points.rows(), dims = points.cols();
  if (k < 1) throw ConfigError("k must be >= 1");
  if (n < k) throw DimensionError("kmeans needs at least k points");
  auto sqdist = [&](std::size_t p, std::span<const double> c) {
    double s = 0.0;
    for (std::size_t d = 0; d < dims; ++d) {
      const double diff = static_cast<double>(points(p, d)) - c[d];
      s += diff * diff;
    }
    return s;
  };

  Rng rng(seed);
  Matrix<double> centroids(k, dims);
  auto set_centroid = [&](std::size_t c, std::size_t p) {
    for (std::size_t d = 0; d < dims; ++d) centroids(c, d) = static_cast<double>(points(p, d));
  };
  set_centroid(0, rng.below(n));
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      nearest[p] = std::min(nearest[p], sqdist(p, centroids.row(c - 1)));
      total += nearest[p];
    }
    std::size_t pick = rng.below(n);
    if (total > 0.0) {
      double target = rng.uniform() * total;
      for (std::size_t p = 0; p < n; ++p) {
        if (nearest[p] <= 0.0) continue;
        pick = p;
        target -= nearest[p];
        if (target < 0.0) break;
      }
    }
    set_centroid(c, pick);
  }

  std::vector<std::size_t> assign(n, 0);
  auto assign_all = [&] {
    for (std::size_t p = 0; p < n; ++p) {
      std::size_t best = 0;
      double best_d = sqdist(p, centroids.row(0));
      for (std::size_t c = 1; c < k; ++c) {
        const double d = sqdist(p, centroids.row(c));
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      assign[p] = best;
    }
  };

  KMeansResult result;
  assign_all();
  for (std::size_t it = 0; it < max_iter; ++it) {
    Matrix<double> sums(k, dims);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t p = 0; p < n; ++p) {
      ++counts[assign[p]];
      for (std::size_t d = 0; d < dims; ++d) sums(assign[p], d) += static_cast<double>(points(p, d));
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      double s = 0.0;
      for (std::size_t d = 0; d < dims; ++d) {
        const double updated = sums(c, d) / static_cast<double>(counts[c]);
        s += (updated - centroids(c, d)) * (updated - centroids(c, d));
        centroids(c, d) = updated;
      }
      shift = std::max(shift, std::sqrt(s));
    }
    assign_all();
    result.iterations = it + 1;
    if (shift < tol) break;
  }

  // Compact labels so that they are contiguous even if a centroid lost all points.
  std::vector<int> remap(k, kNoise);
  int next = 0;
  for (std::size_t c = 0; c < k; ++c)
    if (std::find(assign.begin(), assign.end(), c) != assign.end()) remap[c] = next++;
  result.labels.labels.resize(n);
  for (std::size_t p = 0; p < n; ++p) result.labels.labels[p] = remap[assign[p]];
  result.labels.cluster_count = next;
  result.centroids = std::move(centroids);
  return result;
}

template <typename T>
ClusterLabels kmeans(const Matrix<T>& points, std::size_t k, std::uint64_t seed) {
  return kmeans_fit(points, k, seed).labels;
}

// ---------------------------------------------------------------------------
// Labels to forgery mask.

/// Noise points take the label of their nearest labeled point in feature
/// space (lowest index on ties). If every point is noise the labels are
/// returned unchanged.
template <typename T>
ClusterLabels resolve_noise(const ClusterLabels& labels, const Matrix<T>& points) {
  if (labels.size() != points.rows()) throw DimensionError("label count differs from point count");
  ClusterLabels out = labels;
  std::vector<std::size_t> anchors;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels.labels[i] != kNoise) anchors.push_back(i);
  if (anchors.empty() || anchors.size() == labels.size()) return out;
  const std::size_t dims = points.cols();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels.labels[i] != kNoise) continue;
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_j = anchors.front();
    for (std::size_t j : anchors) {
      double s = 0.0;
      for (std::size_t d = 0; d < dims; ++d) {
        const double diff = static_cast<double>(points(i, d)) - static_cast<double>(points(j, d));
        s += diff * diff;
      }
      if (s < best) {
        best = s;
        best_j = j;
      }
    }
    out.labels[i] = labels.labels[best_j];
  }
  return out;
}

/// Largest cluster -> pristine, every other cluster -> forged. Noise is
/// resolved first (see resolve_noise); all-noise input gives an all-pristine
/// mask. Ties on the largest size go to the cluster that owns the lowest
/// raster index. With stride > 1 the label grid is replicated back to H x W.
template <typename T>
ForgeryMask labels_to_mask(const ClusterLabels& labels, const Matrix<T>& points, std::size_t height,
                           std::size_t width, std::size_t stride = 1) {
  if (stride < 1) throw ConfigError("stride must be >= 1");
  const std::size_t gh = (height + stride - 1) / stride, gw = (width + stride - 1) / stride;
  if (labels.size() != gh * gw)
    throw DimensionError("label count " + std::to_string(labels.size()) + " does not match a " +
                         std::to_string(gh) + "x" + std::to_string(gw) + " grid");
  const auto resolved = resolve_noise(labels, points);
  ForgeryMask mask(height, width);
  if (resolved.noise_count() == resolved.size() || resolved.cluster_count <= 1) return mask;

  std::vector<std::size_t> counts(static_cast<std::size_t>(resolved.cluster_count), 0);
  std::vector<std::size_t> first_seen(counts.size(), std::numeric_limits<std::size_t>::max());
  for (std::size_t i = 0; i < resolved.size(); ++i) {
    const int l = resolved.labels[i];
    if (l == kNoise) continue;
    ++counts[static_cast<std::size_t>(l)];
    first_seen[static_cast<std::size_t>(l)] = std::min(first_seen[static_cast<std::size_t>(l)], i);
  }
  std::size_t pristine = 0;
  for (std::size_t c = 1; c < counts.size(); ++c)
    if (counts[c] > counts[pristine] || (counts[c] == counts[pristine] && first_seen[c] < first_seen[pristine]))
      pristine = c;

  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const int l = resolved.labels[(y / stride) * gw + (x / stride)];
      mask.set(y, x, l != kNoise && static_cast<std::size_t>(l) != pristine);
    }
  return mask;
}

/// Normalize, cluster and map one feature map to a mask. No trained state.
template <typename T>
ForgeryMask predict_mask(const BasicFeatureMap<T>& f, const ClusterParams& params,
                         ClusterAlgo algo = ClusterAlgo::kHdbscan) {
  params.validate();
  const auto points = l2_normalize_rows(flatten_strided(f, params.stride));
  const auto labels = algo == ClusterAlgo::kHdbscan ? hdbscan(points, params) : kmeans(points, 2, params.seed);
  return labels_to_mask(labels, points, f.height(), f.width(), params.stride);
}

}  // namespace focal
