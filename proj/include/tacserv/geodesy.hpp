#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "tacserv/common.hpp"
#include "tacserv/graph.hpp"

namespace tacserv {

/// One bin of samples with its dense approximate geodesic distance matrix.
struct GeodesicBin {
  std::vector<int> indices;  // sample indices into the parent dataset
  MatX distances;            // symmetric, zero diagonal, meters
  int m_neighbors = 0;
};

/// A Siamese training pair within one bin, with its geodesic target.
struct SiamesePair {
  int a = 0;  // index into GeodesicBin::indices
  int b = 0;
  double geodesic = 0.0;
  int bin = 0;
};

/// Symmetrized M-nearest-neighbor graph over 3D contact points, edge weights
/// are Euclidean chord lengths. Ties broken by lowest index.
inline AdjGraph knn_graph(const std::vector<Vec3>& points, int m) {
  const int n = static_cast<int>(points.size());
  if (m < 1) throw TacservError("knn_graph: M must be >= 1");
  if (n < m + 1) throw TacservError("knn_graph: need at least M+1 points");
  AdjGraph g;
  g.adj.assign(n, {});
  std::vector<std::pair<double, int>> cand;
  std::vector<std::vector<int>> nbrs(n);
  for (int i = 0; i < n; ++i) {
    cand.clear();
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      cand.emplace_back((points[i] - points[j]).squaredNorm(), j);
    }
    std::partial_sort(cand.begin(), cand.begin() + m, cand.end());
    nbrs[i].reserve(m);
    for (int k = 0; k < m; ++k) nbrs[i].push_back(cand[k].second);
  }
  // Union-symmetrize without duplicate edges.
  for (int i = 0; i < n; ++i) {
    for (int j : nbrs[i]) {
      const bool mutual = std::find(nbrs[j].begin(), nbrs[j].end(), i) != nbrs[j].end();
      if (mutual && j < i) continue;  // already added from j's side
      g.add_edge(i, j, (points[i] - points[j]).norm());
    }
  }
  return g;
}

/// All-pairs shortest paths over a connected graph. Errors out on a
/// disconnected graph, naming the component sizes.
inline MatX geodesic_matrix(const AdjGraph& g) {
  const auto sizes = component_sizes(g);
  if (sizes.size() > 1) {
    std::string msg = "geodesic_matrix: graph disconnected, component sizes:";
    for (int s : sizes) msg += " " + std::to_string(s);
    throw TacservError(msg + " (raise M or re-bin)");
  }
  const int n = g.size();
  MatX d(n, n);
  for (int i = 0; i < n; ++i) {
    const auto row = dijkstra(g, i);
    for (int j = 0; j < n; ++j) d(i, j) = row[j];
  }
  // Symmetrize away the last few ulps of heap-order nondeterminism.
  d = ((d + d.transpose()) * 0.5).eval();
  return d;
}

/// Floyd-Warshall all-pairs shortest paths; test oracle for small graphs.
inline MatX geodesic_matrix_floyd_warshall(const AdjGraph& g) {
  const int n = g.size();
  const double inf = std::numeric_limits<double>::infinity();
  MatX d = MatX::Constant(n, n, inf);
  for (int i = 0; i < n; ++i) d(i, i) = 0.0;
  for (int i = 0; i < n; ++i)
    for (const auto& e : g.adj[i]) d(i, e.to) = std::min(d(i, e.to), e.w);
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (d(i, k) + d(k, j) < d(i, j)) d(i, j) = d(i, k) + d(k, j);
  return d;
}

/// Random partition into floor(N/N') bins of exactly N' samples; the
/// remainder is discarded. Each bin gets its own geodesic matrix.
inline std::vector<GeodesicBin> bin_split(const std::vector<Vec3>& points,
                                          int bin_size, int m, std::uint64_t seed) {
  const int n = static_cast<int>(points.size());
  if (n < bin_size) throw TacservError("bin_split: fewer samples than bin size");
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  const int p = n / bin_size;
  std::vector<GeodesicBin> bins;
  bins.reserve(p);
  for (int b = 0; b < p; ++b) {
    GeodesicBin bin;
    bin.m_neighbors = m;
    bin.indices.assign(perm.begin() + b * bin_size, perm.begin() + (b + 1) * bin_size);
    std::vector<Vec3> pts;
    pts.reserve(bin_size);
    for (int idx : bin.indices) pts.push_back(points[idx]);
    bin.distances = geodesic_matrix(knn_graph(pts, m));
    bins.push_back(std::move(bin));
  }
  return bins;
}

/// Uniformly sample a bin, then an unordered pair within it, attaching the
/// precomputed geodesic target. `allowed`, when given, restricts the draw to
/// the listed within-bin positions (used to train on the train split only).
inline std::vector<SiamesePair> sample_siamese_pairs(
    const std::vector<GeodesicBin>& bins, int batch_size, Rng& rng,
    const std::vector<std::vector<int>>* allowed = nullptr) {
  if (bins.empty()) throw TacservError("sample_siamese_pairs: no bins");
  std::vector<int> usable;
  for (int b = 0; b < static_cast<int>(bins.size()); ++b) {
    const int n = allowed ? static_cast<int>((*allowed)[b].size())
                          : static_cast<int>(bins[b].indices.size());
    if (n >= 2) usable.push_back(b);
  }
  if (usable.empty()) throw TacservError("sample_siamese_pairs: no bin has 2 samples");
  std::vector<SiamesePair> out;
  out.reserve(batch_size);
  std::uniform_int_distribution<int> bin_dist(0, static_cast<int>(usable.size()) - 1);
  for (int k = 0; k < batch_size; ++k) {
    const int b = usable[bin_dist(rng)];
    const int n = allowed ? static_cast<int>((*allowed)[b].size())
                          : static_cast<int>(bins[b].indices.size());
    std::uniform_int_distribution<int> idx(0, n - 1);
    int a = idx(rng);
    int c = idx(rng);
    while (c == a) c = idx(rng);
    if (allowed) {
      a = (*allowed)[b][a];
      c = (*allowed)[b][c];
    }
    out.push_back({a, c, bins[b].distances(a, c), b});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Binary bin container: header (magic, version, N', M, seed), index list,
// lower-triangular packed distance matrix, 64-bit little-endian floats.
// ---------------------------------------------------------------------------

inline void save_bins(const std::vector<GeodesicBin>& bins, std::uint64_t seed,
                      const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw TacservError("cannot write bin file: " + path);
  auto put_u64 = [&out](std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), 8);
  };
  put_u64(0x54435642494E3031ull);  // magic "TCVBIN01"
  put_u64(1);                      // version
  put_u64(bins.size());
  put_u64(seed);
  for (const auto& bin : bins) {
    put_u64(bin.indices.size());
    put_u64(static_cast<std::uint64_t>(bin.m_neighbors));
    for (int idx : bin.indices) put_u64(static_cast<std::uint64_t>(idx));
    const int n = static_cast<int>(bin.indices.size());
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j) {
        const double v = bin.distances(i, j);
        out.write(reinterpret_cast<const char*>(&v), 8);
      }
  }
}

inline std::vector<GeodesicBin> load_bins(const std::string& path,
                                          std::uint64_t* seed_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TacservError("cannot open bin file: " + path);
  auto get_u64 = [&in]() {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  if (get_u64() != 0x54435642494E3031ull) throw TacservError("bad bin file magic");
  if (get_u64() != 1) throw TacservError("unsupported bin file version");
  const std::uint64_t count = get_u64();
  const std::uint64_t seed = get_u64();
  if (seed_out) *seed_out = seed;
  std::vector<GeodesicBin> bins(count);
  for (auto& bin : bins) {
    const int n = static_cast<int>(get_u64());
    bin.m_neighbors = static_cast<int>(get_u64());
    bin.indices.resize(n);
    for (int i = 0; i < n; ++i) bin.indices[i] = static_cast<int>(get_u64());
    bin.distances = MatX::Zero(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j <= i; ++j) {
        double v = 0;
        in.read(reinterpret_cast<char*>(&v), 8);
        bin.distances(i, j) = v;
        bin.distances(j, i) = v;
      }
  }
  if (!in) throw TacservError("truncated bin file: " + path);
  return bins;
}

}  // namespace tacserv
