#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "tacserv/geodesy.hpp"
#include "tacserv/graph.hpp"

using namespace tacserv;

namespace {

std::vector<Vec3> random_points(int n, Rng& rng, double scale = 1.0) {
  std::vector<Vec3> pts;
  pts.reserve(n);
  for (int i = 0; i < n; ++i)
    pts.emplace_back(uniform(rng, -scale, scale), uniform(rng, -scale, scale),
                     uniform(rng, -scale, scale));
  return pts;
}

std::vector<Vec3> sphere_cap_points(int n, double radius, double theta_max, Rng& rng) {
  std::vector<Vec3> pts;
  pts.reserve(n);
  while (static_cast<int>(pts.size()) < n) {
    const double c = uniform(rng, std::cos(theta_max), 1.0);
    const double th = std::acos(c);
    const double ph = uniform(rng, 0.0, 2.0 * M_PI);
    pts.emplace_back(radius * std::sin(th) * std::cos(ph),
                     radius * std::sin(th) * std::sin(ph), radius * c);
  }
  return pts;
}

// Equal-area spiral: quasi-uniform spacing, the sampling used where graph
// geodesics must track analytic arc lengths tightly.
std::vector<Vec3> sphere_cap_spiral(int n, double radius, double theta_max) {
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  const double cos_min = std::cos(theta_max);
  std::vector<Vec3> pts;
  pts.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double c = 1.0 - (i + 0.5) / n * (1.0 - cos_min);
    const double th = std::acos(c);
    const double ph = i * golden;
    pts.emplace_back(radius * std::sin(th) * std::cos(ph),
                     radius * std::sin(th) * std::sin(ph), radius * c);
  }
  return pts;
}

}  // namespace

TEST_CASE("dijkstra on a hand-built graph") {
  AdjGraph g;
  g.adj.assign(4, {});
  g.add_edge(0, 1, 1.0);
  g.add_edge(1, 2, 2.0);
  g.add_edge(0, 2, 5.0);
  const auto d = dijkstra(g, 0);
  REQUIRE(d[0] == 0.0);
  REQUIRE(d[1] == 1.0);
  REQUIRE(d[2] == 3.0);  // through vertex 1, not the direct 5.0 edge
  REQUIRE(std::isinf(d[3]));
}

TEST_CASE("dijkstra matches floyd-warshall on random graphs") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 40;
    AdjGraph g;
    g.adj.assign(n, {});
    for (int i = 1; i < n; ++i)
      g.add_edge(i, std::uniform_int_distribution<int>(0, i - 1)(rng),
                 uniform(rng, 0.1, 2.0));
    for (int k = 0; k < 2 * n; ++k) {
      const int a = std::uniform_int_distribution<int>(0, n - 1)(rng);
      const int b = std::uniform_int_distribution<int>(0, n - 1)(rng);
      if (a != b) g.add_edge(a, b, uniform(rng, 0.1, 2.0));
    }
    const MatX fw = geodesic_matrix_floyd_warshall(g);
    const MatX dj = geodesic_matrix(g);
    REQUIRE((fw - dj).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("knn graph of a collinear chain with M=1") {
  const std::vector<Vec3> pts = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  const AdjGraph g = knn_graph(pts, 1);
  // middle point picks its lowest-index tie; ends pick the middle
  REQUIRE(g.adj[0].size() == 1);
  REQUIRE(g.adj[0][0].to == 1);
  REQUIRE(g.adj[0][0].w == 1.0);
  REQUIRE(g.adj[2].size() == 1);
  REQUIRE(g.adj[2][0].to == 1);
  const MatX d = geodesic_matrix(g);
  REQUIRE(d(0, 2) == 2.0);  // path concatenation through the middle
  REQUIRE(d.diagonal().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("knn graph with M = N-1 is complete") {
  Rng rng(3);
  const auto pts = random_points(8, rng);
  const AdjGraph g = knn_graph(pts, 7);
  int edges = 0;
  for (const auto& a : g.adj) edges += static_cast<int>(a.size());
  REQUIRE(edges == 8 * 7);  // each undirected edge appears twice
}

TEST_CASE("knn graph edges are symmetric (union-symmetrized)") {
  Rng rng(4);
  const auto pts = random_points(60, rng);
  const AdjGraph g = knn_graph(pts, 5);
  for (int i = 0; i < g.size(); ++i)
    for (const auto& e : g.adj[i]) {
      bool found = false;
      for (const auto& b : g.adj[e.to])
        if (b.to == i && b.w == e.w) found = true;
      REQUIRE(found);
    }
}

TEST_CASE("geodesic matrix errors on disconnected graphs naming component sizes") {
  AdjGraph g;
  g.adj.assign(5, {});
  g.add_edge(0, 1, 1.0);
  g.add_edge(2, 3, 1.0);
  g.add_edge(3, 4, 1.0);
  REQUIRE_THROWS_WITH(geodesic_matrix(g),
                      Catch::Matchers::ContainsSubstring("2") &&
                          Catch::Matchers::ContainsSubstring("3"));
}

TEST_CASE("geodesic matrix is symmetric with zero diagonal and dominates chords") {
  Rng rng(5);
  const auto pts = sphere_cap_points(150, 1.0, 1.1, rng);
  const MatX d = geodesic_matrix(knn_graph(pts, 10));
  REQUIRE((d - d.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  REQUIRE(d.diagonal().cwiseAbs().maxCoeff() == 0.0);
  for (int i = 0; i < 150; i += 7)
    for (int j = 0; j < 150; j += 5)
      REQUIRE(d(i, j) >= (pts[i] - pts[j]).norm() - 1e-12);
}

TEST_CASE("geodesic matrix satisfies the triangle inequality") {
  Rng rng(6);
  const auto pts = sphere_cap_points(100, 1.0, 1.1, rng);
  const MatX d = geodesic_matrix(knn_graph(pts, 10));
  Rng pick(7);
  std::uniform_int_distribution<int> idx(0, 99);
  for (int t = 0; t < 1000; ++t) {
    const int a = idx(pick), b = idx(pick), c = idx(pick);
    REQUIRE(d(a, c) <= d(a, b) + d(b, c) + 1e-12);
  }
}

TEST_CASE("geodesic matrix on a flat patch approximates euclidean distances") {
  // Jittered grid: dense quasi-uniform sampling of a planar patch.
  Rng rng(8);
  std::vector<Vec3> pts;
  for (int i = 0; i < 25; ++i)
    for (int j = 0; j < 20; ++j)
      pts.emplace_back(i * 0.04 + 0.006 * gaussian(rng),
                       j * 0.04 + 0.006 * gaussian(rng), 0.25);
  const MatX d = geodesic_matrix(knn_graph(pts, 18));
  double worst = 0.0, sum = 0.0;
  int count = 0;
  for (size_t i = 0; i < pts.size(); i += 7)
    for (size_t j = 0; j < pts.size(); j += 3) {
      const double eu = (pts[i] - pts[j]).norm();
      if (eu < 0.3) continue;  // look at genuinely multi-hop paths
      const double rel = (d(i, j) - eu) / eu;
      worst = std::max(worst, rel);
      sum += rel;
      ++count;
    }
  REQUIRE(count > 100);
  REQUIRE(sum / count < 0.01);  // locally 2D-Euclidean on average
  REQUIRE(worst < 0.08);
}

TEST_CASE("geodesic matrix on a spherical cap tracks great-circle arcs") {
  const double radius = 1.0;
  const auto pts = sphere_cap_spiral(500, radius, 1.1);
  const AdjGraph g = knn_graph(pts, 18);
  const MatX d = geodesic_matrix(g);
  // Hop counts to exclude short-range pairs where chord/arc effects dominate.
  auto hops_from = [&](int src) {
    std::vector<int> h(pts.size(), -1);
    std::vector<int> q{src};
    h[src] = 0;
    for (size_t head = 0; head < q.size(); ++head) {
      const int u = q[head];
      for (const auto& e : g.adj[u])
        if (h[e.to] < 0) {
          h[e.to] = h[u] + 1;
          q.push_back(e.to);
        }
    }
    return h;
  };
  double worst = 0.0;
  int checked = 0;
  for (int i = 0; i < 500; i += 17) {
    const auto h = hops_from(i);
    for (int j = 0; j < 500; j += 3) {
      if (h[j] < 5) continue;
      const double ang = std::acos(std::clamp(pts[i].dot(pts[j]), -1.0, 1.0));
      worst = std::max(worst, std::abs(d(i, j) - radius * ang) / (radius * ang));
      ++checked;
    }
  }
  REQUIRE(checked > 100);
  REQUIRE(worst < 0.05);
}

TEST_CASE("bin split produces floor(N/N') equal bins and discards the remainder") {
  Rng rng(10);
  const auto pts = sphere_cap_points(460, 1.0, 1.1, rng);
  const auto bins = bin_split(pts, 200, 12, 99);
  REQUIRE(bins.size() == 2);
  for (const auto& b : bins) {
    REQUIRE(b.indices.size() == 200);
    REQUIRE(b.distances.rows() == 200);
    REQUIRE((b.distances - b.distances.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  }
  // No index appears twice across bins.
  std::vector<int> seen;
  for (const auto& b : bins)
    seen.insert(seen.end(), b.indices.begin(), b.indices.end());
  std::sort(seen.begin(), seen.end());
  REQUIRE(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
}

TEST_CASE("bin split is deterministic in the seed") {
  Rng rng(12);
  const auto pts = sphere_cap_points(300, 1.0, 1.1, rng);
  const auto a = bin_split(pts, 100, 10, 5);
  const auto b = bin_split(pts, 100, 10, 5);
  const auto c = bin_split(pts, 100, 10, 6);
  REQUIRE(a[0].indices == b[0].indices);
  REQUIRE((a[1].distances - b[1].distances).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(a[0].indices != c[0].indices);
}

TEST_CASE("siamese pairs are intra-bin with exact matrix targets") {
  Rng rng(13);
  const auto pts = sphere_cap_points(300, 1.0, 1.1, rng);
  const auto bins = bin_split(pts, 100, 10, 5);
  Rng draw(14);
  const auto pairs = sample_siamese_pairs(bins, 128, draw);
  REQUIRE(pairs.size() == 128);
  for (const auto& p : pairs) {
    REQUIRE(p.bin >= 0);
    REQUIRE(p.bin < static_cast<int>(bins.size()));
    REQUIRE(p.a != p.b);
    REQUIRE(p.geodesic == bins[p.bin].distances(p.a, p.b));
  }
}

TEST_CASE("a two-sample bin always yields the forced pair") {
  GeodesicBin bin;
  bin.indices = {7, 9};
  bin.distances = MatX::Zero(2, 2);
  bin.distances(0, 1) = bin.distances(1, 0) = 3.5;
  Rng rng(15);
  for (const auto& p : sample_siamese_pairs({bin}, 32, rng)) {
    REQUIRE(((p.a == 0 && p.b == 1) || (p.a == 1 && p.b == 0)));
    REQUIRE(p.geodesic == 3.5);
  }
}

TEST_CASE("bin container round trips through the binary format") {
  Rng rng(16);
  const auto pts = sphere_cap_points(240, 1.0, 1.1, rng);
  const auto bins = bin_split(pts, 80, 10, 21);
  const std::string path = std::filesystem::temp_directory_path() / "tacserv_bins.bin";
  save_bins(bins, 21, path);
  std::uint64_t seed = 0;
  const auto back = load_bins(path, &seed);
  REQUIRE(seed == 21);
  REQUIRE(back.size() == bins.size());
  for (size_t i = 0; i < bins.size(); ++i) {
    REQUIRE(back[i].indices == bins[i].indices);
    REQUIRE(back[i].m_neighbors == bins[i].m_neighbors);
    REQUIRE((back[i].distances - bins[i].distances).cwiseAbs().maxCoeff() == 0.0);
  }
  std::remove(path.c_str());
}

TEST_CASE("degenerate inputs are rejected") {
  Rng rng(17);
  const auto pts = random_points(5, rng);
  REQUIRE_THROWS_AS(knn_graph(pts, 0), TacservError);
  REQUIRE_THROWS_AS(knn_graph(pts, 5), TacservError);
  REQUIRE_THROWS_AS(bin_split(pts, 10, 2, 0), TacservError);
}
