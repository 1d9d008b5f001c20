#include "peel/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <thread>

#include "peel/binary_io.hpp"
#include "peel/error.hpp"
#include "peel/rng.hpp"

namespace peel {
namespace {

double SquaredDistance(std::span<const float> x, std::span<const double> c) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double diff = static_cast<double>(x[i]) - c[i];
    acc += diff * diff;
  }
  return acc;
}

// Returns the objective. Ties go to the lower centroid index.
double AssignNearest(const Matrix& points, const MatrixT<double>& centroids,
                     std::vector<std::uint32_t>& assignment, std::vector<double>& dist) {
  double total = 0.0;
  for (std::size_t p = 0; p < points.rows(); ++p) {
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_c = 0;
    for (std::size_t c = 0; c < centroids.rows(); ++c) {
      const double d = SquaredDistance(points.row(p), centroids.row(c));
      if (d < best) {
        best = d;
        best_c = static_cast<std::uint32_t>(c);
      }
    }
    assignment[p] = best_c;
    dist[p] = best;
    total += best;
  }
  return total;
}

// Moves the point farthest from its centroid into each empty cluster and
// places that cluster's centroid on it. Returns true when anything moved.
bool RepairEmpty(const Matrix& points, MatrixT<double>& centroids,
                 std::vector<std::uint32_t>& assignment, std::vector<double>& dist) {
  const std::size_t k = centroids.rows();
  std::vector<std::size_t> sizes(k, 0);
  for (auto a : assignment) ++sizes[a];
  bool moved = false;
  for (std::size_t c = 0; c < k; ++c) {
    if (sizes[c] > 0) continue;
    std::size_t victim = points.rows();
    double far = -1.0;
    for (std::size_t p = 0; p < points.rows(); ++p) {
      if (sizes[assignment[p]] > 1 && dist[p] > far) {
        far = dist[p];
        victim = p;
      }
    }
    Require(victim < points.rows(), ErrorKind::kConfig, "cannot repair empty cluster");
    --sizes[assignment[victim]];
    assignment[victim] = static_cast<std::uint32_t>(c);
    sizes[c] = 1;
    dist[victim] = 0.0;
    const auto src = points.row(victim);
    auto dst = centroids.row(c);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i];
    moved = true;
  }
  return moved;
}

MatrixT<double> PlusPlusSeeds(const Matrix& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.rows();
  MatrixT<double> centroids(k, points.cols());
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<bool> chosen(n, false);
  std::size_t pick = rng.UniformIndex(n);
  for (std::size_t c = 0; c < k; ++c) {
    chosen[pick] = true;
    const auto src = points.row(pick);
    auto dst = centroids.row(c);
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i];
    if (c + 1 == k) break;
    double total = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      d2[p] = std::min(d2[p], SquaredDistance(points.row(p), centroids.row(c)));
      total += d2[p];
    }
    if (total > 0.0) {
      double target = rng.Uniform01() * total;
      pick = n - 1;
      for (std::size_t p = 0; p < n; ++p) {
        target -= d2[p];
        if (target < 0.0 && d2[p] > 0.0) {
          pick = p;
          break;
        }
      }
    } else {
      // All remaining points coincide with a centroid: take an unused index.
      std::vector<std::size_t> unused;
      for (std::size_t p = 0; p < n; ++p) {
        if (!chosen[p]) unused.push_back(p);
      }
      pick = unused[rng.UniformIndex(unused.size())];
    }
  }
  return centroids;
}

}  // namespace

std::vector<std::vector<UserId>> ClusterState::Groups() const {
  std::vector<std::vector<UserId>> groups(centroids.rows());
  for (std::size_t u = 0; u < assignment.size(); ++u) {
    groups[assignment[u]].push_back(static_cast<UserId>(u));
  }
  return groups;
}

double WithinClusterVariance(const Matrix& points, const MatrixT<double>& centroids,
                             const std::vector<std::uint32_t>& assignment) {
  double total = 0.0;
  for (std::size_t p = 0; p < points.rows(); ++p) {
    total += SquaredDistance(points.row(p), centroids.row(assignment[p]));
  }
  return total;
}

ClusterState KMeansSingle(const Matrix& points, std::size_t k, std::uint64_t seed,
                          std::size_t max_iters, double tol) {
  const std::size_t n = points.rows();
  const std::size_t dim = points.cols();
  Require(k >= 1 && k <= n, ErrorKind::kConfig,
          "cluster count " + std::to_string(k) + " must be in [1, " + std::to_string(n) + "]");
  Rng rng(seed);
  ClusterState state;
  state.centroids = PlusPlusSeeds(points, k, rng);
  state.assignment.assign(n, 0);
  std::vector<double> dist(n);

  for (std::size_t it = 0; it < max_iters; ++it) {
    state.objective_history.push_back(AssignNearest(points, state.centroids, state.assignment, dist));
    RepairEmpty(points, state.centroids, state.assignment, dist);
    MatrixT<double> next(k, dim);
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t p = 0; p < n; ++p) {
      auto c = next.row(state.assignment[p]);
      const auto x = points.row(p);
      for (std::size_t i = 0; i < dim; ++i) c[i] += x[i];
      ++sizes[state.assignment[p]];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      auto row = next.row(c);
      for (auto& v : row) v /= static_cast<double>(sizes[c]);
      double s = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        const double diff = row[i] - state.centroids(c, i);
        s += diff * diff;
      }
      shift = std::max(shift, s);
    }
    state.centroids = std::move(next);
    ++state.iterations;
    if (std::sqrt(shift) < tol) break;
  }
  // Final nearest assignment; repair until no cluster is empty.
  for (std::size_t guard = 0; guard <= k; ++guard) {
    AssignNearest(points, state.centroids, state.assignment, dist);
    if (!RepairEmpty(points, state.centroids, state.assignment, dist)) break;
  }
  state.within_cluster_variance = WithinClusterVariance(points, state.centroids, state.assignment);
  return state;
}

ClusterState KMeansUsers(const Matrix& points, std::size_t k, std::uint64_t seed,
                         const KMeansOptions& options) {
  Require(k >= 1 && k <= points.rows(), ErrorKind::kConfig,
          "cluster count " + std::to_string(k) + " exceeds user count " +
              std::to_string(points.rows()));
  const std::size_t restarts = std::max<std::size_t>(options.restarts, 1);
  std::vector<ClusterState> runs(restarts);
  const Rng root(seed);
  auto run = [&](std::size_t r) {
    runs[r] = KMeansSingle(points, k, root.Split(r).seed(), options.max_iters, options.tol);
  };
  const std::size_t workers = std::min(std::max<std::size_t>(options.threads, 1), restarts);
  if (workers == 1) {
    for (std::size_t r = 0; r < restarts; ++r) run(r);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t r = w; r < restarts; r += workers) run(r);
      });
    }
    for (auto& t : pool) t.join();
  }
  std::size_t best = 0;
  for (std::size_t r = 1; r < restarts; ++r) {
    if (runs[r].within_cluster_variance < runs[best].within_cluster_variance) best = r;
  }
  return std::move(runs[best]);
}

void SaveAssignment(const std::string& path, const ClusterState& state) {
  std::ostringstream out;
  for (std::size_t u = 0; u < state.assignment.size(); ++u) {
    out << u << '\t' << state.assignment[u] << '\n';
  }
  WriteFileText(path, out.str());
}

std::vector<std::uint32_t> LoadAssignment(const std::string& path, std::size_t num_users) {
  std::istringstream in(ReadFileText(path));
  std::vector<std::uint32_t> assignment(num_users, 0);
  std::vector<bool> seen(num_users, false);
  std::size_t user = 0;
  std::uint32_t group = 0;
  while (in >> user >> group) {
    Require(user < num_users && !seen[user], ErrorKind::kFormat, "bad assignment row");
    seen[user] = true;
    assignment[user] = group;
  }
  Require(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }), ErrorKind::kFormat,
          "assignment file does not cover every user");
  return assignment;
}

void SaveCentroids(const std::string& path, const ClusterState& state) {
  ByteWriter w;
  w.Magic("PCEN");
  w.U32(static_cast<std::uint32_t>(state.centroids.rows()));
  w.U32(static_cast<std::uint32_t>(state.centroids.cols()));
  for (double v : state.centroids.flat()) w.F32(static_cast<float>(v));
  WriteFileBytes(path, w.bytes());
}

MatrixT<double> LoadCentroids(const std::string& path) {
  const auto bytes = ReadFileBytes(path);
  ByteReader r(bytes);
  r.ExpectMagic("PCEN");
  const std::size_t k = r.U32();
  const std::size_t dim = r.U32();
  MatrixT<double> c(k, dim);
  for (auto& v : c.flat()) v = r.F32();
  return c;
}

}  // namespace peel
