#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "peel/matrix.hpp"
#include "peel/types.hpp"

namespace peel {

struct ClusterState {
  MatrixT<double> centroids;             // k x D
  std::vector<std::uint32_t> assignment; // per user
  double within_cluster_variance = 0.0;  // sum of squared distances to assigned centroid
  std::vector<double> objective_history; // objective after each Lloyd assignment step
  std::size_t iterations = 0;

  std::vector<std::vector<UserId>> Groups() const;
};

struct KMeansOptions {
  std::size_t max_iters = 100;
  double tol = 1e-6;
  std::size_t restarts = 10;
  std::size_t threads = 1;
};

// k-means++ seeding followed by Lloyd iterations, best of `restarts` runs.
// Every point ends assigned to its nearest centroid (ties to the lower index)
// and no cluster is empty.
ClusterState KMeansUsers(const Matrix& points, std::size_t k, std::uint64_t seed,
                         const KMeansOptions& options = {});

// One seeded k-means++/Lloyd run.
ClusterState KMeansSingle(const Matrix& points, std::size_t k, std::uint64_t seed,
                          std::size_t max_iters, double tol);

double WithinClusterVariance(const Matrix& points, const MatrixT<double>& centroids,
                             const std::vector<std::uint32_t>& assignment);

void SaveAssignment(const std::string& path, const ClusterState& state);
std::vector<std::uint32_t> LoadAssignment(const std::string& path, std::size_t num_users);
// "PCEN", u32 k, u32 D, k*D float32.
void SaveCentroids(const std::string& path, const ClusterState& state);
MatrixT<double> LoadCentroids(const std::string& path);

}  // namespace peel
