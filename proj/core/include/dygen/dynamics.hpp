#pragma once

#include "dygen/mat.hpp"
#include "dygen/store.hpp"

#include <string>
#include <vector>

namespace dygen {

/// Per-epoch class centroids in the embedding space.
struct CentroidTable {
    std::size_t epochs = 0;
    std::size_t num_classes = 0;
    std::size_t dim = 0;
    std::vector<Mat> centroids;       // per epoch: num_classes x dim
    std::vector<std::size_t> counts;  // instances assigned to each class

    const double* centroid(std::size_t epoch, int label) const {
        return centroids[epoch].row(static_cast<std::size_t>(label));
    }
};

/// Centroids of each class at each epoch, from the labels the instances
/// were trained with. By default this is the true per-class mean (divide
/// by the class count); `frequency_scaled` selects division by n instead,
/// which scales each centroid by the class frequency.
CentroidTable compute_centroids(const TrajectoryStore& store, const std::vector<int>& labels,
                                std::size_t branch, bool frequency_scaled = false);

/// Per-instance distance statistics over epochs: mean, population standard
/// deviation, and their sum as the noisiness score.
struct DynamicsStats {
    Vec mu;
    Vec sigma;
    Vec score; // mu + sigma
};

DynamicsStats compute_stats(const TrajectoryStore& store, const CentroidTable& centroids,
                            const std::vector<int>& labels, std::size_t branch);

/// Distance of one instance's epoch-e embedding to its assigned-label
/// centroid; shared by compute_stats and the distance-vector trajectory.
double epoch_distance(const TrajectoryStore& store, const CentroidTable& centroids,
                      std::size_t branch, std::size_t epoch, std::size_t instance, int label);

/// Writes id, mu, sigma, s and (when provided) the flipped flag, one row
/// per instance.
void write_diagnostics_csv(const std::string& path, const std::vector<std::string>& ids,
                           const DynamicsStats& stats, const std::vector<char>* flipped);

} // namespace dygen
