#pragma once

#include "dygen/dynamics.hpp"
#include "dygen/mat.hpp"
#include "dygen/store.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dygen {

enum class ReferenceEmbedding { final_epoch, epoch_mean, raw_features };

const char* to_string(ReferenceEmbedding ref);

struct PriorConfig {
    double beta = 0.0;               // estimated error rate
    std::size_t k_neighbors = 10;    // K
    double delta = 1.0;
    double rho = 2.0;
    ReferenceEmbedding reference = ReferenceEmbedding::final_epoch;

    void validate() const;
};

/// Ids here are instance positions in dataset order.
struct FlagResult {
    std::vector<std::size_t> clean_ids; // ascending
    std::vector<std::size_t> noisy_ids; // ascending
};

/// Flags the ceil(beta * n) instances with the highest scores as noisy;
/// at equal scores the lower id goes to the clean set.
FlagResult flag_noisy(const DynamicsStats& stats, double beta);

/// Majority label among the K nearest clean instances (Euclidean, in the
/// rows of `embeddings`), for every flagged instance. Majority ties go to
/// the label of the nearest neighbor among the tied labels. Returned in
/// noisy_ids order.
std::vector<int> knn_correct(const FlagResult& flags, const Mat& embeddings,
                             const std::vector<int>& noisy_labels, std::size_t k);

/// y_prior per instance: corrected label where flagged, assigned label
/// otherwise.
std::vector<int> combine_prior_labels(const FlagResult& flags,
                                      const std::vector<int>& corrected,
                                      const std::vector<int>& noisy_labels);

struct PriorSet {
    std::vector<int> y_prior;
    std::vector<char> flagged;
    Mat alpha; // n x c: delta everywhere, delta + rho at y_prior
};

PriorSet build_prior(const std::vector<int>& y_prior, const std::vector<char>& flagged,
                     double delta, double rho, int num_classes);

/// The reference embedding matrix the KNN step runs in.
Mat reference_matrix(const TrajectoryStore& store, std::size_t branch,
                     ReferenceEmbedding ref);

/// Full pipeline for one branch: flag by score, KNN-correct in the
/// reference embedding, emit Dirichlet parameters.
PriorSet dynamics_prior(const Mat& reference, const DynamicsStats& stats,
                        const std::vector<int>& noisy_labels, int num_classes,
                        const PriorConfig& cfg);

/// Two-component 1-D Gaussian mixture fit on the scores; returns the mass
/// of the higher-mean component as a beta estimate.
double estimate_beta_gmm(const Vec& scores);

void write_prior_audit_csv(const std::string& path, const std::vector<std::string>& ids,
                           const PriorSet& prior, const std::vector<int>& noisy_labels,
                           const std::vector<int>* true_labels, ReferenceEmbedding ref);

} // namespace dygen
