#pragma once

#include "dygen/mat.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dygen {

/// Per-branch, per-epoch embeddings of every training instance, plus the
/// final prediction vectors. Filled append-only during Stage-I training.
///
/// On-disk layout: a directory holding metadata.json plus one raw
/// little-endian float32 array per (branch, epoch) of shape n x d
/// (row i = instance i), and one n x c prediction array per branch.
struct TrajectoryStore {
    std::size_t n = 0;
    std::size_t embed_dim = 0;
    std::size_t epochs = 0;
    std::size_t branches = 0;
    std::size_t num_classes = 0;
    std::uint64_t seed = 0;
    std::string config_hash;

    /// embeddings[m][e] is an n*embed_dim float32 buffer.
    std::vector<std::vector<std::vector<float>>> embeddings;
    /// predictions[m] is an n*num_classes float32 buffer.
    std::vector<std::vector<float>> predictions;

    void init(std::size_t n_, std::size_t d_, std::size_t epochs_, std::size_t branches_,
              std::size_t classes_, std::uint64_t seed_, std::string config_hash_);

    /// Append the epoch-e snapshot for branch m. Must arrive in epoch order
    /// per branch.
    void append_epoch(std::size_t branch, std::size_t epoch, std::vector<float> emb);

    void set_predictions(std::size_t branch, std::vector<float> probs);

    bool complete() const;
    /// Throws StoreIntegrityError when the E x n grid has holes.
    void require_complete() const;

    const float* embedding(std::size_t branch, std::size_t epoch, std::size_t instance) const;
    const float* prediction(std::size_t branch, std::size_t instance) const;

    /// Predictions of one branch as an n x c double matrix.
    Mat prediction_matrix(std::size_t branch) const;

    void save(const std::string& dir) const;
    static TrajectoryStore load(const std::string& dir);
};

/// Wraps a plain feature matrix as a single-branch, single-epoch store so
/// the dynamics/prior pipeline can run on static features (the vanilla
/// KNN-prior ablation).
TrajectoryStore store_from_matrix(const Mat& features, std::size_t num_classes);

enum class TrajectoryMode { concat_embeddings, distance_vector };

} // namespace dygen
