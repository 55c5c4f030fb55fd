#pragma once

#include "dygen/dataset.hpp"
#include "dygen/dynamics.hpp"
#include "dygen/net.hpp"
#include "dygen/store.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dygen {

struct Stage1Config {
    std::size_t num_branches = 3;  // M
    std::size_t epochs = 10;       // E
    double warmup_fraction = 0.2;  // gamma
    double coreg_weight = 5.0;     // lambda_1
    double epsilon = 1e-8;
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;
    std::size_t hidden_dim = 64;
    std::size_t embed_dim = 32;
    std::uint64_t master_seed = 0;

    void validate() const;
    std::string hash() const;
};

/// Number of leading steps (0-based indices) that run without the
/// co-regularization term: index t is warm-up iff t < ceil(gamma * total).
std::size_t warmup_steps(double gamma, std::size_t total);

/// One classifier branch: encoder h (d_in -> hidden -> embed, ReLU inside)
/// and linear head g (embed -> c) with a softmax on top.
struct Stage1Model {
    Mlp encoder;
    Mlp head;

    Stage1Model() = default;
    Stage1Model(std::size_t d_in, std::size_t hidden, std::size_t embed, std::size_t classes,
                Rng& rng);

    /// Inference-only pass over a batch; no caches touched.
    struct Output {
        Mat embedding; // N x embed
        Mat probs;     // N x c, rows on the simplex
    };
    Output forward(const Mat& x) const;
};

/// Elementwise mean of branch distributions for one instance.
Vec consensus(const std::vector<Vec>& probs_per_branch);

/// Co-regularization loss: mean over instances and branches of
/// KL(consensus || branch), with epsilon guarding both logs.
/// Each entry of probs_per_branch is an N x c batch from one branch.
double coreg_loss(const std::vector<Mat>& probs_per_branch, double epsilon);

/// Convenience overload for a single instance per branch.
double coreg_loss(const std::vector<Vec>& probs_per_branch, double epsilon);

/// dL/dp of coreg_loss for every branch, including the dependence of the
/// consensus on each branch (the full computation graph).
std::vector<Mat> coreg_loss_dprobs(const std::vector<Mat>& probs_per_branch, double epsilon);

/// Mean over branches of cross-entropy against the assigned labels,
/// averaged over the batch.
double task_loss_stage1(const std::vector<Mat>& probs_per_branch,
                        const std::vector<int>& noisy_labels);

struct Stage1Result {
    std::vector<Stage1Model> branches;
    TrajectoryStore store;
    /// Trajectories of held-out instances (when requested): the same
    /// epoch-end snapshots taken on unlabeled auxiliary features, so
    /// inference can evaluate per-instance posteriors on them.
    TrajectoryStore aux_store;
    bool has_aux = false;
};

/// Algorithm: E epochs of joint training of M branches on noisy labels;
/// cross-entropy only during warm-up, plus lambda_1 * coreg afterwards.
/// At the end of every epoch the embeddings of all training instances are
/// appended to the store; final prediction vectors are recorded after the
/// last epoch. When aux_features is given, their embeddings are snapshot
/// at the same points into aux_store (labels never involved).
Stage1Result train_stage1(const Dataset& train, const Stage1Config& cfg,
                          const Mat* aux_features = nullptr);

/// Joint loss on one batch with gradients accumulated into every branch.
/// Exposed so tests can check the analytic gradient against finite
/// differences.
double stage1_batch_loss_grad(std::vector<Stage1Model>& branches, const Mat& x,
                              const std::vector<int>& labels, double lambda,
                              double epsilon);

/// Loss-only evaluation of the same objective (no caches, no gradients).
double stage1_batch_loss(const std::vector<Stage1Model>& branches, const Mat& x,
                         const std::vector<int>& labels, double lambda, double epsilon);

/// Trajectory vector for one instance under one branch.
/// concat_embeddings: epoch-ordered concatenation, length E * d.
/// distance_vector: per-epoch distance to the assigned-label centroid,
/// length E (requires centroids and the instance's assigned label).
Vec build_trajectory(const TrajectoryStore& store, std::size_t instance, std::size_t branch,
                     TrajectoryMode mode, const CentroidTable* centroids = nullptr,
                     const std::vector<int>* labels = nullptr);

} // namespace dygen
