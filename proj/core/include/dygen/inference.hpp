#pragma once

#include "dygen/mat.hpp"
#include "dygen/stage2.hpp"

#include <string>
#include <vector>

namespace dygen {

/// c x c calibration matrix: entry (j, k) approximates p(y=j | yhat=k).
/// Columns are distributions.
struct CalibrationMatrix {
    Mat h;

    std::size_t num_classes() const { return h.rows; }
    void validate() const;
    void save_csv(const std::string& path) const;
    static CalibrationMatrix identity(std::size_t c);
};

/// Column k is the renormalized mean posterior mode over the training
/// instances predicted as class k; classes never predicted get an
/// identity column.
CalibrationMatrix build_H(const GenerativeBranch& branch, const Mat& trajectories,
                          const std::vector<int>& yhat);

/// The aggregation step of build_H on precomputed posterior modes.
CalibrationMatrix aggregate_modes(const Mat& modes, const std::vector<int>& yhat,
                                  std::size_t num_classes);

/// p(y | x) composed from branch predictions and per-branch calibration:
/// mean over branches of H^(m) p^(m), renormalized.
Vec infer(const std::vector<Vec>& branch_probs, const std::vector<CalibrationMatrix>& h);

/// Batched version: each branch contributes an n x c prediction matrix.
Mat infer_batch(const std::vector<Mat>& branch_probs,
                const std::vector<CalibrationMatrix>& h);

/// Per-instance composition using the instance's own trajectory:
/// p(y=j|x_i) proportional to the branch mean of
/// sum_k mode(q^m(y|yhat=k, w_i))_j * p^m(yhat=k|x_i).
/// branch_trajs[m] holds branch m's trajectories of the same instances.
Mat infer_per_instance(const std::vector<GenerativeBranch>& branches,
                       const std::vector<Mat>& branch_probs,
                       const std::vector<Mat>& branch_trajs);

std::vector<int> argmax_rows(const Mat& probs);
Vec max_rows(const Mat& probs);

double accuracy(const std::vector<int>& predictions, const std::vector<int>& truth);

struct EceBin {
    std::size_t count = 0;
    double mean_confidence = 0.0;
    double mean_accuracy = 0.0;
};

struct EceResult {
    double value = 0.0;
    std::vector<EceBin> bins;
};

/// Expected calibration error over equal-width confidence bins
/// (bin b covers (b/M, (b+1)/M]; confidence 0 falls into bin 0).
EceResult ece(const Vec& confidences, const std::vector<char>& correct,
              std::size_t num_bins = 10);

/// Rank-based AUROC of scores against a positive mask, with tie handling.
double auroc(const Vec& scores, const std::vector<char>& positive);

struct PriorQuality {
    std::size_t n_flagged = 0;
    std::size_t corrected_right = 0; // was wrong, prior label is right
    std::size_t corrected_wrong = 0; // was right, prior label is wrong
    double label_accuracy_before = 0.0;
    double label_accuracy_after = 0.0;
};

PriorQuality prior_quality(const std::vector<int>& prior_labels,
                           const std::vector<int>& noisy_labels,
                           const std::vector<int>& true_labels,
                           const std::vector<char>* flagged = nullptr);

struct EvalReport {
    double accuracy = 0.0;
    double ece = 0.0;
    std::vector<EceBin> bins;
};

/// Accuracy + 10-bin ECE of a prediction matrix against true labels.
EvalReport evaluate_predictions(const Mat& probs, const std::vector<int>& truth,
                                std::size_t num_bins = 10);

} // namespace dygen
