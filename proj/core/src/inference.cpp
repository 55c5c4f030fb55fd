#include "dygen/inference.hpp"

#include "dygen/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace dygen {

void CalibrationMatrix::validate() const {
    if (h.rows != h.cols || h.rows == 0) {
        throw InputError("calibration matrix must be square and non-empty");
    }
    for (std::size_t k = 0; k < h.cols; ++k) {
        double sum = 0.0;
        for (std::size_t j = 0; j < h.rows; ++j) {
            if (h(j, k) < -1e-9) throw InputError("calibration matrix has negative entry");
            sum += h(j, k);
        }
        if (std::abs(sum - 1.0) > 1e-6) {
            throw InputError("calibration matrix column " + std::to_string(k) +
                             " sums to " + std::to_string(sum));
        }
    }
}

CalibrationMatrix CalibrationMatrix::identity(std::size_t c) {
    CalibrationMatrix m;
    m.h = Mat(c, c);
    for (std::size_t k = 0; k < c; ++k) m.h(k, k) = 1.0;
    return m;
}

void CalibrationMatrix::save_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write calibration matrix '" + path + "'");
    char buf[32];
    for (std::size_t j = 0; j < h.rows; ++j) {
        for (std::size_t k = 0; k < h.cols; ++k) {
            std::snprintf(buf, sizeof(buf), "%.17g", h(j, k));
            out << buf << (k + 1 == h.cols ? "\n" : ",");
        }
    }
}

CalibrationMatrix aggregate_modes(const Mat& modes, const std::vector<int>& yhat,
                                  std::size_t num_classes) {
    if (modes.rows == 0) throw InputError("aggregate_modes: no training instances");
    if (modes.rows != yhat.size() || modes.cols != num_classes) {
        throw InputError("aggregate_modes: shape mismatch");
    }
    CalibrationMatrix out;
    out.h = Mat(num_classes, num_classes);
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t i = 0; i < modes.rows; ++i) {
        const int k = yhat[i];
        if (k < 0 || static_cast<std::size_t>(k) >= num_classes) {
            throw LabelRangeError("predicted class out of range");
        }
        for (std::size_t j = 0; j < num_classes; ++j) {
            out.h(j, static_cast<std::size_t>(k)) += modes(i, j);
        }
        ++counts[static_cast<std::size_t>(k)];
    }
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (counts[k] == 0) {
            // never-predicted class: leave it uncalibrated
            for (std::size_t j = 0; j < num_classes; ++j) out.h(j, k) = j == k ? 1.0 : 0.0;
            continue;
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < num_classes; ++j) sum += out.h(j, k);
        for (std::size_t j = 0; j < num_classes; ++j) out.h(j, k) /= sum;
    }
    out.validate();
    return out;
}

CalibrationMatrix build_H(const GenerativeBranch& branch, const Mat& trajectories,
                          const std::vector<int>& yhat) {
    if (trajectories.rows == 0) {
        throw InputError("build_H: no training instances");
    }
    if (trajectories.rows != yhat.size()) {
        throw InputError("build_H: trajectory/prediction count mismatch");
    }
    const std::size_t c = branch.num_classes();

    Mat modes(trajectories.rows, c);
    Vec w(trajectories.cols), onehot(c);
    for (std::size_t i = 0; i < trajectories.rows; ++i) {
        const int k = yhat[i];
        if (k < 0 || static_cast<std::size_t>(k) >= c) {
            throw LabelRangeError("predicted class out of range");
        }
        std::copy(trajectories.row(i), trajectories.row(i) + trajectories.cols, w.begin());
        std::fill(onehot.begin(), onehot.end(), 0.0);
        onehot[static_cast<std::size_t>(k)] = 1.0;
        const Vec alpha = branch.encode(w, onehot);
        const Vec mode = posterior_mode(alpha, branch.alpha_floor());
        for (std::size_t j = 0; j < c; ++j) modes(i, j) = mode[j];
    }
    return aggregate_modes(modes, yhat, c);
}

Vec infer(const std::vector<Vec>& branch_probs, const std::vector<CalibrationMatrix>& h) {
    if (branch_probs.empty() || branch_probs.size() != h.size()) {
        throw InputError("infer: branch count mismatch");
    }
    const std::size_t c = branch_probs.front().size();
    Vec out(c, 0.0);
    for (std::size_t m = 0; m < branch_probs.size(); ++m) {
        if (branch_probs[m].size() != c || h[m].h.rows != c) {
            throw InputError("infer: dimension mismatch");
        }
        for (std::size_t j = 0; j < c; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < c; ++k) acc += h[m].h(j, k) * branch_probs[m][k];
            out[j] += acc;
        }
    }
    double sum = 0.0;
    for (double v : out) sum += v;
    if (sum <= 0.0) throw InputError("infer: degenerate probability mass");
    for (auto& v : out) v /= sum;
    return out;
}

Mat infer_batch(const std::vector<Mat>& branch_probs,
                const std::vector<CalibrationMatrix>& h) {
    if (branch_probs.empty() || branch_probs.size() != h.size()) {
        throw InputError("infer: branch count mismatch");
    }
    const std::size_t n = branch_probs.front().rows;
    const std::size_t c = branch_probs.front().cols;
    Mat out(n, c);
    for (std::size_t m = 0; m < branch_probs.size(); ++m) {
        if (branch_probs[m].rows != n || branch_probs[m].cols != c || h[m].h.rows != c) {
            throw InputError("infer: dimension mismatch");
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double* p = branch_probs[m].row(i);
            double* o = out.row(i);
            for (std::size_t j = 0; j < c; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < c; ++k) acc += h[m].h(j, k) * p[k];
                o[j] += acc;
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        double* o = out.row(i);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += o[j];
        for (std::size_t j = 0; j < c; ++j) o[j] /= sum;
    }
    return out;
}

Mat infer_per_instance(const std::vector<GenerativeBranch>& branches,
                       const std::vector<Mat>& branch_probs,
                       const std::vector<Mat>& branch_trajs) {
    if (branches.empty() || branches.size() != branch_probs.size() ||
        branches.size() != branch_trajs.size()) {
        throw InputError("infer_per_instance: branch count mismatch");
    }
    const std::size_t n = branch_probs.front().rows;
    const std::size_t c = branches.front().num_classes();

    Mat out(n, c);
    Vec w(branches.front().w_dim()), onehot(c);
    for (std::size_t m = 0; m < branches.size(); ++m) {
        if (branch_probs[m].rows != n || branch_probs[m].cols != c ||
            branch_trajs[m].rows != n || branch_trajs[m].cols != branches[m].w_dim()) {
            throw InputError("infer_per_instance: dimension mismatch");
        }
        for (std::size_t i = 0; i < n; ++i) {
            std::copy(branch_trajs[m].row(i), branch_trajs[m].row(i) + branch_trajs[m].cols,
                      w.begin());
            const double* p = branch_probs[m].row(i);
            double* o = out.row(i);
            for (std::size_t k = 0; k < c; ++k) {
                std::fill(onehot.begin(), onehot.end(), 0.0);
                onehot[k] = 1.0;
                const Vec alpha = branches[m].encode(w, onehot);
                const Vec mode = posterior_mode(alpha, branches[m].alpha_floor());
                for (std::size_t j = 0; j < c; ++j) o[j] += mode[j] * p[k];
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        double* o = out.row(i);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += o[j];
        if (sum <= 0.0) throw InputError("infer_per_instance: degenerate mass");
        for (std::size_t j = 0; j < c; ++j) o[j] /= sum;
    }
    return out;
}

std::vector<int> argmax_rows(const Mat& probs) {
    std::vector<int> out(probs.rows);
    for (std::size_t i = 0; i < probs.rows; ++i) {
        const double* p = probs.row(i);
        std::size_t best = 0;
        for (std::size_t k = 1; k < probs.cols; ++k) {
            if (p[k] > p[best]) best = k;
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

Vec max_rows(const Mat& probs) {
    Vec out(probs.rows);
    for (std::size_t i = 0; i < probs.rows; ++i) {
        const double* p = probs.row(i);
        out[i] = *std::max_element(p, p + probs.cols);
    }
    return out;
}

double accuracy(const std::vector<int>& predictions, const std::vector<int>& truth) {
    if (predictions.size() != truth.size()) {
        throw InputError("accuracy: length mismatch");
    }
    if (predictions.empty()) throw InputError("accuracy: empty input");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] == truth[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

EceResult ece(const Vec& confidences, const std::vector<char>& correct,
              std::size_t num_bins) {
    if (confidences.empty()) throw InputError("ece: empty input");
    if (confidences.size() != correct.size()) throw InputError("ece: length mismatch");
    if (num_bins == 0) throw ConfigError("ece: need at least one bin");

    EceResult result;
    result.bins.assign(num_bins, EceBin{});
    std::vector<double> conf_sum(num_bins, 0.0), acc_sum(num_bins, 0.0);

    for (std::size_t i = 0; i < confidences.size(); ++i) {
        const double conf = confidences[i];
        if (conf < 0.0 || conf > 1.0) throw InputError("ece: confidence outside [0,1]");
        // bin b covers (b/M, (b+1)/M]; confidence 0 goes to bin 0
        std::size_t b = 0;
        if (conf > 0.0) {
            b = static_cast<std::size_t>(std::ceil(conf * static_cast<double>(num_bins))) - 1;
            b = std::min(b, num_bins - 1);
        }
        result.bins[b].count += 1;
        conf_sum[b] += conf;
        acc_sum[b] += correct[i] ? 1.0 : 0.0;
    }

    const auto n = static_cast<double>(confidences.size());
    for (std::size_t b = 0; b < num_bins; ++b) {
        if (result.bins[b].count == 0) continue;
        const auto cnt = static_cast<double>(result.bins[b].count);
        result.bins[b].mean_confidence = conf_sum[b] / cnt;
        result.bins[b].mean_accuracy = acc_sum[b] / cnt;
        result.value += (cnt / n) * std::abs(result.bins[b].mean_accuracy -
                                             result.bins[b].mean_confidence);
    }
    return result;
}

double auroc(const Vec& scores, const std::vector<char>& positive) {
    if (scores.size() != positive.size() || scores.empty()) {
        throw InputError("auroc: bad input lengths");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // average ranks over ties
    Vec rank(scores.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }

    double rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        if (positive[k]) {
            rank_sum += rank[k];
            ++n_pos;
        }
    }
    const std::size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw InputError("auroc: needs both positive and negative examples");
    }
    const double np = static_cast<double>(n_pos);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

PriorQuality prior_quality(const std::vector<int>& prior_labels,
                           const std::vector<int>& noisy_labels,
                           const std::vector<int>& true_labels,
                           const std::vector<char>* flagged) {
    const std::size_t n = prior_labels.size();
    if (noisy_labels.size() != n || true_labels.size() != n) {
        throw InputError("prior_quality: length mismatch");
    }
    if (n == 0) throw EvaluationUnavailableError("prior_quality: no instances");

    PriorQuality q;
    std::size_t before = 0, after = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const bool was_right = noisy_labels[i] == true_labels[i];
        const bool is_right = prior_labels[i] == true_labels[i];
        if (was_right) ++before;
        if (is_right) ++after;
        if (!was_right && is_right) ++q.corrected_right;
        if (was_right && !is_right) ++q.corrected_wrong;
        if (flagged) {
            if ((*flagged)[i]) ++q.n_flagged;
        } else if (prior_labels[i] != noisy_labels[i]) {
            ++q.n_flagged;
        }
    }
    q.label_accuracy_before = static_cast<double>(before) / static_cast<double>(n);
    q.label_accuracy_after = static_cast<double>(after) / static_cast<double>(n);
    return q;
}

EvalReport evaluate_predictions(const Mat& probs, const std::vector<int>& truth,
                                std::size_t num_bins) {
    const std::vector<int> preds = argmax_rows(probs);
    const Vec conf = max_rows(probs);
    std::vector<char> correct(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) correct[i] = preds[i] == truth[i];

    EvalReport report;
    report.accuracy = accuracy(preds, truth);
    EceResult e = ece(conf, correct, num_bins);
    report.ece = e.value;
    report.bins = std::move(e.bins);
    return report;
}

} // namespace dygen
