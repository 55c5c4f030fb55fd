#include "dygen/prior.hpp"

#include "dygen/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>

namespace dygen {

const char* to_string(ReferenceEmbedding ref) {
    switch (ref) {
        case ReferenceEmbedding::final_epoch: return "final_epoch";
        case ReferenceEmbedding::epoch_mean: return "epoch_mean";
        case ReferenceEmbedding::raw_features: return "raw_features";
    }
    return "?";
}

void PriorConfig::validate() const {
    if (beta < 0.0 || beta > 1.0) throw ConfigError("beta must lie in [0,1]");
    if (k_neighbors == 0) throw ConfigError("k_neighbors must be at least 1");
    if (delta <= 0.0 || rho <= 0.0) throw ConfigError("delta and rho must be positive");
}

FlagResult flag_noisy(const DynamicsStats& stats, double beta) {
    if (beta < 0.0 || beta > 1.0) throw ConfigError("beta must lie in [0,1]");
    const std::size_t n = stats.score.size();
    const auto n_noisy =
        static_cast<std::size_t>(std::ceil(beta * static_cast<double>(n) - 1e-12));

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    // highest score first; at equal scores the higher id is flagged first,
    // so the lower id falls into the clean set
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (stats.score[a] != stats.score[b]) return stats.score[a] > stats.score[b];
        return a > b;
    });

    FlagResult result;
    result.noisy_ids.assign(order.begin(), order.begin() + n_noisy);
    result.clean_ids.assign(order.begin() + n_noisy, order.end());
    std::sort(result.noisy_ids.begin(), result.noisy_ids.end());
    std::sort(result.clean_ids.begin(), result.clean_ids.end());
    return result;
}

std::vector<int> knn_correct(const FlagResult& flags, const Mat& embeddings,
                             const std::vector<int>& noisy_labels, std::size_t k) {
    if (flags.clean_ids.empty()) {
        throw PriorConstructionError("clean reference set is empty");
    }
    if (k > flags.clean_ids.size()) {
        throw ConfigError("K=" + std::to_string(k) + " exceeds clean set size " +
                          std::to_string(flags.clean_ids.size()));
    }
    const std::size_t dim = embeddings.cols;

    std::vector<int> corrected;
    corrected.reserve(flags.noisy_ids.size());

    std::vector<std::pair<double, std::size_t>> dist; // (distance, clean id)
    dist.reserve(flags.clean_ids.size());

    for (std::size_t qi : flags.noisy_ids) {
        dist.clear();
        const double* q = embeddings.row(qi);
        for (std::size_t ci : flags.clean_ids) {
            const double* p = embeddings.row(ci);
            double acc = 0.0;
            for (std::size_t j = 0; j < dim; ++j) {
                const double diff = q[j] - p[j];
                acc += diff * diff;
            }
            dist.emplace_back(acc, ci);
        }
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k),
                          dist.end());

        // vote; on tied counts take the label of the nearest tied neighbor
        std::map<int, std::size_t> votes;
        for (std::size_t r = 0; r < k; ++r) ++votes[noisy_labels[dist[r].second]];
        std::size_t best_count = 0;
        for (const auto& [label, count] : votes) best_count = std::max(best_count, count);
        int winner = -1;
        for (std::size_t r = 0; r < k; ++r) {
            const int label = noisy_labels[dist[r].second];
            if (votes[label] == best_count) {
                winner = label;
                break;
            }
        }
        corrected.push_back(winner);
    }
    return corrected;
}

std::vector<int> combine_prior_labels(const FlagResult& flags,
                                      const std::vector<int>& corrected,
                                      const std::vector<int>& noisy_labels) {
    if (corrected.size() != flags.noisy_ids.size()) {
        throw InputError("corrected labels do not match flagged set");
    }
    std::vector<int> y_prior = noisy_labels;
    for (std::size_t r = 0; r < flags.noisy_ids.size(); ++r) {
        y_prior[flags.noisy_ids[r]] = corrected[r];
    }
    return y_prior;
}

PriorSet build_prior(const std::vector<int>& y_prior, const std::vector<char>& flagged,
                     double delta, double rho, int num_classes) {
    if (delta <= 0.0 || rho <= 0.0) {
        throw ConfigError("delta and rho must be positive");
    }
    if (flagged.size() != y_prior.size()) throw InputError("flag mask size mismatch");
    PriorSet prior;
    prior.y_prior = y_prior;
    prior.flagged = flagged;
    prior.alpha = Mat(y_prior.size(), static_cast<std::size_t>(num_classes), delta);
    for (std::size_t i = 0; i < y_prior.size(); ++i) {
        if (y_prior[i] < 0 || y_prior[i] >= num_classes) {
            throw LabelRangeError("y_prior out of range at instance " + std::to_string(i));
        }
        prior.alpha(i, static_cast<std::size_t>(y_prior[i])) = delta + rho;
    }
    return prior;
}

Mat reference_matrix(const TrajectoryStore& store, std::size_t branch,
                     ReferenceEmbedding ref) {
    store.require_complete();
    Mat out(store.n, store.embed_dim);
    if (ref == ReferenceEmbedding::epoch_mean) {
        for (std::size_t e = 0; e < store.epochs; ++e) {
            for (std::size_t i = 0; i < store.n; ++i) {
                const float* h = store.embedding(branch, e, i);
                double* row = out.row(i);
                for (std::size_t j = 0; j < store.embed_dim; ++j) {
                    row[j] += static_cast<double>(h[j]);
                }
            }
        }
        for (auto& v : out.data) v /= static_cast<double>(store.epochs);
    } else {
        // final_epoch; raw_features stores are single-epoch so this is the
        // identity view of the feature matrix
        const std::size_t e = store.epochs - 1;
        for (std::size_t i = 0; i < store.n; ++i) {
            const float* h = store.embedding(branch, e, i);
            double* row = out.row(i);
            for (std::size_t j = 0; j < store.embed_dim; ++j) {
                row[j] = static_cast<double>(h[j]);
            }
        }
    }
    return out;
}

PriorSet dynamics_prior(const Mat& reference, const DynamicsStats& stats,
                        const std::vector<int>& noisy_labels, int num_classes,
                        const PriorConfig& cfg) {
    cfg.validate();
    const FlagResult flags = flag_noisy(stats, cfg.beta);
    std::vector<int> corrected;
    if (!flags.noisy_ids.empty()) {
        corrected = knn_correct(flags, reference, noisy_labels, cfg.k_neighbors);
    }
    const std::vector<int> y_prior = combine_prior_labels(flags, corrected, noisy_labels);
    std::vector<char> mask(noisy_labels.size(), 0);
    for (std::size_t i : flags.noisy_ids) mask[i] = 1;
    return build_prior(y_prior, mask, cfg.delta, cfg.rho, num_classes);
}

double estimate_beta_gmm(const Vec& scores) {
    const std::size_t n = scores.size();
    if (n < 4) throw InputError("too few scores to estimate beta");

    const auto [mn_it, mx_it] = std::minmax_element(scores.begin(), scores.end());
    const double lo = *mn_it, hi = *mx_it;
    if (hi - lo < 1e-12) return 0.0;

    double mu1 = lo + 0.25 * (hi - lo);
    double mu2 = lo + 0.75 * (hi - lo);
    double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / n;
    double var = 0.0;
    for (double s : scores) var += (s - mean) * (s - mean);
    var = std::max(var / n, 1e-12);
    double var1 = var, var2 = var;
    double w2 = 0.5;

    Vec resp(n);
    for (int iter = 0; iter < 50; ++iter) {
        // E step
        for (std::size_t i = 0; i < n; ++i) {
            const double d1 = scores[i] - mu1;
            const double d2 = scores[i] - mu2;
            const double l1 = std::log(1.0 - w2) - 0.5 * std::log(var1) -
                              0.5 * d1 * d1 / var1;
            const double l2 = std::log(w2) - 0.5 * std::log(var2) - 0.5 * d2 * d2 / var2;
            const double mx = std::max(l1, l2);
            const double e1 = std::exp(l1 - mx);
            const double e2 = std::exp(l2 - mx);
            resp[i] = e2 / (e1 + e2);
        }
        // M step
        double r2 = 0.0, s1 = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            r2 += resp[i];
            s2 += resp[i] * scores[i];
            s1 += (1.0 - resp[i]) * scores[i];
        }
        const double r1 = static_cast<double>(n) - r2;
        if (r1 < 1e-9 || r2 < 1e-9) break;
        mu1 = s1 / r1;
        mu2 = s2 / r2;
        double v1 = 0.0, v2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            v1 += (1.0 - resp[i]) * (scores[i] - mu1) * (scores[i] - mu1);
            v2 += resp[i] * (scores[i] - mu2) * (scores[i] - mu2);
        }
        var1 = std::max(v1 / r1, 1e-12);
        var2 = std::max(v2 / r2, 1e-12);
        w2 = r2 / static_cast<double>(n);
    }

    // component 2 is the higher-mean one by construction of the init; swap
    // if EM crossed them over
    double mass = w2;
    if (mu2 < mu1) mass = 1.0 - w2;
    return std::clamp(mass, 0.0, 1.0);
}

void write_prior_audit_csv(const std::string& path, const std::vector<std::string>& ids,
                           const PriorSet& prior, const std::vector<int>& noisy_labels,
                           const std::vector<int>* true_labels, ReferenceEmbedding ref) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write prior audit csv '" + path + "'");
    out << "# reference=" << to_string(ref) << "\n";
    out << "id,flagged,noisy_label,y_prior,true_label\n";
    for (std::size_t i = 0; i < ids.size(); ++i) {
        out << ids[i] << "," << (prior.flagged[i] ? "true" : "false") << ","
            << noisy_labels[i] << "," << prior.y_prior[i] << ",";
        if (true_labels) out << (*true_labels)[i];
        out << "\n";
    }
}

} // namespace dygen
