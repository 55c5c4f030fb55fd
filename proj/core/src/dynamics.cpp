#include "dygen/dynamics.hpp"

#include "dygen/errors.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace dygen {

CentroidTable compute_centroids(const TrajectoryStore& store, const std::vector<int>& labels,
                                std::size_t branch, bool frequency_scaled) {
    store.require_complete();
    if (labels.size() != store.n) {
        throw InputError("labels length does not match store");
    }

    CentroidTable table;
    table.epochs = store.epochs;
    table.num_classes = store.num_classes;
    table.dim = store.embed_dim;
    table.counts.assign(store.num_classes, 0);
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= store.num_classes) {
            throw LabelRangeError("label " + std::to_string(y) + " out of range");
        }
        ++table.counts[static_cast<std::size_t>(y)];
    }
    for (std::size_t k = 0; k < store.num_classes; ++k) {
        if (table.counts[k] == 0) {
            throw DegenerateClassError("class " + std::to_string(k) +
                                       " has no assigned instances");
        }
    }

    table.centroids.assign(store.epochs, Mat(store.num_classes, store.embed_dim));
    for (std::size_t e = 0; e < store.epochs; ++e) {
        Mat& c = table.centroids[e];
        for (std::size_t i = 0; i < store.n; ++i) {
            const float* h = store.embedding(branch, e, i);
            double* row = c.row(static_cast<std::size_t>(labels[i]));
            for (std::size_t j = 0; j < store.embed_dim; ++j) {
                row[j] += static_cast<double>(h[j]);
            }
        }
        for (std::size_t k = 0; k < store.num_classes; ++k) {
            const double denom = frequency_scaled ? static_cast<double>(store.n)
                                                  : static_cast<double>(table.counts[k]);
            double* row = c.row(k);
            for (std::size_t j = 0; j < store.embed_dim; ++j) row[j] /= denom;
        }
    }
    return table;
}

double epoch_distance(const TrajectoryStore& store, const CentroidTable& centroids,
                      std::size_t branch, std::size_t epoch, std::size_t instance,
                      int label) {
    const float* h = store.embedding(branch, epoch, instance);
    const double* c = centroids.centroid(epoch, label);
    double acc = 0.0;
    for (std::size_t j = 0; j < store.embed_dim; ++j) {
        const double diff = static_cast<double>(h[j]) - c[j];
        acc += diff * diff;
    }
    return std::sqrt(acc);
}

DynamicsStats compute_stats(const TrajectoryStore& store, const CentroidTable& centroids,
                            const std::vector<int>& labels, std::size_t branch) {
    store.require_complete();
    if (store.epochs == 0) {
        throw InputError("empty trajectory: store has no epochs");
    }
    if (centroids.epochs != store.epochs || centroids.dim != store.embed_dim) {
        throw InputError("centroid table does not match store shape");
    }
    const auto e_count = static_cast<double>(store.epochs);

    DynamicsStats stats;
    stats.mu.resize(store.n);
    stats.sigma.resize(store.n);
    stats.score.resize(store.n);

    Vec dist(store.epochs);
    for (std::size_t i = 0; i < store.n; ++i) {
        double mean = 0.0;
        for (std::size_t e = 0; e < store.epochs; ++e) {
            dist[e] = epoch_distance(store, centroids, branch, e, i, labels[i]);
            mean += dist[e];
        }
        mean /= e_count;
        double var = 0.0;
        for (std::size_t e = 0; e < store.epochs; ++e) {
            const double d = dist[e] - mean;
            var += d * d;
        }
        var /= e_count; // population deviation over epochs
        stats.mu[i] = mean;
        stats.sigma[i] = std::sqrt(var);
        stats.score[i] = stats.mu[i] + stats.sigma[i];
    }
    return stats;
}

void write_diagnostics_csv(const std::string& path, const std::vector<std::string>& ids,
                           const DynamicsStats& stats, const std::vector<char>* flipped) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write diagnostics csv '" + path + "'");
    out << "id,mu,sigma,s,flipped\n";
    char buf[96];
    for (std::size_t i = 0; i < stats.mu.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g", stats.mu[i], stats.sigma[i],
                      stats.score[i]);
        out << ids[i] << "," << buf << ","
            << (flipped ? (((*flipped)[i]) ? "true" : "false") : "") << "\n";
    }
}

} // namespace dygen
