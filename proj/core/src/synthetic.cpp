#include "dygen/synthetic.hpp"

#include "dygen/errors.hpp"
#include "dygen/rng.hpp"

#include <cmath>

namespace dygen {

Dataset make_gaussian_mixture(const SyntheticSpec& spec, SplitTag tag) {
    if (spec.num_classes < 2) throw ConfigError("need at least 2 classes");
    if (spec.dim < static_cast<std::size_t>(spec.num_classes)) {
        throw ConfigError("dim must be >= num_classes for orthogonal class means");
    }
    if (spec.n == 0) throw ConfigError("n must be positive");

    Rng geometry_rng(spec.geometry_seed);
    Rng rng(spec.seed);

    // Random orthonormal class directions via Gram-Schmidt on Gaussian draws.
    std::vector<Vec> dirs;
    dirs.reserve(spec.num_classes);
    while (dirs.size() < static_cast<std::size_t>(spec.num_classes)) {
        Vec v(spec.dim);
        for (auto& x : v) x = geometry_rng.normal();
        for (const auto& u : dirs) {
            double dot = 0.0;
            for (std::size_t j = 0; j < spec.dim; ++j) dot += v[j] * u[j];
            for (std::size_t j = 0; j < spec.dim; ++j) v[j] -= dot * u[j];
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-6) continue; // degenerate draw, retry
        for (auto& x : v) x /= norm;
        dirs.push_back(std::move(v));
    }

    // Orthogonal means at radius r have pairwise distance r*sqrt(2).
    const double radius = spec.separation / std::sqrt(2.0);

    Dataset data;
    data.label_space.num_classes = spec.num_classes;
    data.split_tag = tag;
    data.instances.reserve(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) {
        const int k = static_cast<int>(rng.uniform_int(spec.num_classes));
        Instance inst;
        inst.id = std::to_string(i);
        inst.features.resize(spec.dim);
        for (std::size_t j = 0; j < spec.dim; ++j) {
            inst.features[j] =
                static_cast<float>(radius * dirs[k][j] + rng.normal());
        }
        inst.noisy_label = k;
        inst.true_label = k;
        data.instances.push_back(std::move(inst));
    }
    data.validate();
    return data;
}

} // namespace dygen
