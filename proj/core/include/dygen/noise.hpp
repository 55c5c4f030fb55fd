#pragma once

#include "dygen/mat.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dygen {

enum class NoiseKind { symmetric, asymmetric, instance_dependent };

const char* to_string(NoiseKind kind);
NoiseKind parse_noise_kind(const std::string& name);

struct NoiseSpec {
    NoiseKind kind = NoiseKind::symmetric;
    double ratio = 0.0; // expected flip rate tau in [0,1]
    std::uint64_t seed = 0;
    /// asymmetric only: pairing[k] is the flip target of class k. Empty
    /// means the default circular shift k -> (k+1) mod c.
    std::vector<int> asym_pairing;
    /// instance-dependent only: std of the truncated normal on flip rates.
    double idn_std = 0.1;

    void validate(int num_classes) const;
};

/// What actually happened during injection; written next to the noisy
/// dataset so evaluation can recover which labels were corrupted.
struct NoiseProvenance {
    NoiseSpec spec;
    std::vector<char> flipped; // per instance, 1 if label changed
    double realized_flip_fraction = 0.0;

    void save(const std::string& path) const;
    static NoiseProvenance load(const std::string& path);
};

std::vector<int> inject_symmetric(const std::vector<int>& labels, int num_classes,
                                  const NoiseSpec& spec);

std::vector<int> inject_asymmetric(const std::vector<int>& labels, int num_classes,
                                   const NoiseSpec& spec);

std::vector<int> inject_idn(const Mat& features, const std::vector<int>& labels,
                            int num_classes, const NoiseSpec& spec);

/// IDN with the constructed per-instance categorical distributions exposed,
/// for auditing: probs row i is the distribution the noisy label of i was
/// drawn from, and q[i] its sampled flip rate.
struct IdnTrace {
    std::vector<int> noisy;
    std::vector<double> q;
    Mat probs;
};

IdnTrace inject_idn_traced(const Mat& features, const std::vector<int>& labels,
                           int num_classes, const NoiseSpec& spec);

/// Dispatch on spec.kind. Returns noisy labels plus provenance flags.
struct InjectionResult {
    std::vector<int> noisy;
    NoiseProvenance provenance;
};

InjectionResult inject(const Mat& features, const std::vector<int>& clean_labels,
                       int num_classes, const NoiseSpec& spec);

} // namespace dygen
