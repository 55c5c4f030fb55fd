#include "dygen/noise.hpp"

#include "dygen/errors.hpp"
#include "dygen/rng.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>

namespace dygen {

using nlohmann::json;

const char* to_string(NoiseKind kind) {
    switch (kind) {
        case NoiseKind::symmetric: return "symmetric";
        case NoiseKind::asymmetric: return "asymmetric";
        case NoiseKind::instance_dependent: return "instance_dependent";
    }
    return "?";
}

NoiseKind parse_noise_kind(const std::string& name) {
    if (name == "symmetric" || name == "sn") return NoiseKind::symmetric;
    if (name == "asymmetric" || name == "asn") return NoiseKind::asymmetric;
    if (name == "instance_dependent" || name == "idn") return NoiseKind::instance_dependent;
    throw ConfigError("unknown noise kind '" + name + "'");
}

void NoiseSpec::validate(int num_classes) const {
    if (num_classes < 2) {
        throw ConfigError("noise injection needs at least 2 classes");
    }
    if (ratio < 0.0 || ratio > 1.0) {
        throw ConfigError("noise ratio must lie in [0,1]");
    }
    if (kind == NoiseKind::asymmetric && !asym_pairing.empty()) {
        if (asym_pairing.size() != static_cast<std::size_t>(num_classes)) {
            throw ConfigError("asym_pairing must cover every class");
        }
        for (int k = 0; k < num_classes; ++k) {
            if (asym_pairing[k] < 0 || asym_pairing[k] >= num_classes) {
                throw ConfigError("asym_pairing target out of range for class " +
                                  std::to_string(k));
            }
            if (asym_pairing[k] == k) {
                throw ConfigError("asym_pairing maps class " + std::to_string(k) +
                                  " to itself");
            }
        }
    }
    if (kind == NoiseKind::instance_dependent && idn_std <= 0.0) {
        throw ConfigError("idn_std must be positive");
    }
}

namespace {

// rejection sampling from N(mean, std^2) restricted to [lo, hi]
double truncated_normal(Rng& rng, double mean, double std, double lo, double hi) {
    for (;;) {
        const double x = mean + std * rng.normal();
        if (x >= lo && x <= hi) return x;
    }
}

std::vector<char> diff_flags(const std::vector<int>& a, const std::vector<int>& b) {
    std::vector<char> f(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) f[i] = a[i] != b[i] ? 1 : 0;
    return f;
}

} // namespace

std::vector<int> inject_symmetric(const std::vector<int>& labels, int num_classes,
                                  const NoiseSpec& spec) {
    spec.validate(num_classes);
    Rng rng(spec.seed);
    std::vector<int> noisy = labels;
    for (auto& y : noisy) {
        if (rng.uniform() < spec.ratio) {
            // uniform over the other c-1 classes
            int target = static_cast<int>(rng.uniform_int(num_classes - 1));
            if (target >= y) ++target;
            y = target;
        }
    }
    return noisy;
}

std::vector<int> inject_asymmetric(const std::vector<int>& labels, int num_classes,
                                   const NoiseSpec& spec) {
    spec.validate(num_classes);
    std::vector<int> pairing = spec.asym_pairing;
    if (pairing.empty()) {
        pairing.resize(num_classes);
        for (int k = 0; k < num_classes; ++k) pairing[k] = (k + 1) % num_classes;
    }
    Rng rng(spec.seed);
    std::vector<int> noisy = labels;
    for (auto& y : noisy) {
        if (rng.uniform() < spec.ratio) {
            y = pairing[y];
        }
    }
    return noisy;
}

IdnTrace inject_idn_traced(const Mat& features, const std::vector<int>& labels,
                           int num_classes, const NoiseSpec& spec) {
    spec.validate(num_classes);
    if (features.rows != labels.size()) {
        throw InputError("features/labels length mismatch");
    }
    for (double v : features.data) {
        if (!std::isfinite(v)) {
            throw InputError("idn injection: non-finite feature value");
        }
    }
    const std::size_t n = features.rows;
    const std::size_t d = features.cols;
    const auto c = static_cast<std::size_t>(num_classes);

    Rng rng(spec.seed);

    // instance flip rates q_i ~ N(tau, idn_std^2) truncated to [0,1]
    std::vector<double> q(n);
    for (auto& qi : q) {
        qi = truncated_normal(rng, spec.ratio, spec.idn_std, 0.0, 1.0);
    }

    // per-class projection onto class scores: v_k is a d x c block
    std::vector<Mat> proj(c);
    for (auto& v : proj) {
        v = Mat(d, c);
        for (auto& x : v.data) x = rng.normal();
    }

    IdnTrace trace;
    trace.noisy.resize(n);
    trace.q = q;
    trace.probs = Mat(n, c);

    Vec score(c);
    for (std::size_t i = 0; i < n; ++i) {
        const int yi = labels[i];
        const Mat& v = proj[static_cast<std::size_t>(yi)];
        for (std::size_t k = 0; k < c; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += features(i, j) * v(j, k);
            score[k] = s;
        }
        score[static_cast<std::size_t>(yi)] = -std::numeric_limits<double>::infinity();

        // softmax over the masked scores; the own class gets exactly 1 - q_i
        double mx = -std::numeric_limits<double>::infinity();
        for (double s : score) mx = std::max(mx, s);
        double z = 0.0;
        Vec e(c, 0.0);
        for (std::size_t k = 0; k < c; ++k) {
            if (std::isinf(score[k])) continue;
            e[k] = std::exp(score[k] - mx);
            z += e[k];
        }
        double* p = trace.probs.row(i);
        for (std::size_t k = 0; k < c; ++k) p[k] = q[i] * (e[k] / z);
        p[static_cast<std::size_t>(yi)] = 1.0 - q[i];

        // categorical draw from p (off-class mass sums to q_i by construction)
        const double u = rng.uniform();
        double acc = 0.0;
        std::size_t pick = c - 1;
        for (std::size_t k = 0; k < c; ++k) {
            acc += p[k];
            if (u <= acc) {
                pick = k;
                break;
            }
        }
        trace.noisy[i] = static_cast<int>(pick);
    }
    return trace;
}

std::vector<int> inject_idn(const Mat& features, const std::vector<int>& labels,
                            int num_classes, const NoiseSpec& spec) {
    return inject_idn_traced(features, labels, num_classes, spec).noisy;
}

InjectionResult inject(const Mat& features, const std::vector<int>& clean_labels,
                       int num_classes, const NoiseSpec& spec) {
    InjectionResult result;
    switch (spec.kind) {
        case NoiseKind::symmetric:
            result.noisy = inject_symmetric(clean_labels, num_classes, spec);
            break;
        case NoiseKind::asymmetric:
            result.noisy = inject_asymmetric(clean_labels, num_classes, spec);
            break;
        case NoiseKind::instance_dependent:
            result.noisy = inject_idn(features, clean_labels, num_classes, spec);
            break;
    }
    result.provenance.spec = spec;
    result.provenance.flipped = diff_flags(clean_labels, result.noisy);
    std::size_t flips = 0;
    for (char f : result.provenance.flipped) flips += f;
    result.provenance.realized_flip_fraction =
        clean_labels.empty() ? 0.0 : static_cast<double>(flips) / clean_labels.size();
    return result;
}

void NoiseProvenance::save(const std::string& path) const {
    json j;
    j["kind"] = to_string(spec.kind);
    j["ratio"] = spec.ratio;
    j["seed"] = spec.seed;
    j["idn_std"] = spec.idn_std;
    if (!spec.asym_pairing.empty()) j["asym_pairing"] = spec.asym_pairing;
    j["realized_flip_fraction"] = realized_flip_fraction;
    std::string bits(flipped.begin(), flipped.end());
    for (auto& ch : bits) ch = ch ? '1' : '0';
    j["flipped"] = bits;
    std::ofstream out(path);
    if (!out) throw InputError("cannot write provenance file '" + path + "'");
    out << j.dump(2) << "\n";
}

NoiseProvenance NoiseProvenance::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open provenance file '" + path + "'");
    json j;
    in >> j;
    NoiseProvenance p;
    p.spec.kind = parse_noise_kind(j.at("kind").get<std::string>());
    p.spec.ratio = j.at("ratio").get<double>();
    p.spec.seed = j.at("seed").get<std::uint64_t>();
    p.spec.idn_std = j.value("idn_std", 0.1);
    if (j.contains("asym_pairing")) {
        p.spec.asym_pairing = j["asym_pairing"].get<std::vector<int>>();
    }
    p.realized_flip_fraction = j.at("realized_flip_fraction").get<double>();
    const auto bits = j.at("flipped").get<std::string>();
    p.flipped.assign(bits.size(), 0);
    for (std::size_t i = 0; i < bits.size(); ++i) p.flipped[i] = bits[i] == '1';
    return p;
}

} // namespace dygen
