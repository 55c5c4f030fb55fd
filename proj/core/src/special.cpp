#include "dygen/special.hpp"

#include "dygen/errors.hpp"

#include <cmath>

namespace dygen {

// Recurrence to push the argument above 10, then the Stirling-type
// asymptotic series. Accurate to ~1e-13 absolute over the range this
// library uses (concentrations in (0, 1e4)).
double digamma(double x) {
    if (!(x > 0.0)) {
        throw DomainError("digamma: argument must be positive");
    }
    double result = 0.0;
    while (x < 10.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    // psi(x) ~ ln x - 1/(2x) - sum B_2n / (2n x^(2n))
    double series = inv2 * (1.0 / 12.0
                  - inv2 * (1.0 / 120.0
                  - inv2 * (1.0 / 252.0
                  - inv2 * (1.0 / 240.0
                  - inv2 * (1.0 / 132.0)))));
    return result + std::log(x) - 0.5 * inv - series;
}

double trigamma(double x) {
    if (!(x > 0.0)) {
        throw DomainError("trigamma: argument must be positive");
    }
    double result = 0.0;
    while (x < 10.0) {
        result += 1.0 / (x * x);
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    // psi'(x) ~ 1/x + 1/(2x^2) + sum B_2n / x^(2n+1)
    double series = inv * (1.0
                  + inv * (0.5
                  + inv * (1.0 / 6.0
                  - inv2 * (1.0 / 30.0
                  - inv2 * (1.0 / 42.0
                  - inv2 * (1.0 / 30.0))))));
    return result + series;
}

double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace dygen
