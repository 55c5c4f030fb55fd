#pragma once

namespace dygen {

/// Logarithmic derivative of the gamma function, psi(x). x > 0.
double digamma(double x);

/// Second derivative of log-gamma, psi'(x). x > 0.
double trigamma(double x);

/// log(1 + exp(x)) without overflow.
double softplus(double x);

/// Derivative of softplus, i.e. the logistic function.
double sigmoid(double x);

} // namespace dygen
