#pragma once

#include "dygen/mat.hpp"
#include "dygen/rng.hpp"

#include <cstddef>
#include <vector>

namespace dygen {

/// Fully connected stack with ReLU between layers and a linear final layer.
/// Parameters live in one flat vector so optimizers and finite-difference
/// checks can treat the model as a plain coordinate vector.
class Mlp {
public:
    Mlp() = default;

    /// dims = {in, hidden..., out}; Glorot-uniform weights, zero biases.
    Mlp(std::vector<std::size_t> dims, Rng& rng);

    /// Batched forward pass; caches activations for a following backward().
    /// Returns the final pre-activation outputs (no softmax/sigmoid).
    Mat forward(const Mat& x);

    /// Forward pass without touching the caches (inference-only).
    Mat forward_const(const Mat& x) const;

    /// Backpropagates dL/d(output) from the last forward() call.
    /// Accumulates into grads() and returns dL/d(input).
    Mat backward(const Mat& d_out);

    void zero_grad();

    Vec& params() { return params_; }
    const Vec& params() const { return params_; }
    Vec& grads() { return grads_; }
    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t num_params() const { return params_.size(); }

private:
    struct LayerView {
        std::size_t in = 0, out = 0;
        std::size_t w_off = 0, b_off = 0;
    };

    std::vector<std::size_t> dims_;
    std::vector<LayerView> layers_;
    Vec params_;
    Vec grads_;

    // caches from the last forward()
    std::vector<Mat> inputs_;   // input to each layer
    std::vector<Mat> preacts_;  // pre-activation of each layer

    Mat affine(const LayerView& l, const Mat& x) const;
};

/// Row-wise softmax.
Mat softmax_rows(const Mat& logits);

/// Given dL/dprobs and probs = softmax(logits), returns dL/dlogits.
Mat softmax_backward(const Mat& d_probs, const Mat& probs);

/// Adam with bias correction (beta1=0.9, beta2=0.999 defaults).
class AdamOptimizer {
public:
    AdamOptimizer(std::size_t n_params, double lr, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8);

    void step(Vec& params, const Vec& grads);

private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    Vec m_, v_;
};

} // namespace dygen
