#include "dygen/net.hpp"

#include "dygen/errors.hpp"

#include <cmath>

namespace dygen {

Mlp::Mlp(std::vector<std::size_t> dims, Rng& rng) : dims_(std::move(dims)) {
    if (dims_.size() < 2) throw ConfigError("mlp needs at least input and output dims");
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
        LayerView view;
        view.in = dims_[l];
        view.out = dims_[l + 1];
        view.w_off = offset;
        offset += view.in * view.out;
        view.b_off = offset;
        offset += view.out;
        layers_.push_back(view);
    }
    params_.assign(offset, 0.0);
    grads_.assign(offset, 0.0);
    for (const auto& l : layers_) {
        const double limit = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
        for (std::size_t i = 0; i < l.in * l.out; ++i) {
            params_[l.w_off + i] = (2.0 * rng.uniform() - 1.0) * limit;
        }
    }
}

Mat Mlp::affine(const LayerView& l, const Mat& x) const {
    if (x.cols != l.in) {
        throw InputError("mlp layer input dim " + std::to_string(x.cols) +
                         ", expected " + std::to_string(l.in));
    }
    Mat z(x.rows, l.out);
    const double* w = params_.data() + l.w_off;
    const double* b = params_.data() + l.b_off;
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        double* zi = z.row(i);
        for (std::size_t o = 0; o < l.out; ++o) {
            const double* wo = w + o * l.in;
            double acc = b[o];
            for (std::size_t j = 0; j < l.in; ++j) acc += wo[j] * xi[j];
            zi[o] = acc;
        }
    }
    return z;
}

Mat Mlp::forward(const Mat& x) {
    inputs_.assign(layers_.size(), Mat());
    preacts_.assign(layers_.size(), Mat());
    Mat a = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        inputs_[l] = a;
        Mat z = affine(layers_[l], a);
        preacts_[l] = z;
        if (l + 1 < layers_.size()) {
            for (auto& v : z.data) v = v > 0.0 ? v : 0.0;
        }
        a = std::move(z);
    }
    return a;
}

Mat Mlp::forward_const(const Mat& x) const {
    Mat a = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Mat z = affine(layers_[l], a);
        if (l + 1 < layers_.size()) {
            for (auto& v : z.data) v = v > 0.0 ? v : 0.0;
        }
        a = std::move(z);
    }
    return a;
}

Mat Mlp::backward(const Mat& d_out) {
    if (inputs_.size() != layers_.size()) {
        throw InputError("mlp backward without a preceding forward");
    }
    if (d_out.rows != inputs_.back().rows || d_out.cols != layers_.back().out) {
        throw InputError("mlp backward gradient shape does not match the last forward");
    }
    Mat d_z = d_out;
    for (std::size_t li = layers_.size(); li-- > 0;) {
        const LayerView& l = layers_[li];
        const Mat& a_in = inputs_[li];
        double* dw = grads_.data() + l.w_off;
        double* db = grads_.data() + l.b_off;
        for (std::size_t i = 0; i < d_z.rows; ++i) {
            const double* dzi = d_z.row(i);
            const double* ai = a_in.row(i);
            for (std::size_t o = 0; o < l.out; ++o) {
                const double g = dzi[o];
                if (g == 0.0) continue;
                double* dwo = dw + o * l.in;
                for (std::size_t j = 0; j < l.in; ++j) dwo[j] += g * ai[j];
                db[o] += g;
            }
        }
        Mat d_a(d_z.rows, l.in);
        const double* w = params_.data() + l.w_off;
        for (std::size_t i = 0; i < d_z.rows; ++i) {
            const double* dzi = d_z.row(i);
            double* dai = d_a.row(i);
            for (std::size_t j = 0; j < l.in; ++j) dai[j] = 0.0;
            for (std::size_t o = 0; o < l.out; ++o) {
                const double g = dzi[o];
                if (g == 0.0) continue;
                const double* wo = w + o * l.in;
                for (std::size_t j = 0; j < l.in; ++j) dai[j] += g * wo[j];
            }
        }
        if (li > 0) {
            // backprop through the ReLU of the previous layer
            const Mat& z_prev = preacts_[li - 1];
            for (std::size_t i = 0; i < d_a.data.size(); ++i) {
                if (z_prev.data[i] <= 0.0) d_a.data[i] = 0.0;
            }
        }
        d_z = std::move(d_a);
    }
    return d_z;
}

void Mlp::zero_grad() {
    std::fill(grads_.begin(), grads_.end(), 0.0);
}

Mat softmax_rows(const Mat& logits) {
    Mat p(logits.rows, logits.cols);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const double* z = logits.row(i);
        double* pi = p.row(i);
        double mx = z[0];
        for (std::size_t k = 1; k < logits.cols; ++k) mx = std::max(mx, z[k]);
        double sum = 0.0;
        for (std::size_t k = 0; k < logits.cols; ++k) {
            pi[k] = std::exp(z[k] - mx);
            sum += pi[k];
        }
        for (std::size_t k = 0; k < logits.cols; ++k) pi[k] /= sum;
    }
    return p;
}

Mat softmax_backward(const Mat& d_probs, const Mat& probs) {
    Mat d_logits(d_probs.rows, d_probs.cols);
    for (std::size_t i = 0; i < d_probs.rows; ++i) {
        const double* g = d_probs.row(i);
        const double* p = probs.row(i);
        double dot = 0.0;
        for (std::size_t k = 0; k < d_probs.cols; ++k) dot += g[k] * p[k];
        double* dz = d_logits.row(i);
        for (std::size_t k = 0; k < d_probs.cols; ++k) dz[k] = p[k] * (g[k] - dot);
    }
    return d_logits;
}

AdamOptimizer::AdamOptimizer(std::size_t n_params, double lr, double beta1,
                             double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
      m_(n_params, 0.0), v_(n_params, 0.0) {}

void AdamOptimizer::step(Vec& params, const Vec& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
        throw InputError("adam state size mismatch");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
        const double mhat = m_[i] / bc1;
        const double vhat = v_[i] / bc2;
        params[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
}

} // namespace dygen
