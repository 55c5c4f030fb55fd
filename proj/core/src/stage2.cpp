#include "dygen/stage2.hpp"

#include "dygen/errors.hpp"
#include "dygen/hash.hpp"
#include "dygen/special.hpp"
#include "dygen/stage1.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>

namespace dygen {

using nlohmann::json;

const char* to_string(YhatSource src) {
    switch (src) {
        case YhatSource::branch_prediction: return "branch_prediction";
        case YhatSource::noisy_label: return "noisy_label";
    }
    return "?";
}

void Stage2Config::validate() const {
    if (iterations == 0) throw ConfigError("stage2 iterations must be positive");
    if (coreg_weight < 0.0) throw ConfigError("coreg_weight must be nonnegative");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) {
        throw ConfigError("warmup_fraction must lie in [0,1)");
    }
    if (epsilon <= 0.0) throw ConfigError("epsilon must be positive");
    if (alpha_floor <= 1.0) throw ConfigError("alpha_floor must exceed 1");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (hidden_dim == 0) throw ConfigError("hidden_dim must be positive");
}

std::string Stage2Config::hash() const {
    json j;
    j["T"] = iterations;
    j["lambda2"] = coreg_weight;
    j["gamma"] = warmup_fraction;
    j["eps"] = epsilon;
    j["floor"] = alpha_floor;
    j["lr"] = learning_rate;
    j["batch"] = batch_size;
    j["hidden"] = hidden_dim;
    j["seed"] = seed;
    j["yhat"] = to_string(yhat_source);
    j["reg"] = regularizer == RegularizerForm::per_component ? "per_component" : "exact_kl";
    std::ostringstream hex;
    hex << std::hex << fnv1a64(j.dump());
    return hex.str();
}

double alpha_transform(double preact, double floor) {
    return floor + softplus(std::min(preact, 30.0));
}

double alpha_transform_grad(double preact) {
    return preact < 30.0 ? sigmoid(preact) : 0.0;
}

GenerativeBranch::GenerativeBranch(std::size_t w_dim, std::size_t num_classes,
                                   std::size_t hidden, double alpha_floor, Rng& rng)
    : w_dim_(w_dim), num_classes_(num_classes), hidden_(hidden), alpha_floor_(alpha_floor),
      encoder_({w_dim + num_classes, hidden, num_classes}, rng),
      decoder_({num_classes + w_dim, hidden, num_classes}, rng) {}

namespace {

Mat concat_cols(const Mat& a, const Mat& b) {
    if (a.rows != b.rows) throw InputError("row mismatch when concatenating inputs");
    Mat out(a.rows, a.cols + b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* row = out.row(i);
        const double* ar = a.row(i);
        const double* br = b.row(i);
        for (std::size_t j = 0; j < a.cols; ++j) row[j] = ar[j];
        for (std::size_t j = 0; j < b.cols; ++j) row[a.cols + j] = br[j];
    }
    return out;
}

} // namespace

Mat GenerativeBranch::encode(const Mat& w, const Mat& yhat_onehot) const {
    if (w.cols != w_dim_ || yhat_onehot.cols != num_classes_) {
        throw InputError("encode: input dims do not match branch configuration");
    }
    Mat z = encoder_.forward_const(concat_cols(w, yhat_onehot));
    for (auto& v : z.data) v = alpha_transform(v, alpha_floor_);
    return z;
}

Vec GenerativeBranch::encode(const Vec& w, const Vec& yhat_onehot) const {
    Mat wm(1, w.size());
    wm.data = w;
    Mat ym(1, yhat_onehot.size());
    ym.data = yhat_onehot;
    return encode(wm, ym).data;
}

Mat GenerativeBranch::decode(const Mat& y, const Mat& w) const {
    if (y.cols != num_classes_ || w.cols != w_dim_) {
        throw InputError("decode: input dims do not match branch configuration");
    }
    Mat s = decoder_.forward_const(concat_cols(y, w));
    for (auto& v : s.data) v = sigmoid(v);
    return s;
}

Vec GenerativeBranch::decode(const Vec& y, const Vec& w) const {
    Mat ym(1, y.size());
    ym.data = y;
    Mat wm(1, w.size());
    wm.data = w;
    return decode(ym, wm).data;
}

DirichletSample sample_dirichlet_detail(const Vec& alpha, Rng& rng) {
    const std::size_t c = alpha.size();
    if (c == 0) throw DomainError("empty concentration vector");
    DirichletSample s;
    s.y.resize(c);
    s.z.assign(c, 0.0);
    s.lng.assign(c, -std::numeric_limits<double>::infinity());
    s.frac.assign(c, 0.0);

    bool any_whole = false;
    for (std::size_t k = 0; k < c; ++k) {
        const double a = alpha[k];
        if (!(a > 0.0) || !std::isfinite(a)) {
            throw DomainError("dirichlet concentration must be positive and finite");
        }
        const double whole = std::floor(a);
        const double f = a - whole;
        s.frac[k] = f;
        if (whole >= 1.0) any_whole = true;

        double z = 0.0;
        if (f > 0.0) {
            const double u0 = rng.uniform();
            s.lng[k] = (std::log(u0) + std::log(f) + std::lgamma(f)) / f;
            z += std::exp(s.lng[k]);
        }
        for (double i = 0.0; i < whole; i += 1.0) {
            z += -std::log(rng.uniform());
        }
        s.z[k] = z;
    }

    if (!any_whole) {
        // all concentrations below 1: the fractional draws can underflow,
        // so normalize in the log domain (scale cancels in y)
        s.shifted = true;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, s.lng[k]);
        double sum = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            s.z[k] = std::exp(s.lng[k] - mx);
            sum += s.z[k];
        }
        s.z_sum = sum;
        for (std::size_t k = 0; k < c; ++k) s.y[k] = s.z[k] / sum;
        return s;
    }

    double sum = 0.0;
    for (double z : s.z) sum += z;
    s.z_sum = sum;
    for (std::size_t k = 0; k < c; ++k) s.y[k] = s.z[k] / sum;
    return s;
}

Vec sample_dirichlet(const Vec& alpha, Rng& rng) {
    return sample_dirichlet_detail(alpha, rng).y;
}

Vec dirichlet_sample_backward(const DirichletSample& sample, const Vec& d_y) {
    if (sample.shifted) {
        throw DomainError("pathwise gradient undefined for the all-sub-1 sampling path");
    }
    const std::size_t c = sample.y.size();
    if (d_y.size() != c) throw InputError("gradient size mismatch");

    double dot = 0.0;
    for (std::size_t k = 0; k < c; ++k) dot += d_y[k] * sample.y[k];

    Vec d_alpha(c, 0.0);
    for (std::size_t k = 0; k < c; ++k) {
        const double dz = (d_y[k] - dot) / sample.z_sum;
        const double f = sample.frac[k];
        if (f <= 0.0) continue; // gradient flows only through the fractional draw
        const double lng = sample.lng[k];
        const double g = std::exp(lng);
        if (g == 0.0) continue;
        const double dgdf = g * ((1.0 / f + digamma(f) - lng) / f);
        d_alpha[k] = dz * dgdf;
    }
    return d_alpha;
}

double elbo(const Vec& yhat_onehot, const Vec& y_star, const Vec& alpha_prior,
            const Vec& alpha_hat, RegularizerForm form) {
    const std::size_t c = yhat_onehot.size();
    if (y_star.size() != c || alpha_prior.size() != c || alpha_hat.size() != c) {
        throw InputError("elbo: vector length mismatch");
    }
    double recon = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
        if (!(y_star[k] > 0.0) || !(y_star[k] < 1.0)) {
            throw InputError("elbo: reconstruction probabilities must lie in (0,1)");
        }
        recon += yhat_onehot[k] * std::log(y_star[k]) +
                 (1.0 - yhat_onehot[k]) * std::log(1.0 - y_star[k]);
    }

    return recon + elbo_prior_regularizer(alpha_prior, alpha_hat, form);
}

double elbo_prior_regularizer(const Vec& alpha_prior, const Vec& alpha_hat,
                              RegularizerForm form) {
    const std::size_t c = alpha_prior.size();
    if (alpha_hat.size() != c) throw InputError("regularizer: vector length mismatch");
    for (std::size_t k = 0; k < c; ++k) {
        if (!(alpha_prior[k] > 0.0) || !(alpha_hat[k] > 0.0)) {
            throw DomainError("regularizer: concentrations must be positive");
        }
    }
    double reg = 0.0;
    if (form == RegularizerForm::per_component) {
        for (std::size_t k = 0; k < c; ++k) {
            reg += -std::lgamma(alpha_prior[k]) + std::lgamma(alpha_hat[k]) -
                   (alpha_hat[k] - alpha_prior[k]) * digamma(alpha_hat[k]);
        }
    } else {
        double a_sum = 0.0, b_sum = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            a_sum += alpha_hat[k];
            b_sum += alpha_prior[k];
        }
        // -KL(Dir(alpha_hat) || Dir(alpha_prior))
        reg = std::lgamma(b_sum) - std::lgamma(a_sum);
        const double dg_sum = digamma(a_sum);
        for (std::size_t k = 0; k < c; ++k) {
            reg += std::lgamma(alpha_hat[k]) - std::lgamma(alpha_prior[k]) -
                   (alpha_hat[k] - alpha_prior[k]) * (digamma(alpha_hat[k]) - dg_sum);
        }
    }
    return reg;
}

Vec elbo_regularizer_grad(const Vec& alpha_prior, const Vec& alpha_hat,
                          RegularizerForm form) {
    const std::size_t c = alpha_prior.size();
    Vec grad(c, 0.0);
    if (form == RegularizerForm::per_component) {
        for (std::size_t k = 0; k < c; ++k) {
            grad[k] = -(alpha_hat[k] - alpha_prior[k]) * trigamma(alpha_hat[k]);
        }
    } else {
        double a_sum = 0.0, diff_sum = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            a_sum += alpha_hat[k];
            diff_sum += alpha_hat[k] - alpha_prior[k];
        }
        const double tg_sum = trigamma(a_sum);
        for (std::size_t k = 0; k < c; ++k) {
            grad[k] = -(alpha_hat[k] - alpha_prior[k]) * trigamma(alpha_hat[k]) +
                      tg_sum * diff_sum;
        }
    }
    return grad;
}

Vec posterior_mode(const Vec& alpha, double floor) {
    if (floor < 1.0) throw ConfigError("posterior mode needs a floor of at least 1");
    const std::size_t c = alpha.size();
    Vec a = alpha;
    double sum = 0.0;
    for (auto& v : a) {
        if (!(v > 0.0)) throw DomainError("posterior mode: concentrations must be positive");
        v = std::max(v, floor);
        sum += v;
    }
    const double denom = sum - static_cast<double>(c);
    if (denom <= 0.0) {
        throw DegeneratePosteriorError("posterior mode undefined: sum of concentrations "
                                       "does not exceed the class count");
    }
    Vec h(c);
    for (std::size_t k = 0; k < c; ++k) h[k] = (a[k] - 1.0) / denom;
    return h;
}

double coreg_loss_stage2(const std::vector<Mat>& posterior_modes_per_branch,
                         double epsilon) {
    return coreg_loss(posterior_modes_per_branch, epsilon);
}

namespace {

struct BranchBatch {
    Mat u;          // encoder input
    Mat z;          // encoder preacts (cached inside the net too)
    Mat alpha;      // transformed concentrations
    Mat modes;      // posterior modes per instance
    Mat v;          // decoder input, one row per (instance, mc sample)
    Mat s;          // decoder preacts
    Mat ystar;      // sigmoid(s)
    std::vector<DirichletSample> samples; // N * mc entries, sample-major per instance
};

// forward pass for one branch on a batch; consumes N * mc dirichlet draws
BranchBatch branch_forward_stage2(Mlp& encoder, Mlp& decoder, const Stage2Inputs& in,
                                  const std::vector<std::size_t>& batch_ids,
                                  double alpha_floor, Rng& rng, std::size_t mc_samples,
                                  bool cached) {
    const std::size_t n = batch_ids.size();
    const std::size_t c = in.alpha_prior.cols;
    const std::size_t w_dim = in.w.cols;

    BranchBatch bb;
    bb.u = Mat(n, w_dim + c);
    for (std::size_t r = 0; r < n; ++r) {
        const std::size_t i = batch_ids[r];
        double* row = bb.u.row(r);
        const double* wr = in.w.row(i);
        for (std::size_t j = 0; j < w_dim; ++j) row[j] = wr[j];
        row[w_dim + static_cast<std::size_t>(in.yhat[i])] = 1.0;
    }
    bb.z = cached ? encoder.forward(bb.u) : encoder.forward_const(bb.u);
    bb.alpha = bb.z;
    for (auto& v : bb.alpha.data) v = alpha_transform(v, alpha_floor);

    bb.modes = Mat(n, c);
    Vec arow(c);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < c; ++k) arow[k] = bb.alpha(r, k);
        const Vec mode = posterior_mode(arow, 1.0); // alpha already above floor
        for (std::size_t k = 0; k < c; ++k) bb.modes(r, k) = mode[k];
    }

    bb.samples.reserve(n * mc_samples);
    bb.v = Mat(n * mc_samples, c + w_dim);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t k = 0; k < c; ++k) arow[k] = bb.alpha(r, k);
        const double* wr = in.w.row(batch_ids[r]);
        for (std::size_t sidx = 0; sidx < mc_samples; ++sidx) {
            bb.samples.push_back(sample_dirichlet_detail(arow, rng));
            double* row = bb.v.row(r * mc_samples + sidx);
            const Vec& y = bb.samples.back().y;
            for (std::size_t k = 0; k < c; ++k) row[k] = y[k];
            for (std::size_t j = 0; j < w_dim; ++j) row[c + j] = wr[j];
        }
    }
    bb.s = cached ? decoder.forward(bb.v) : decoder.forward_const(bb.v);
    bb.ystar = bb.s;
    for (auto& v : bb.ystar.data) v = sigmoid(v);
    return bb;
}

double stage2_objective(const std::vector<BranchBatch>& batches,
                        const std::vector<Stage2Inputs>& inputs,
                        const std::vector<std::size_t>& batch_ids, double lambda,
                        const Stage2Config& cfg, std::size_t mc_samples) {
    const std::size_t m_count = batches.size();
    const std::size_t n = batch_ids.size();
    const std::size_t c = inputs.front().alpha_prior.cols;

    double task = 0.0;
    for (std::size_t m = 0; m < m_count; ++m) {
        const BranchBatch& bb = batches[m];
        const Stage2Inputs& in = inputs[m];
        for (std::size_t r = 0; r < n; ++r) {
            const std::size_t i = batch_ids[r];
            const auto y = static_cast<std::size_t>(in.yhat[i]);
            // reconstruction, averaged over the mc draws
            double recon = 0.0;
            for (std::size_t sidx = 0; sidx < mc_samples; ++sidx) {
                const double* ys = bb.ystar.row(r * mc_samples + sidx);
                for (std::size_t k = 0; k < c; ++k) {
                    const double t = k == y ? 1.0 : 0.0;
                    recon += t * std::log(std::max(ys[k], 1e-300)) +
                             (1.0 - t) * std::log(std::max(1.0 - ys[k], 1e-300));
                }
            }
            recon /= static_cast<double>(mc_samples);
            // prior regularizer (independent of the draws)
            Vec a(c), b(c);
            for (std::size_t k = 0; k < c; ++k) {
                a[k] = bb.alpha(r, k);
                b[k] = in.alpha_prior(i, k);
            }
            task -= recon + elbo_prior_regularizer(b, a, cfg.regularizer);
        }
    }
    task /= static_cast<double>(m_count) * static_cast<double>(n);

    double loss = task;
    if (lambda != 0.0) {
        std::vector<Mat> modes;
        modes.reserve(m_count);
        for (const auto& bb : batches) modes.push_back(bb.modes);
        loss += lambda * coreg_loss(modes, cfg.epsilon);
    }
    return loss;
}

} // namespace

double stage2_batch_loss_grad(std::vector<GenerativeBranch>& branches,
                              const std::vector<Stage2Inputs>& inputs,
                              const std::vector<std::size_t>& batch_ids, double lambda,
                              const Stage2Config& cfg, std::vector<Rng>& rngs,
                              std::size_t mc_samples) {
    const std::size_t m_count = branches.size();
    if (rngs.size() != m_count) throw InputError("need one sampling rng per branch");
    const std::size_t n = batch_ids.size();
    const std::size_t c = branches.front().num_classes();
    const double inv_mn = 1.0 / (static_cast<double>(m_count) * static_cast<double>(n));

    std::vector<BranchBatch> batches;
    batches.reserve(m_count);
    for (std::size_t m = 0; m < m_count; ++m) {
        batches.push_back(branch_forward_stage2(branches[m].encoder_net(),
                                                branches[m].decoder_net(), inputs[m],
                                                batch_ids, branches[m].alpha_floor(),
                                                rngs[m], mc_samples, /*cached=*/true));
    }
    const double loss = stage2_objective(batches, inputs, batch_ids, lambda, cfg, mc_samples);

    // coreg gradient wrt the posterior modes (shared consensus graph)
    std::vector<Mat> d_modes;
    if (lambda != 0.0) {
        std::vector<Mat> modes;
        modes.reserve(m_count);
        for (const auto& bb : batches) modes.push_back(bb.modes);
        d_modes = coreg_loss_dprobs(modes, cfg.epsilon);
        for (auto& dm : d_modes) {
            for (auto& v : dm.data) v *= lambda;
        }
    }

    for (std::size_t m = 0; m < m_count; ++m) {
        BranchBatch& bb = batches[m];
        const Stage2Inputs& in = inputs[m];

        // reconstruction: d(-elbo)/d(decoder preact) = (ystar - t) scaled
        Mat d_s(n * mc_samples, c);
        for (std::size_t r = 0; r < n; ++r) {
            const auto y = static_cast<std::size_t>(in.yhat[batch_ids[r]]);
            for (std::size_t sidx = 0; sidx < mc_samples; ++sidx) {
                const std::size_t row = r * mc_samples + sidx;
                const double* ys = bb.ystar.row(row);
                double* ds = d_s.row(row);
                for (std::size_t k = 0; k < c; ++k) {
                    const double t = k == y ? 1.0 : 0.0;
                    ds[k] = (ys[k] - t) * inv_mn / static_cast<double>(mc_samples);
                }
            }
        }
        const Mat d_v = branches[m].decoder_net().backward(d_s);

        // gradient wrt alpha: sampler path + regularizer path + coreg path
        Mat d_alpha(n, c);
        Vec d_y(c), arow(c), brow(c);
        for (std::size_t r = 0; r < n; ++r) {
            const std::size_t i = batch_ids[r];
            for (std::size_t sidx = 0; sidx < mc_samples; ++sidx) {
                const std::size_t row = r * mc_samples + sidx;
                const double* dv = d_v.row(row);
                for (std::size_t k = 0; k < c; ++k) d_y[k] = dv[k];
                const Vec da = dirichlet_sample_backward(bb.samples[row], d_y);
                for (std::size_t k = 0; k < c; ++k) d_alpha(r, k) += da[k];
            }
            for (std::size_t k = 0; k < c; ++k) {
                arow[k] = bb.alpha(r, k);
                brow[k] = in.alpha_prior(i, k);
            }
            const Vec dreg = elbo_regularizer_grad(brow, arow, cfg.regularizer);
            for (std::size_t k = 0; k < c; ++k) {
                d_alpha(r, k) -= dreg[k] * inv_mn; // minus: loss is negative elbo
            }
            if (lambda != 0.0) {
                // through H_k = (a_k - 1)/(A - c)
                double a_sum = 0.0, dot = 0.0;
                for (std::size_t k = 0; k < c; ++k) a_sum += arow[k];
                const double denom = a_sum - static_cast<double>(c);
                const double* dh = d_modes[m].row(r);
                const double* h = bb.modes.row(r);
                for (std::size_t k = 0; k < c; ++k) dot += dh[k] * h[k];
                for (std::size_t k = 0; k < c; ++k) {
                    d_alpha(r, k) += (dh[k] - dot) / denom;
                }
            }
        }

        // through the positive transform into the encoder
        Mat d_z(n, c);
        for (std::size_t idx = 0; idx < d_z.data.size(); ++idx) {
            d_z.data[idx] = d_alpha.data[idx] * alpha_transform_grad(bb.z.data[idx]);
        }
        branches[m].encoder_net().backward(d_z);
    }
    return loss;
}

double stage2_batch_loss(const std::vector<GenerativeBranch>& branches,
                         const std::vector<Stage2Inputs>& inputs,
                         const std::vector<std::size_t>& batch_ids, double lambda,
                         const Stage2Config& cfg, std::vector<Rng>& rngs,
                         std::size_t mc_samples) {
    if (rngs.size() != branches.size()) throw InputError("need one sampling rng per branch");
    std::vector<BranchBatch> batches;
    batches.reserve(branches.size());
    for (std::size_t m = 0; m < branches.size(); ++m) {
        auto& enc = const_cast<Mlp&>(branches[m].encoder_net());
        auto& dec = const_cast<Mlp&>(branches[m].decoder_net());
        batches.push_back(branch_forward_stage2(enc, dec, inputs[m], batch_ids,
                                                branches[m].alpha_floor(), rngs[m],
                                                mc_samples, /*cached=*/false));
    }
    return stage2_objective(batches, inputs, batch_ids, lambda, cfg, mc_samples);
}

std::vector<GenerativeBranch> train_stage2(const std::vector<Stage2Inputs>& inputs,
                                           const Stage2Config& cfg) {
    cfg.validate();
    if (inputs.empty()) throw InputError("train_stage2: no branch inputs");
    const std::size_t m_count = inputs.size();
    const std::size_t n = inputs.front().w.rows;
    const std::size_t c = inputs.front().alpha_prior.cols;
    const std::size_t w_dim = inputs.front().w.cols;
    for (const auto& in : inputs) {
        if (in.w.rows != n || in.w.cols != w_dim || in.alpha_prior.rows != n ||
            in.alpha_prior.cols != c || in.yhat.size() != n) {
            throw InputError("train_stage2: branch inputs disagree on shape");
        }
    }

    std::vector<GenerativeBranch> branches;
    branches.reserve(m_count);
    std::vector<AdamOptimizer> opt_enc, opt_dec;
    for (std::size_t m = 0; m < m_count; ++m) {
        Rng init_rng(cfg.seed + m + 1);
        branches.emplace_back(w_dim, c, cfg.hidden_dim, cfg.alpha_floor, init_rng);
        opt_enc.emplace_back(branches.back().encoder_net().num_params(), cfg.learning_rate);
        opt_dec.emplace_back(branches.back().decoder_net().num_params(), cfg.learning_rate);
    }

    Rng shuffle_rng(cfg.seed);
    std::vector<Rng> sample_rngs;
    sample_rngs.reserve(m_count);
    for (std::size_t m = 0; m < m_count; ++m) {
        sample_rngs.emplace_back(cfg.seed + 9973 + m);
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    const std::size_t warmup = warmup_steps(cfg.warmup_fraction, cfg.iterations);
    std::vector<std::size_t> batch_ids;

    for (std::size_t t = 0; t < cfg.iterations; ++t) {
        const double lambda = t < warmup ? 0.0 : cfg.coreg_weight;
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t stop = std::min(start + cfg.batch_size, n);
            batch_ids.assign(order.begin() + start, order.begin() + stop);
            for (auto& b : branches) {
                b.encoder_net().zero_grad();
                b.decoder_net().zero_grad();
            }
            const double loss = stage2_batch_loss_grad(branches, inputs, batch_ids, lambda,
                                                       cfg, sample_rngs, 1);
            if (!std::isfinite(loss)) {
                throw TrainingDivergenceError(
                    "stage2 loss non-finite at iteration " + std::to_string(t) +
                    ", batch offset " + std::to_string(start));
            }
            for (std::size_t m = 0; m < m_count; ++m) {
                opt_enc[m].step(branches[m].encoder_net().params(),
                                branches[m].encoder_net().grads());
                opt_dec[m].step(branches[m].decoder_net().params(),
                                branches[m].decoder_net().grads());
            }
        }
    }
    return branches;
}

namespace {

void write_raw(std::ofstream& out, const Vec& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void read_raw(std::ifstream& in, Vec& v) {
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (static_cast<std::size_t>(in.gcount()) != v.size() * sizeof(double)) {
        throw InputError("stage2 parameter file truncated");
    }
}

constexpr char kMagic[4] = {'D', 'Y', 'G', '2'};

} // namespace

void GenerativeBranch::save(const std::string& path, const std::string& config_hash) const {
    json header;
    header["version"] = 1;
    header["w_dim"] = w_dim_;
    header["num_classes"] = num_classes_;
    header["hidden"] = hidden_;
    header["alpha_floor"] = alpha_floor_;
    header["encoder_params"] = encoder_.num_params();
    header["decoder_params"] = decoder_.num_params();
    header["config_hash"] = config_hash;
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write branch file '" + path + "'");
    out.write(kMagic, 4);
    const auto len = static_cast<std::uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    write_raw(out, encoder_.params());
    write_raw(out, decoder_.params());
}

GenerativeBranch GenerativeBranch::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open branch file '" + path + "'");
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::string(magic, 4) != std::string(kMagic, 4)) {
        throw InputError("branch file '" + path + "' has wrong magic");
    }
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string hs(len, '\0');
    in.read(hs.data(), len);
    json header = json::parse(hs);
    if (header.at("version").get<int>() != 1) {
        throw InputError("unsupported branch file version");
    }

    GenerativeBranch b;
    b.w_dim_ = header.at("w_dim").get<std::size_t>();
    b.num_classes_ = header.at("num_classes").get<std::size_t>();
    b.hidden_ = header.at("hidden").get<std::size_t>();
    b.alpha_floor_ = header.at("alpha_floor").get<double>();
    Rng dummy(0);
    b.encoder_ = Mlp({b.w_dim_ + b.num_classes_, b.hidden_, b.num_classes_}, dummy);
    b.decoder_ = Mlp({b.num_classes_ + b.w_dim_, b.hidden_, b.num_classes_}, dummy);
    if (b.encoder_.num_params() != header.at("encoder_params").get<std::size_t>() ||
        b.decoder_.num_params() != header.at("decoder_params").get<std::size_t>()) {
        throw InputError("branch file parameter counts do not match dims");
    }
    read_raw(in, b.encoder_.params());
    read_raw(in, b.decoder_.params());
    return b;
}

} // namespace dygen
