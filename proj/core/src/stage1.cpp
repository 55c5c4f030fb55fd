#include "dygen/stage1.hpp"

#include "dygen/errors.hpp"
#include "dygen/hash.hpp"

#include <json.hpp>

#include <cmath>
#include <sstream>

namespace dygen {

void Stage1Config::validate() const {
    if (num_branches < 2) throw ConfigError("stage1 needs at least 2 branches");
    if (epochs == 0) throw ConfigError("stage1 epochs must be positive");
    if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) {
        throw ConfigError("warmup_fraction must lie in [0,1)");
    }
    if (coreg_weight < 0.0) throw ConfigError("coreg_weight must be nonnegative");
    if (epsilon <= 0.0) throw ConfigError("epsilon must be positive");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (hidden_dim == 0 || embed_dim == 0) throw ConfigError("model dims must be positive");
}

std::string Stage1Config::hash() const {
    nlohmann::json j;
    j["M"] = num_branches;
    j["E"] = epochs;
    j["gamma"] = warmup_fraction;
    j["lambda1"] = coreg_weight;
    j["eps"] = epsilon;
    j["lr"] = learning_rate;
    j["batch"] = batch_size;
    j["hidden"] = hidden_dim;
    j["embed"] = embed_dim;
    j["seed"] = master_seed;
    std::ostringstream hex;
    hex << std::hex << fnv1a64(j.dump());
    return hex.str();
}

std::size_t warmup_steps(double gamma, std::size_t total) {
    // guard against 0.2*10 -> 2.0000000000000004 -> ceil 3
    const double raw = gamma * static_cast<double>(total) - 1e-9;
    if (raw <= 0.0) return 0;
    return static_cast<std::size_t>(std::ceil(raw));
}

Stage1Model::Stage1Model(std::size_t d_in, std::size_t hidden, std::size_t embed,
                         std::size_t classes, Rng& rng)
    : encoder({d_in, hidden, embed}, rng), head({embed, classes}, rng) {}

Stage1Model::Output Stage1Model::forward(const Mat& x) const {
    Output out;
    out.embedding = encoder.forward_const(x);
    out.probs = softmax_rows(head.forward_const(out.embedding));
    return out;
}

Vec consensus(const std::vector<Vec>& probs_per_branch) {
    if (probs_per_branch.size() < 2) throw InputError("consensus needs at least 2 branches");
    const std::size_t c = probs_per_branch.front().size();
    Vec r(c, 0.0);
    for (const auto& p : probs_per_branch) {
        if (p.size() != c) throw InputError("ragged branch distributions");
        for (std::size_t k = 0; k < c; ++k) r[k] += p[k];
    }
    for (auto& v : r) v /= static_cast<double>(probs_per_branch.size());
    return r;
}

double coreg_loss(const std::vector<Mat>& probs_per_branch, double epsilon) {
    const std::size_t m_count = probs_per_branch.size();
    if (m_count < 2) throw InputError("coreg_loss needs at least 2 branches");
    if (epsilon <= 0.0) throw ConfigError("epsilon must be positive");
    const std::size_t n = probs_per_branch.front().rows;
    const std::size_t c = probs_per_branch.front().cols;
    for (const auto& p : probs_per_branch) {
        if (p.rows != n || p.cols != c) throw InputError("ragged branch batches");
    }
    double total = 0.0;
    Vec r(c);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(r.begin(), r.end(), 0.0);
        for (const auto& p : probs_per_branch) {
            const double* pi = p.row(i);
            for (std::size_t k = 0; k < c; ++k) r[k] += pi[k];
        }
        for (auto& v : r) v /= static_cast<double>(m_count);
        for (const auto& p : probs_per_branch) {
            const double* pi = p.row(i);
            for (std::size_t k = 0; k < c; ++k) {
                total += r[k] * std::log((r[k] + epsilon) / (pi[k] + epsilon));
            }
        }
    }
    return total / (static_cast<double>(m_count) * static_cast<double>(n));
}

double coreg_loss(const std::vector<Vec>& probs_per_branch, double epsilon) {
    std::vector<Mat> batches;
    batches.reserve(probs_per_branch.size());
    for (const auto& p : probs_per_branch) {
        Mat b(1, p.size());
        b.data = p;
        batches.push_back(std::move(b));
    }
    return coreg_loss(batches, epsilon);
}

double task_loss_stage1(const std::vector<Mat>& probs_per_branch,
                        const std::vector<int>& noisy_labels) {
    if (probs_per_branch.empty()) throw InputError("no branches");
    const std::size_t n = probs_per_branch.front().rows;
    const auto c = static_cast<int>(probs_per_branch.front().cols);
    if (noisy_labels.size() != n) throw InputError("labels/batch size mismatch");
    double total = 0.0;
    for (const auto& p : probs_per_branch) {
        for (std::size_t i = 0; i < n; ++i) {
            const int y = noisy_labels[i];
            if (y < 0 || y >= c) {
                throw LabelRangeError("label " + std::to_string(y) + " out of range");
            }
            total -= std::log(std::max(p(i, static_cast<std::size_t>(y)), 1e-300));
        }
    }
    return total / (static_cast<double>(probs_per_branch.size()) * static_cast<double>(n));
}

std::vector<Mat> coreg_loss_dprobs(const std::vector<Mat>& probs_per_branch,
                                   double epsilon) {
    const std::size_t m_count = probs_per_branch.size();
    if (m_count < 2) throw InputError("coreg gradient needs at least 2 branches");
    const std::size_t n = probs_per_branch.front().rows;
    const std::size_t c = probs_per_branch.front().cols;
    const double inv_mn = 1.0 / (static_cast<double>(m_count) * static_cast<double>(n));

    std::vector<Mat> d(m_count, Mat(n, c));
    Vec r(c), log_sum(c);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(r.begin(), r.end(), 0.0);
        for (std::size_t m = 0; m < m_count; ++m) {
            const double* pi = probs_per_branch[m].row(i);
            for (std::size_t k = 0; k < c; ++k) r[k] += pi[k];
        }
        for (auto& v : r) v /= static_cast<double>(m_count);
        std::fill(log_sum.begin(), log_sum.end(), 0.0);
        for (std::size_t m = 0; m < m_count; ++m) {
            const double* pi = probs_per_branch[m].row(i);
            for (std::size_t k = 0; k < c; ++k) {
                log_sum[k] += std::log((r[k] + epsilon) / (pi[k] + epsilon));
            }
        }
        for (std::size_t m = 0; m < m_count; ++m) {
            const double* pi = probs_per_branch[m].row(i);
            double* di = d[m].row(i);
            for (std::size_t k = 0; k < c; ++k) {
                const double direct = -r[k] / (pi[k] + epsilon);
                const double via_r = r[k] / (r[k] + epsilon) +
                                     log_sum[k] / static_cast<double>(m_count);
                di[k] = inv_mn * (direct + via_r);
            }
        }
    }
    return d;
}

namespace {

// dL/dp for the joint objective (task + lambda * coreg)
std::vector<Mat> joint_dprobs(const std::vector<Mat>& probs,
                              const std::vector<int>& labels, double lambda,
                              double epsilon) {
    const std::size_t m_count = probs.size();
    const std::size_t n = probs.front().rows;
    const std::size_t c = probs.front().cols;
    const double inv_mn = 1.0 / (static_cast<double>(m_count) * static_cast<double>(n));

    std::vector<Mat> d(m_count, Mat(n, c));
    for (std::size_t m = 0; m < m_count; ++m) {
        for (std::size_t i = 0; i < n; ++i) {
            const auto y = static_cast<std::size_t>(labels[i]);
            d[m](i, y) -= inv_mn / std::max(probs[m](i, y), 1e-300);
        }
    }
    if (lambda != 0.0) {
        const auto d_cr = coreg_loss_dprobs(probs, epsilon);
        for (std::size_t m = 0; m < m_count; ++m) {
            for (std::size_t idx = 0; idx < d[m].data.size(); ++idx) {
                d[m].data[idx] += lambda * d_cr[m].data[idx];
            }
        }
    }
    return d;
}

struct TrainForward {
    Mat embedding;
    Mat logits;
    Mat probs;
};

TrainForward forward_cached(Stage1Model& model, const Mat& x) {
    TrainForward f;
    f.embedding = model.encoder.forward(x);
    f.logits = model.head.forward(f.embedding);
    f.probs = softmax_rows(f.logits);
    return f;
}

} // namespace

double stage1_batch_loss_grad(std::vector<Stage1Model>& branches, const Mat& x,
                              const std::vector<int>& labels, double lambda,
                              double epsilon) {
    std::vector<TrainForward> fwd;
    fwd.reserve(branches.size());
    std::vector<Mat> probs;
    probs.reserve(branches.size());
    for (auto& b : branches) {
        fwd.push_back(forward_cached(b, x));
        probs.push_back(fwd.back().probs);
    }
    double loss = task_loss_stage1(probs, labels);
    if (lambda != 0.0) loss += lambda * coreg_loss(probs, epsilon);

    const auto d_probs = joint_dprobs(probs, labels, lambda, epsilon);
    for (std::size_t m = 0; m < branches.size(); ++m) {
        const Mat d_logits = softmax_backward(d_probs[m], fwd[m].probs);
        const Mat d_emb = branches[m].head.backward(d_logits);
        branches[m].encoder.backward(d_emb);
    }
    return loss;
}

double stage1_batch_loss(const std::vector<Stage1Model>& branches, const Mat& x,
                         const std::vector<int>& labels, double lambda, double epsilon) {
    std::vector<Mat> probs;
    probs.reserve(branches.size());
    for (const auto& b : branches) probs.push_back(b.forward(x).probs);
    double loss = task_loss_stage1(probs, labels);
    if (lambda != 0.0) loss += lambda * coreg_loss(probs, epsilon);
    return loss;
}

Stage1Result train_stage1(const Dataset& train, const Stage1Config& cfg,
                          const Mat* aux_features) {
    cfg.validate();
    train.validate();

    const std::size_t n = train.size();
    const std::size_t d_in = train.feature_dim();
    const auto classes = static_cast<std::size_t>(train.label_space.num_classes);
    const Mat x_all = train.feature_matrix();
    const std::vector<int> labels = train.noisy_labels();

    Stage1Result result;
    result.store.init(n, cfg.embed_dim, cfg.epochs, cfg.num_branches, classes,
                      cfg.master_seed, cfg.hash());
    if (aux_features != nullptr) {
        if (aux_features->cols != d_in) {
            throw InputError("auxiliary features have the wrong dimension");
        }
        result.has_aux = true;
        result.aux_store.init(aux_features->rows, cfg.embed_dim, cfg.epochs,
                              cfg.num_branches, classes, cfg.master_seed, cfg.hash());
    }

    // Branch diversity comes from initialization: branch m draws its
    // parameters from seed master_seed + m (1-based m).
    result.branches.reserve(cfg.num_branches);
    std::vector<AdamOptimizer> opt_enc, opt_head;
    for (std::size_t m = 0; m < cfg.num_branches; ++m) {
        Rng init_rng(cfg.master_seed + m + 1);
        result.branches.emplace_back(d_in, cfg.hidden_dim, cfg.embed_dim, classes, init_rng);
        opt_enc.emplace_back(result.branches.back().encoder.num_params(), cfg.learning_rate);
        opt_head.emplace_back(result.branches.back().head.num_params(), cfg.learning_rate);
    }

    // One shuffle stream drives batch composition; the co-regularization
    // consensus requires every branch to see the same batch.
    Rng shuffle_rng(cfg.master_seed);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    const std::size_t warmup = warmup_steps(cfg.warmup_fraction, cfg.epochs);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lambda = epoch < warmup ? 0.0 : cfg.coreg_weight;
        shuffle_rng.shuffle(order);

        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t stop = std::min(start + cfg.batch_size, n);
            const std::size_t rows = stop - start;
            Mat xb(rows, d_in);
            std::vector<int> yb(rows);
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t i = order[start + r];
                for (std::size_t j = 0; j < d_in; ++j) xb(r, j) = x_all(i, j);
                yb[r] = labels[i];
            }
            for (auto& b : result.branches) {
                b.encoder.zero_grad();
                b.head.zero_grad();
            }
            const double loss =
                stage1_batch_loss_grad(result.branches, xb, yb, lambda, cfg.epsilon);
            if (!std::isfinite(loss)) {
                throw TrainingDivergenceError(
                    "stage1 loss non-finite at epoch " + std::to_string(epoch) +
                    ", batch offset " + std::to_string(start));
            }
            for (std::size_t m = 0; m < cfg.num_branches; ++m) {
                opt_enc[m].step(result.branches[m].encoder.params(),
                                result.branches[m].encoder.grads());
                opt_head[m].step(result.branches[m].head.params(),
                                 result.branches[m].head.grads());
            }
        }

        // epoch-end snapshot: embeddings of all training instances
        for (std::size_t m = 0; m < cfg.num_branches; ++m) {
            const Mat emb = result.branches[m].encoder.forward_const(x_all);
            std::vector<float> buf(emb.data.size());
            for (std::size_t i = 0; i < buf.size(); ++i) {
                buf[i] = static_cast<float>(emb.data[i]);
            }
            result.store.append_epoch(m, epoch, std::move(buf));

            if (epoch + 1 == cfg.epochs) {
                const Mat probs = softmax_rows(result.branches[m].head.forward_const(emb));
                std::vector<float> pbuf(probs.data.size());
                for (std::size_t i = 0; i < pbuf.size(); ++i) {
                    pbuf[i] = static_cast<float>(probs.data[i]);
                }
                result.store.set_predictions(m, std::move(pbuf));
            }

            if (result.has_aux) {
                const Mat aux_emb = result.branches[m].encoder.forward_const(*aux_features);
                std::vector<float> abuf(aux_emb.data.size());
                for (std::size_t i = 0; i < abuf.size(); ++i) {
                    abuf[i] = static_cast<float>(aux_emb.data[i]);
                }
                result.aux_store.append_epoch(m, epoch, std::move(abuf));
            }
        }
    }
    return result;
}

Vec build_trajectory(const TrajectoryStore& store, std::size_t instance, std::size_t branch,
                     TrajectoryMode mode, const CentroidTable* centroids,
                     const std::vector<int>* labels) {
    store.require_complete();
    if (instance >= store.n || branch >= store.branches) {
        throw InputError("instance or branch index out of range");
    }
    if (mode == TrajectoryMode::concat_embeddings) {
        Vec w(store.epochs * store.embed_dim);
        for (std::size_t e = 0; e < store.epochs; ++e) {
            const float* h = store.embedding(branch, e, instance);
            for (std::size_t j = 0; j < store.embed_dim; ++j) {
                w[e * store.embed_dim + j] = static_cast<double>(h[j]);
            }
        }
        return w;
    }
    if (centroids == nullptr || labels == nullptr) {
        throw InputError("distance_vector trajectories need centroids and labels");
    }
    Vec w(store.epochs);
    for (std::size_t e = 0; e < store.epochs; ++e) {
        w[e] = epoch_distance(store, *centroids, branch, e, instance, (*labels)[instance]);
    }
    return w;
}

} // namespace dygen
