#pragma once

#include "dygen/mat.hpp"
#include "dygen/net.hpp"
#include "dygen/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace dygen {

enum class YhatSource { branch_prediction, noisy_label };

const char* to_string(YhatSource src);

/// Which form the Dirichlet prior regularizer of the ELBO takes: the
/// per-component form (default) or the exact Dirichlet KL including the
/// log-gamma-of-sum terms.
enum class RegularizerForm { per_component, exact_kl };

struct Stage2Config {
    std::size_t iterations = 10;   // T: passes over the training set
    double coreg_weight = 1.0;     // lambda_2
    double warmup_fraction = 0.2;  // gamma, shared semantics with stage I
    double epsilon = 1e-8;
    double alpha_floor = 1.001;
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;
    std::size_t hidden_dim = 128;
    std::uint64_t seed = 0;
    YhatSource yhat_source = YhatSource::branch_prediction;
    RegularizerForm regularizer = RegularizerForm::per_component;

    void validate() const;
    std::string hash() const;
};

/// Encoder q(y | yhat, w) producing Dirichlet concentrations, and decoder
/// p(yhat | y, w) producing per-class Bernoulli probabilities.
class GenerativeBranch {
public:
    GenerativeBranch() = default;
    GenerativeBranch(std::size_t w_dim, std::size_t num_classes, std::size_t hidden,
                     double alpha_floor, Rng& rng);

    /// alpha_hat rows, strictly above alpha_floor.
    Mat encode(const Mat& w, const Mat& yhat_onehot) const;
    Vec encode(const Vec& w, const Vec& yhat_onehot) const;

    /// Reconstruction probabilities in (0,1), elementwise logistic.
    Mat decode(const Mat& y, const Mat& w) const;
    Vec decode(const Vec& y, const Vec& w) const;

    std::size_t w_dim() const { return w_dim_; }
    std::size_t num_classes() const { return num_classes_; }
    std::size_t hidden_dim() const { return hidden_; }
    double alpha_floor() const { return alpha_floor_; }

    Mlp& encoder_net() { return encoder_; }
    const Mlp& encoder_net() const { return encoder_; }
    Mlp& decoder_net() { return decoder_; }
    const Mlp& decoder_net() const { return decoder_; }

    /// Versioned binary: magic + JSON header + raw f64 parameter blocks.
    void save(const std::string& path, const std::string& config_hash = "") const;
    static GenerativeBranch load(const std::string& path);

private:
    std::size_t w_dim_ = 0;
    std::size_t num_classes_ = 0;
    std::size_t hidden_ = 0;
    double alpha_floor_ = 1.001;
    Mlp encoder_; // (w_dim + c) -> hidden -> c
    Mlp decoder_; // (c + w_dim) -> hidden -> c
};

/// Positive transform applied to encoder pre-activations:
/// alpha = floor + softplus(min(z, 30)).
double alpha_transform(double preact, double floor);
/// d(alpha)/d(preact).
double alpha_transform_grad(double preact);

/// Reparameterized Dirichlet draw. Each concentration a is decomposed as
/// floor(a) unit-exponential draws plus a Gamma(frac(a)) draw taken from
/// the inverse-CDF approximation, so integer concentrations sample
/// exactly and the path stays differentiable in a.
struct DirichletSample {
    Vec y;     // simplex
    Vec z;     // per-component gamma draws
    Vec lng;   // log of the fractional gamma component
    Vec frac;  // fractional parts
    double z_sum = 0.0;
    bool shifted = false; // log-domain normalization path (all a < 1)
};

DirichletSample sample_dirichlet_detail(const Vec& alpha, Rng& rng);
Vec sample_dirichlet(const Vec& alpha, Rng& rng);

/// Pathwise dL/dalpha from dL/dy for a sample produced above. Only valid
/// for the unshifted path (some component >= 1, always true in training
/// where alpha > alpha_floor > 1).
Vec dirichlet_sample_backward(const DirichletSample& sample, const Vec& d_y);

/// Evidence lower bound for one instance: Bernoulli reconstruction of the
/// one-hot yhat plus the Dirichlet prior regularizer.
double elbo(const Vec& yhat_onehot, const Vec& y_star, const Vec& alpha_prior,
            const Vec& alpha_hat, RegularizerForm form = RegularizerForm::per_component);

/// The prior-regularizer term of the ELBO alone; zero when
/// alpha_hat == alpha_prior under either form.
double elbo_prior_regularizer(const Vec& alpha_prior, const Vec& alpha_hat,
                              RegularizerForm form = RegularizerForm::per_component);

/// d(elbo)/d(alpha_hat), the regularizer path only (reconstruction flows
/// through the decoder and sampler separately).
Vec elbo_regularizer_grad(const Vec& alpha_prior, const Vec& alpha_hat,
                          RegularizerForm form = RegularizerForm::per_component);

/// Mode of Dirichlet(alpha): (a_k - 1) / (sum a - c), after clamping every
/// component up to `floor`. Throws DegeneratePosteriorError when the
/// clamped sum does not exceed c.
Vec posterior_mode(const Vec& alpha, double floor = 1.001);

/// Co-regularization across branch posterior summaries; identical
/// functional form to the Stage-I loss (defined in stage1.hpp), applied to
/// the branch posterior modes.
double coreg_loss_stage2(const std::vector<Mat>& posterior_modes_per_branch, double epsilon);

/// Everything one branch trains on: its own trajectories, its own
/// reconstruction targets, its own prior.
struct Stage2Inputs {
    Mat w;            // n x w_dim
    std::vector<int> yhat; // class index per instance
    Mat alpha_prior;  // n x c
};

std::vector<GenerativeBranch> train_stage2(const std::vector<Stage2Inputs>& inputs,
                                           const Stage2Config& cfg);

/// Joint stage-II objective on one batch with gradients accumulated into
/// the branches; exposed for finite-difference checks. Branch m consumes
/// `mc_samples` Dirichlet draws per instance from rngs[m], so branches
/// remain stream-independent when the co-regularization weight is zero.
double stage2_batch_loss_grad(std::vector<GenerativeBranch>& branches,
                              const std::vector<Stage2Inputs>& inputs,
                              const std::vector<std::size_t>& batch_ids, double lambda,
                              const Stage2Config& cfg, std::vector<Rng>& rngs,
                              std::size_t mc_samples);

/// Loss-only twin of the above (same draw sequence given the same rng
/// states), for common-random-number finite differences.
double stage2_batch_loss(const std::vector<GenerativeBranch>& branches,
                         const std::vector<Stage2Inputs>& inputs,
                         const std::vector<std::size_t>& batch_ids, double lambda,
                         const Stage2Config& cfg, std::vector<Rng>& rngs,
                         std::size_t mc_samples);

} // namespace dygen
