#include "dygen/stage1.hpp"

#include "dygen/errors.hpp"
#include "dygen/synthetic.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace dygen;

namespace {

Dataset small_data(std::size_t n, std::uint64_t seed) {
    SyntheticSpec spec;
    spec.n = n;
    spec.num_classes = 4;
    spec.dim = 16;
    spec.seed = seed;
    return make_gaussian_mixture(spec);
}

Stage1Config tiny_config() {
    Stage1Config cfg;
    cfg.num_branches = 2;
    cfg.epochs = 2;
    cfg.batch_size = 32;
    cfg.hidden_dim = 8;
    cfg.embed_dim = 5;
    cfg.master_seed = 77;
    return cfg;
}

} // namespace

TEST_CASE("warm-up boundary arithmetic") {
    CHECK(warmup_steps(0.2, 10) == 2);  // epochs 0,1 warm up
    CHECK(warmup_steps(0.0, 10) == 0);
    CHECK(warmup_steps(0.15, 10) == 2); // ceil(1.5)
    CHECK(warmup_steps(0.2, 1) == 1);   // T=1: the single iteration warms up
    CHECK(warmup_steps(0.95, 10) == 10);
    CHECK(warmup_steps(0.2, 5) == 1);   // exactly 1.0
}

TEST_CASE("branch forward produces simplex rows and the pre-head embedding") {
    Rng rng(5);
    Stage1Model model(4, 8, 3, 5, rng);
    Mat x(6, 4);
    for (auto& v : x.data) v = rng.normal();
    const auto out = model.forward(x);
    CHECK(out.embedding.cols == 3);
    CHECK(out.probs.cols == 5);
    for (std::size_t i = 0; i < 6; ++i) {
        double sum = 0.0;
        for (std::size_t k = 0; k < 5; ++k) sum += out.probs(i, k);
        CHECK(std::abs(sum - 1.0) <= 1e-6);
    }
    // deterministic for fixed parameters
    const auto again = model.forward(x);
    CHECK(again.probs.data == out.probs.data);
    CHECK(again.embedding.data == out.embedding.data);
}

TEST_CASE("zero head yields uniform probabilities") {
    Rng rng(5);
    Stage1Model model(4, 8, 3, 5, rng);
    std::fill(model.head.params().begin(), model.head.params().end(), 0.0);
    Mat x(1, 4);
    x.data = {1.0, -2.0, 0.5, 3.0};
    const auto out = model.forward(x);
    for (std::size_t k = 0; k < 5; ++k) {
        CHECK(out.probs(0, k) == doctest::Approx(0.2).epsilon(1e-12));
    }
}

TEST_CASE("dimension mismatch raises an input error") {
    Rng rng(5);
    Stage1Model model(4, 8, 3, 5, rng);
    Mat x(1, 7);
    CHECK_THROWS_AS(model.forward(x), InputError);
}

TEST_CASE("consensus is the elementwise mean") {
    CHECK(consensus({{1.0, 0.0}, {0.0, 1.0}}) == Vec{0.5, 0.5});
    const Vec p = {0.2, 0.3, 0.5};
    const Vec r = consensus({p, p, p});
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(r[k] == doctest::Approx(p[k]).epsilon(1e-15));
    }
    CHECK_THROWS_AS(consensus({{0.5, 0.5}, {0.2, 0.3, 0.5}}), InputError);
}

TEST_CASE("coreg loss is zero iff the branch distributions are identical") {
    Mat p(3, 4);
    Rng rng(2);
    for (std::size_t i = 0; i < 3; ++i) {
        double sum = 0.0;
        for (std::size_t k = 0; k < 4; ++k) {
            p(i, k) = rng.uniform();
            sum += p(i, k);
        }
        for (std::size_t k = 0; k < 4; ++k) p(i, k) /= sum;
    }
    CHECK(std::abs(coreg_loss({p, p, p}, 1e-8)) <= 1e-9);

    // any disagreement beyond the epsilon scale makes it strictly positive
    Mat q = p;
    q(0, 0) += 0.05;
    q(0, 1) -= 0.05;
    CHECK(coreg_loss({p, q}, 1e-8) > 1e-6);
}

TEST_CASE("coreg loss reproduces the hand-derived value") {
    // N=1, M=2, c=2, p1=(0.8,0.2), p2=(0.6,0.4), eps=1e-8:
    // r=(0.7,0.3); value = 0.5*[0.7 ln(.7/.8)+0.3 ln(.3/.2)
    //                          +0.7 ln(.7/.6)+0.3 ln(.3/.4)]
    const double expected =
        0.5 * (0.7 * std::log((0.7 + 1e-8) / (0.8 + 1e-8)) +
               0.3 * std::log((0.3 + 1e-8) / (0.2 + 1e-8)) +
               0.7 * std::log((0.7 + 1e-8) / (0.6 + 1e-8)) +
               0.3 * std::log((0.3 + 1e-8) / (0.4 + 1e-8)));
    CHECK(expected == doctest::Approx(0.02489).epsilon(2e-4));
    const double got = coreg_loss(std::vector<Vec>{{0.8, 0.2}, {0.6, 0.4}}, 1e-8);
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("coreg loss is nonnegative on random draws") {
    Rng rng(33);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<Mat> branches;
        for (int m = 0; m < 3; ++m) {
            Mat p(2, 3);
            for (std::size_t i = 0; i < 2; ++i) {
                double sum = 0.0;
                for (std::size_t k = 0; k < 3; ++k) {
                    p(i, k) = rng.uniform();
                    sum += p(i, k);
                }
                for (std::size_t k = 0; k < 3; ++k) p(i, k) /= sum;
            }
            branches.push_back(std::move(p));
        }
        CHECK(coreg_loss(branches, 1e-8) >= -1e-9);
    }
}

TEST_CASE("task loss hits the analytic values") {
    Mat exact(1, 4);
    exact.data = {1.0 - 1e-12, 1e-12 / 3, 1e-12 / 3, 1e-12 / 3};
    CHECK(task_loss_stage1({exact}, {0}) == doctest::Approx(0.0).epsilon(1e-9));

    Mat uniform(1, 4, 0.25);
    CHECK(task_loss_stage1({uniform}, {2}) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-12));

    // M identical branches equal the single-branch loss
    Mat p(2, 4);
    p.data = {0.7, 0.1, 0.1, 0.1, 0.25, 0.25, 0.4, 0.1};
    const double single = task_loss_stage1({p}, {0, 2});
    CHECK(task_loss_stage1({p, p, p}, {0, 2}) == doctest::Approx(single).epsilon(1e-12));

    CHECK_THROWS_AS(task_loss_stage1({p}, {0, 9}), LabelRangeError);
}

TEST_CASE("joint stage1 gradient matches central finite differences") {
    // tiny model per the contract: d_in=4, d=3, c=3, M=2
    const std::size_t n = 6;
    Rng data_rng(123);
    Mat x(n, 4);
    for (auto& v : x.data) v = data_rng.normal();
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<int>(data_rng.uniform_int(3));
    }

    const double lambda = 5.0;
    const double eps = 1e-8;
    const double h = 1e-6;

    for (int point = 0; point < 20; ++point) {
        std::vector<Stage1Model> branches;
        for (int m = 0; m < 2; ++m) {
            Rng rng(1000 + point * 10 + m);
            branches.emplace_back(4, 4, 3, 3, rng);
        }
        for (auto& b : branches) {
            b.encoder.zero_grad();
            b.head.zero_grad();
        }
        stage1_batch_loss_grad(branches, x, labels, lambda, eps);

        // finite differences over a strided subset of all parameters
        double num = 0.0, den = 0.0;
        for (auto& b : branches) {
            for (Mlp* net : {&b.encoder, &b.head}) {
                Vec& params = net->params();
                const Vec& grads = net->grads();
                for (std::size_t idx = 0; idx < params.size(); idx += 5) {
                    const double saved = params[idx];
                    params[idx] = saved + h;
                    const double up = stage1_batch_loss(branches, x, labels, lambda, eps);
                    params[idx] = saved - h;
                    const double down = stage1_batch_loss(branches, x, labels, lambda, eps);
                    params[idx] = saved;
                    const double fd = (up - down) / (2 * h);
                    num += (fd - grads[idx]) * (fd - grads[idx]);
                    den += fd * fd;
                }
            }
        }
        CHECK(std::sqrt(num) <= 1e-3 * std::max(std::sqrt(den), 1e-12));
    }
}

TEST_CASE("one epoch fills the store with exactly 1 x M x n embeddings") {
    const Dataset d = small_data(60, 21);
    Stage1Config cfg = tiny_config();
    cfg.epochs = 1;
    const Stage1Result r = train_stage1(d, cfg);
    r.store.require_complete();
    CHECK(r.store.epochs == 1);
    CHECK(r.store.embeddings.size() == cfg.num_branches);
    for (const auto& branch : r.store.embeddings) {
        REQUIRE(branch.size() == 1);
        CHECK(branch[0].size() == 60 * cfg.embed_dim);
    }
}

TEST_CASE("warm-up covering all epochs equals independent training") {
    const Dataset d = small_data(80, 22);
    Stage1Config cfg = tiny_config();
    cfg.epochs = 2;
    cfg.warmup_fraction = 0.95; // ceil(1.9) = 2 epochs of warm-up
    cfg.coreg_weight = 5.0;
    const Stage1Result with_warmup = train_stage1(d, cfg);

    Stage1Config zero = cfg;
    zero.warmup_fraction = 0.0;
    zero.coreg_weight = 0.0; // lambda never applied
    const Stage1Result independent = train_stage1(d, zero);

    for (std::size_t m = 0; m < cfg.num_branches; ++m) {
        CHECK(with_warmup.branches[m].encoder.params() ==
              independent.branches[m].encoder.params());
        CHECK(with_warmup.branches[m].head.params() ==
              independent.branches[m].head.params());
    }
}

TEST_CASE("same master seed twice gives a bit-identical store") {
    const Dataset d = small_data(70, 23);
    const Stage1Config cfg = tiny_config();
    const Stage1Result a = train_stage1(d, cfg);
    const Stage1Result b = train_stage1(d, cfg);
    for (std::size_t m = 0; m < cfg.num_branches; ++m) {
        for (std::size_t e = 0; e < cfg.epochs; ++e) {
            CHECK(a.store.embeddings[m][e] == b.store.embeddings[m][e]);
        }
        CHECK(a.store.predictions[m] == b.store.predictions[m]);
    }
}

TEST_CASE("store round-trips through its on-disk format bit-exactly") {
    const Dataset d = small_data(30, 24);
    const Stage1Result r = train_stage1(d, tiny_config());
    const auto dir =
        (std::filesystem::temp_directory_path() / "dygen_tests" / "store_rt").string();
    r.store.save(dir);
    const TrajectoryStore loaded = TrajectoryStore::load(dir);
    CHECK(loaded.n == r.store.n);
    CHECK(loaded.embed_dim == r.store.embed_dim);
    CHECK(loaded.config_hash == r.store.config_hash);
    for (std::size_t m = 0; m < r.store.branches; ++m) {
        for (std::size_t e = 0; e < r.store.epochs; ++e) {
            CHECK(loaded.embeddings[m][e] == r.store.embeddings[m][e]);
        }
        CHECK(loaded.predictions[m] == r.store.predictions[m]);
    }
}

TEST_CASE("trajectory layout: epoch blocks in order, distances match dynamics") {
    const Dataset d = small_data(40, 25);
    Stage1Config cfg = tiny_config();
    cfg.epochs = 2;
    cfg.embed_dim = 3;
    const Stage1Result r = train_stage1(d, cfg);

    const Vec w = build_trajectory(r.store, 7, 1, TrajectoryMode::concat_embeddings);
    REQUIRE(w.size() == 6);
    for (std::size_t e = 0; e < 2; ++e) {
        const float* h = r.store.embedding(1, e, 7);
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(w[e * 3 + j] == static_cast<double>(h[j]));
        }
    }

    const auto labels = d.noisy_labels();
    const CentroidTable centroids = compute_centroids(r.store, labels, 1);
    const DynamicsStats stats = compute_stats(r.store, centroids, labels, 1);
    const Vec dist =
        build_trajectory(r.store, 7, 1, TrajectoryMode::distance_vector, &centroids, &labels);
    REQUIRE(dist.size() == 2);
    const double mu = 0.5 * (dist[0] + dist[1]);
    CHECK(mu == doctest::Approx(stats.mu[7]).epsilon(1e-12));
}

TEST_CASE("auxiliary features get epoch-aligned trajectories without touching training") {
    const Dataset d = small_data(50, 26);
    const Dataset held_out = small_data(20, 27);
    const Mat aux = held_out.feature_matrix();
    const Stage1Config cfg = tiny_config();

    const Stage1Result with_aux = train_stage1(d, cfg, &aux);
    REQUIRE(with_aux.has_aux);
    with_aux.aux_store.require_complete();
    CHECK(with_aux.aux_store.n == 20);
    CHECK(with_aux.aux_store.epochs == cfg.epochs);
    CHECK(with_aux.aux_store.branches == cfg.num_branches);

    // recording auxiliary embeddings must not perturb training itself
    const Stage1Result plain = train_stage1(d, cfg);
    CHECK_FALSE(plain.has_aux);
    for (std::size_t m = 0; m < cfg.num_branches; ++m) {
        CHECK(plain.store.embeddings[m] == with_aux.store.embeddings[m]);
        CHECK(plain.branches[m].encoder.params() == with_aux.branches[m].encoder.params());
    }

    // aux snapshots equal a fresh forward pass through the final encoder
    const Mat final_emb = with_aux.branches[0].encoder.forward_const(aux);
    const float* stored = with_aux.aux_store.embedding(0, cfg.epochs - 1, 5);
    for (std::size_t j = 0; j < cfg.embed_dim; ++j) {
        CHECK(stored[j] == static_cast<float>(final_emb(5, j)));
    }
}

TEST_CASE("incomplete store is rejected") {
    TrajectoryStore store;
    store.init(4, 2, 3, 1, 2, 0, "x");
    store.append_epoch(0, 0, std::vector<float>(8, 0.0f));
    CHECK_THROWS_AS(
        build_trajectory(store, 0, 0, TrajectoryMode::concat_embeddings),
        StoreIntegrityError);
}
