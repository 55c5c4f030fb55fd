#include "dygen/experiment.hpp"

#include "dygen/errors.hpp"
#include "dygen/hash.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

namespace dygen {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kNoiseSeedOffset = 1000003;
constexpr std::uint64_t kStage2SeedOffset = 2000003;

} // namespace

std::string AblationToggles::name() const {
    std::string s = "I";
    s += stage1_coreg ? '1' : '0';
    s += "_P";
    s += dynamics_prior ? '1' : '0';
    s += "_II";
    s += stage2_coreg ? '1' : '0';
    return s;
}

std::vector<AblationToggles> all_toggle_combinations() {
    std::vector<AblationToggles> out;
    for (int i = 0; i < 8; ++i) {
        AblationToggles t;
        t.stage1_coreg = (i & 4) != 0;
        t.dynamics_prior = (i & 2) != 0;
        t.stage2_coreg = (i & 1) != 0;
        out.push_back(t);
    }
    return out;
}

void ExperimentConfig::validate() const {
    if (data.num_classes < 2) throw ConfigError("data.num_classes must be at least 2");
    const bool explicit_files = !data.train_path.empty() && !data.test_path.empty();
    const bool single = !data.single_path.empty();
    if (explicit_files == single) {
        throw ConfigError("configure either train/test paths or a single path with ratios");
    }
    stage1.validate();
    stage2.validate();
    if (beta_mode == BetaMode::fixed) prior.validate();
    if (num_seeds == 0) throw ConfigError("num_seeds must be positive");
    if (workers == 0) throw ConfigError("workers must be positive");
    if (inject_noise) noise.validate(data.num_classes);
    if (inference_mode == InferenceMode::per_instance &&
        trajectory_mode != TrajectoryMode::concat_embeddings) {
        throw ConfigError("per_instance inference needs concat_embeddings trajectories; "
                          "distance trajectories are label-conditioned and undefined for "
                          "test instances");
    }
}

namespace {

const char* beta_mode_name(BetaMode m) {
    switch (m) {
        case BetaMode::provenance: return "provenance";
        case BetaMode::fixed: return "fixed";
        case BetaMode::estimate: return "estimate";
    }
    return "?";
}

json stage1_to_json(const Stage1Config& c) {
    json j;
    j["branches"] = c.num_branches;
    j["epochs"] = c.epochs;
    j["warmup_fraction"] = c.warmup_fraction;
    j["coreg_weight"] = c.coreg_weight;
    j["epsilon"] = c.epsilon;
    j["learning_rate"] = c.learning_rate;
    j["batch_size"] = c.batch_size;
    j["hidden_dim"] = c.hidden_dim;
    j["embed_dim"] = c.embed_dim;
    return j;
}

json stage2_to_json(const Stage2Config& c) {
    json j;
    j["iterations"] = c.iterations;
    j["coreg_weight"] = c.coreg_weight;
    j["warmup_fraction"] = c.warmup_fraction;
    j["epsilon"] = c.epsilon;
    j["alpha_floor"] = c.alpha_floor;
    j["learning_rate"] = c.learning_rate;
    j["batch_size"] = c.batch_size;
    j["hidden_dim"] = c.hidden_dim;
    j["yhat_source"] = to_string(c.yhat_source);
    j["regularizer"] =
        c.regularizer == RegularizerForm::per_component ? "per_component" : "exact_kl";
    return j;
}

json bins_to_json(const std::vector<EceBin>& bins) {
    json arr = json::array();
    for (const auto& b : bins) {
        json e;
        e["count"] = b.count;
        e["mean_confidence"] = b.mean_confidence;
        e["mean_accuracy"] = b.mean_accuracy;
        arr.push_back(e);
    }
    return arr;
}

std::vector<EceBin> bins_from_json(const json& arr) {
    std::vector<EceBin> bins;
    for (const auto& e : arr) {
        EceBin b;
        b.count = e.at("count").get<std::size_t>();
        b.mean_confidence = e.at("mean_confidence").get<double>();
        b.mean_accuracy = e.at("mean_accuracy").get<double>();
        bins.push_back(b);
    }
    return bins;
}

json report_to_json(const EvalReport& r) {
    json j;
    j["accuracy"] = r.accuracy;
    j["ece"] = r.ece;
    j["bins"] = bins_to_json(r.bins);
    return j;
}

EvalReport report_from_json(const json& j) {
    EvalReport r;
    r.accuracy = j.at("accuracy").get<double>();
    r.ece = j.at("ece").get<double>();
    r.bins = bins_from_json(j.at("bins"));
    return r;
}

} // namespace

nlohmann::json ExperimentConfig::snapshot() const {
    json j;
    json d;
    d["train"] = data.train_path;
    d["dev"] = data.dev_path;
    d["test"] = data.test_path;
    d["single"] = data.single_path;
    d["format"] = data.format == FileFormat::jsonl ? "jsonl" : "csv";
    d["num_classes"] = data.num_classes;
    d["ratios"] = {data.ratios.train, data.ratios.dev, data.ratios.test};
    d["split_seed"] = data.split_seed;
    j["data"] = d;

    if (inject_noise) {
        json nz;
        nz["kind"] = to_string(noise.kind);
        nz["ratio"] = noise.ratio;
        nz["idn_std"] = noise.idn_std;
        if (!noise.asym_pairing.empty()) nz["pairing"] = noise.asym_pairing;
        j["noise"] = nz;
    }

    j["stage1"] = stage1_to_json(stage1);

    json pr;
    pr["beta_mode"] = beta_mode_name(beta_mode);
    pr["beta"] = prior.beta;
    pr["k_neighbors"] = prior.k_neighbors;
    pr["delta"] = prior.delta;
    pr["rho"] = prior.rho;
    pr["reference"] = to_string(prior.reference);
    j["prior"] = pr;

    j["stage2"] = stage2_to_json(stage2);

    json ab;
    ab["stage1_coreg"] = toggles.stage1_coreg;
    ab["dynamics_prior"] = toggles.dynamics_prior;
    ab["stage2_coreg"] = toggles.stage2_coreg;
    j["ablation"] = ab;

    j["trajectory_mode"] = trajectory_mode == TrajectoryMode::concat_embeddings
                               ? "concat_embeddings"
                               : "distance_vector";
    j["inference_mode"] =
        inference_mode == InferenceMode::per_instance ? "per_instance" : "aggregated_h";
    j["master_seed"] = master_seed;
    j["num_seeds"] = num_seeds;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig cfg;

    const json d = j.value("data", json::object());
    cfg.data.train_path = d.value("train", "");
    cfg.data.dev_path = d.value("dev", "");
    cfg.data.test_path = d.value("test", "");
    cfg.data.single_path = d.value("single", "");
    cfg.data.format = parse_format(d.value("format", "jsonl"));
    cfg.data.num_classes = d.value("num_classes", 0);
    if (d.contains("ratios")) {
        const auto r = d["ratios"].get<std::vector<double>>();
        if (r.size() != 3) throw ConfigError("data.ratios must have 3 entries");
        cfg.data.ratios = {r[0], r[1], r[2]};
    }
    cfg.data.split_seed = d.value("split_seed", std::uint64_t(0));

    cfg.inject_noise = j.contains("noise");
    if (cfg.inject_noise) {
        const json nz = j["noise"];
        cfg.noise.kind = parse_noise_kind(nz.value("kind", "symmetric"));
        cfg.noise.ratio = nz.value("ratio", 0.0);
        cfg.noise.idn_std = nz.value("idn_std", 0.1);
        if (nz.contains("pairing")) {
            cfg.noise.asym_pairing = nz["pairing"].get<std::vector<int>>();
        }
    }

    const json s1 = j.value("stage1", json::object());
    cfg.stage1.num_branches = s1.value("branches", std::size_t(3));
    cfg.stage1.epochs = s1.value("epochs", std::size_t(10));
    cfg.stage1.warmup_fraction = s1.value("warmup_fraction", 0.2);
    cfg.stage1.coreg_weight = s1.value("coreg_weight", 5.0);
    cfg.stage1.epsilon = s1.value("epsilon", 1e-8);
    cfg.stage1.learning_rate = s1.value("learning_rate", 1e-3);
    cfg.stage1.batch_size = s1.value("batch_size", std::size_t(64));
    cfg.stage1.hidden_dim = s1.value("hidden_dim", std::size_t(64));
    cfg.stage1.embed_dim = s1.value("embed_dim", std::size_t(32));

    const json pr = j.value("prior", json::object());
    if (pr.contains("beta_mode")) {
        const auto mode = pr["beta_mode"].get<std::string>();
        if (mode == "provenance") {
            cfg.beta_mode = BetaMode::provenance;
        } else if (mode == "fixed") {
            cfg.beta_mode = BetaMode::fixed;
        } else if (mode == "estimate") {
            cfg.beta_mode = BetaMode::estimate;
        } else {
            throw ConfigError("unknown prior.beta_mode '" + mode + "'");
        }
        if (pr.contains("beta") && pr["beta"].is_number()) {
            cfg.prior.beta = pr["beta"].get<double>();
        }
    } else if (pr.contains("beta") && pr["beta"].is_number()) {
        cfg.beta_mode = BetaMode::fixed;
        cfg.prior.beta = pr["beta"].get<double>();
    } else {
        const std::string mode = pr.contains("beta") && pr["beta"].is_string()
                                     ? pr["beta"].get<std::string>()
                                     : "provenance";
        if (mode == "provenance") {
            cfg.beta_mode = BetaMode::provenance;
        } else if (mode == "estimate") {
            cfg.beta_mode = BetaMode::estimate;
        } else {
            throw ConfigError("prior.beta must be a number, 'provenance' or 'estimate'");
        }
    }
    cfg.prior.k_neighbors = pr.value("k_neighbors", std::size_t(10));
    cfg.prior.delta = pr.value("delta", 1.0);
    cfg.prior.rho = pr.value("rho", 2.0);
    const std::string ref = pr.value("reference", "final_epoch");
    if (ref == "final_epoch") {
        cfg.prior.reference = ReferenceEmbedding::final_epoch;
    } else if (ref == "epoch_mean") {
        cfg.prior.reference = ReferenceEmbedding::epoch_mean;
    } else {
        throw ConfigError("prior.reference must be final_epoch or epoch_mean");
    }

    const json s2 = j.value("stage2", json::object());
    cfg.stage2.iterations = s2.value("iterations", std::size_t(10));
    cfg.stage2.coreg_weight = s2.value("coreg_weight", 1.0);
    cfg.stage2.warmup_fraction = s2.value("warmup_fraction", 0.2);
    cfg.stage2.epsilon = s2.value("epsilon", 1e-8);
    cfg.stage2.alpha_floor = s2.value("alpha_floor", 1.001);
    cfg.stage2.learning_rate = s2.value("learning_rate", 1e-3);
    cfg.stage2.batch_size = s2.value("batch_size", std::size_t(64));
    cfg.stage2.hidden_dim = s2.value("hidden_dim", std::size_t(128));
    const std::string ysrc = s2.value("yhat_source", "branch_prediction");
    if (ysrc == "branch_prediction") {
        cfg.stage2.yhat_source = YhatSource::branch_prediction;
    } else if (ysrc == "noisy_label") {
        cfg.stage2.yhat_source = YhatSource::noisy_label;
    } else {
        throw ConfigError("stage2.yhat_source must be branch_prediction or noisy_label");
    }
    const std::string reg = s2.value("regularizer", "per_component");
    if (reg == "per_component") {
        cfg.stage2.regularizer = RegularizerForm::per_component;
    } else if (reg == "exact_kl") {
        cfg.stage2.regularizer = RegularizerForm::exact_kl;
    } else {
        throw ConfigError("stage2.regularizer must be per_component or exact_kl");
    }

    const json ab = j.value("ablation", json::object());
    cfg.toggles.stage1_coreg = ab.value("stage1_coreg", true);
    cfg.toggles.dynamics_prior = ab.value("dynamics_prior", true);
    cfg.toggles.stage2_coreg = ab.value("stage2_coreg", true);

    const std::string tm = j.value("trajectory_mode", "concat_embeddings");
    if (tm == "concat_embeddings") {
        cfg.trajectory_mode = TrajectoryMode::concat_embeddings;
    } else if (tm == "distance_vector") {
        cfg.trajectory_mode = TrajectoryMode::distance_vector;
    } else {
        throw ConfigError("trajectory_mode must be concat_embeddings or distance_vector");
    }

    const std::string im = j.value("inference_mode", "per_instance");
    if (im == "per_instance") {
        cfg.inference_mode = InferenceMode::per_instance;
    } else if (im == "aggregated_h") {
        cfg.inference_mode = InferenceMode::aggregated_h;
    } else {
        throw ConfigError("inference_mode must be per_instance or aggregated_h");
    }

    cfg.output_dir = j.value("output_dir", "out");
    cfg.master_seed = j.value("master_seed", std::uint64_t(42));
    cfg.num_seeds = j.value("num_seeds", std::size_t(1));
    cfg.workers = j.value("workers", std::size_t(1));
    cfg.persist_store = j.value("persist_store", false);
    return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return from_json(j);
}

json SeedOutcome::to_json() const {
    json j;
    j["seed"] = seed;
    j["realized_flip_fraction"] = realized_flip_fraction;
    j["beta_used"] = beta_used;
    j["base"] = report_to_json(base);
    j["dygen"] = report_to_json(dygen);
    if (has_prior_quality) {
        json pq;
        pq["n_flagged"] = prior_quality.n_flagged;
        pq["corrected_right"] = prior_quality.corrected_right;
        pq["corrected_wrong"] = prior_quality.corrected_wrong;
        pq["label_accuracy_before"] = prior_quality.label_accuracy_before;
        pq["label_accuracy_after"] = prior_quality.label_accuracy_after;
        j["prior_quality"] = pq;
    } else {
        j["prior_quality"] = nullptr;
    }
    return j;
}

SeedOutcome SeedOutcome::from_json(const json& j) {
    SeedOutcome o;
    o.seed = j.at("seed").get<std::uint64_t>();
    o.realized_flip_fraction = j.at("realized_flip_fraction").get<double>();
    o.beta_used = j.at("beta_used").get<double>();
    o.base = report_from_json(j.at("base"));
    o.dygen = report_from_json(j.at("dygen"));
    if (!j.at("prior_quality").is_null()) {
        const json pq = j["prior_quality"];
        o.prior_quality.n_flagged = pq.at("n_flagged").get<std::size_t>();
        o.prior_quality.corrected_right = pq.at("corrected_right").get<std::size_t>();
        o.prior_quality.corrected_wrong = pq.at("corrected_wrong").get<std::size_t>();
        o.prior_quality.label_accuracy_before = pq.at("label_accuracy_before").get<double>();
        o.prior_quality.label_accuracy_after = pq.at("label_accuracy_after").get<double>();
        o.has_prior_quality = true;
    }
    return o;
}

namespace {

MetricSummary summarize(const std::vector<SeedOutcome>& seeds, bool dygen_side) {
    MetricSummary s;
    const auto n = static_cast<double>(seeds.size());
    if (seeds.empty()) return s;
    for (const auto& o : seeds) {
        const EvalReport& r = dygen_side ? o.dygen : o.base;
        s.accuracy_mean += r.accuracy;
        s.ece_mean += r.ece;
    }
    s.accuracy_mean /= n;
    s.ece_mean /= n;
    for (const auto& o : seeds) {
        const EvalReport& r = dygen_side ? o.dygen : o.base;
        s.accuracy_std += (r.accuracy - s.accuracy_mean) * (r.accuracy - s.accuracy_mean);
        s.ece_std += (r.ece - s.ece_mean) * (r.ece - s.ece_mean);
    }
    s.accuracy_std = std::sqrt(s.accuracy_std / n);
    s.ece_std = std::sqrt(s.ece_std / n);
    return s;
}

json summary_to_json(const MetricSummary& s) {
    json j;
    j["accuracy_mean"] = s.accuracy_mean;
    j["accuracy_std"] = s.accuracy_std;
    j["ece_mean"] = s.ece_mean;
    j["ece_std"] = s.ece_std;
    return j;
}

MetricSummary summary_from_json(const json& j) {
    MetricSummary s;
    s.accuracy_mean = j.at("accuracy_mean").get<double>();
    s.accuracy_std = j.at("accuracy_std").get<double>();
    s.ece_mean = j.at("ece_mean").get<double>();
    s.ece_std = j.at("ece_std").get<double>();
    return s;
}

} // namespace

void ResultsArtifact::recompute_summary() {
    base_summary = summarize(seeds, false);
    dygen_summary = summarize(seeds, true);
}

std::string ResultsArtifact::to_json_string() const {
    json j;
    j["config"] = config_snapshot;
    std::ostringstream hex;
    hex << std::hex << fnv1a64(config_snapshot.dump());
    j["config_hash"] = hex.str();
    json arr = json::array();
    for (const auto& o : seeds) arr.push_back(o.to_json());
    j["seeds"] = arr;
    json summary;
    summary["base"] = summary_to_json(base_summary);
    summary["dygen"] = summary_to_json(dygen_summary);
    j["summary"] = summary;
    return j.dump(2) + "\n";
}

std::uint64_t ResultsArtifact::content_hash() const {
    return fnv1a64(to_json_string());
}

void ResultsArtifact::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write artifact '" + path + "'");
    out << to_json_string();
}

ResultsArtifact ResultsArtifact::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw PlumbingError("cannot open artifact '" + path + "'");
    json j;
    in >> j;
    ResultsArtifact a;
    a.config_snapshot = j.at("config");
    for (const auto& e : j.at("seeds")) a.seeds.push_back(SeedOutcome::from_json(e));
    a.base_summary = summary_from_json(j.at("summary").at("base"));
    a.dygen_summary = summary_from_json(j.at("summary").at("dygen"));
    return a;
}

namespace {

struct LoadedData {
    Dataset train;
    Dataset test;
};

LoadedData load_data(const ExperimentConfig& cfg) {
    LoadedData d;
    if (!cfg.data.single_path.empty()) {
        const Dataset all =
            load_dataset(cfg.data.single_path, cfg.data.format, cfg.data.num_classes);
        SplitResult split = split_dataset(all, cfg.data.ratios, cfg.data.split_seed);
        d.train = std::move(split.train);
        d.test = std::move(split.test);
    } else {
        d.train = load_dataset(cfg.data.train_path, cfg.data.format, cfg.data.num_classes);
        d.test = load_dataset(cfg.data.test_path, cfg.data.format, cfg.data.num_classes);
        d.test.split_tag = SplitTag::test;
    }
    return d;
}

template <typename F>
auto run_stage(const char* stage, std::uint64_t seed, const std::string& config_hash, F&& f) {
    try {
        return f();
    } catch (const Error&) {
        std::throw_with_nested(Error(std::string("stage '") + stage + "' failed (seed " +
                                     std::to_string(seed) + ", config " + config_hash + ")"));
    }
}

SeedOutcome run_single_seed(const ExperimentConfig& cfg, const LoadedData& data,
                            std::size_t seed_index, const std::string& config_hash) {
    const std::uint64_t seed = cfg.master_seed + seed_index;
    const fs::path seed_dir = fs::path(cfg.output_dir) / ("seed_" + std::to_string(seed_index));
    fs::create_directories(seed_dir);

    const int c = cfg.data.num_classes;
    const std::size_t n = data.train.size();
    const Mat x_train = data.train.feature_matrix();

    // labels as loaded are the clean side of injection
    const std::vector<int> clean_labels = data.train.noisy_labels();

    SeedOutcome outcome;
    outcome.seed = seed;

    // inject
    Dataset train_noisy = data.train;
    NoiseProvenance provenance;
    provenance.flipped.assign(n, 0);
    if (cfg.inject_noise) {
        NoiseSpec spec = cfg.noise;
        spec.seed = seed + kNoiseSeedOffset;
        InjectionResult inj = run_stage("inject", seed, config_hash, [&] {
            return inject(x_train, clean_labels, c, spec);
        });
        for (std::size_t i = 0; i < n; ++i) {
            train_noisy.instances[i].noisy_label = inj.noisy[i];
        }
        provenance = std::move(inj.provenance);
    }
    outcome.realized_flip_fraction = provenance.realized_flip_fraction;
    provenance.save((seed_dir / "noise_provenance.json").string());

    const std::vector<int> noisy_labels = train_noisy.noisy_labels();

    // stage I; test features ride along label-free when inference needs
    // per-instance trajectories
    const Mat x_test = data.test.feature_matrix();
    Stage1Config s1 = cfg.stage1;
    s1.master_seed = seed;
    if (!cfg.toggles.stage1_coreg) s1.coreg_weight = 0.0;
    const bool per_instance = cfg.inference_mode == InferenceMode::per_instance;
    Stage1Result stage1 = run_stage("train_stage1", seed, config_hash, [&] {
        return train_stage1(train_noisy, s1, per_instance ? &x_test : nullptr);
    });
    if (cfg.persist_store) stage1.store.save((seed_dir / "store").string());

    // ids for audit files
    std::vector<std::string> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = data.train.instances[i].id;

    const bool have_truth = data.train.has_true_labels();
    std::vector<int> train_truth;
    if (have_truth) train_truth = data.train.true_labels();

    // dynamics + prior, per branch
    const std::size_t m_count = s1.num_branches;
    std::vector<PriorSet> priors(m_count);
    std::vector<CentroidTable> centroids(m_count);
    double beta_used = 0.0;

    DynamicsStats static_stats;
    if (!cfg.toggles.dynamics_prior) {
        const TrajectoryStore static_store =
            store_from_matrix(x_train, static_cast<std::size_t>(c));
        const CentroidTable static_centroids = run_stage("dynamics", seed, config_hash, [&] {
            return compute_centroids(static_store, noisy_labels, 0);
        });
        static_stats = compute_stats(static_store, static_centroids, noisy_labels, 0);
    }

    for (std::size_t m = 0; m < m_count; ++m) {
        // embedding-space centroids always back the trajectory construction
        centroids[m] = run_stage("dynamics", seed, config_hash, [&] {
            return compute_centroids(stage1.store, noisy_labels, m);
        });
        DynamicsStats stats;
        Mat reference;
        ReferenceEmbedding ref_kind;
        if (cfg.toggles.dynamics_prior) {
            stats = run_stage("dynamics", seed, config_hash, [&] {
                return compute_stats(stage1.store, centroids[m], noisy_labels, m);
            });
            ref_kind = cfg.prior.reference;
            reference = reference_matrix(stage1.store, m, ref_kind);
        } else {
            stats = static_stats;
            ref_kind = ReferenceEmbedding::raw_features;
            reference = x_train;
        }

        PriorConfig pcfg = cfg.prior;
        switch (cfg.beta_mode) {
            case BetaMode::provenance:
                if (!cfg.inject_noise) {
                    throw ConfigError("beta_mode=provenance needs noise injection; "
                                      "supply an explicit beta otherwise");
                }
                pcfg.beta = cfg.noise.ratio;
                break;
            case BetaMode::fixed:
                break;
            case BetaMode::estimate:
                pcfg.beta = estimate_beta_gmm(stats.score);
                break;
        }
        beta_used = pcfg.beta;

        priors[m] = run_stage("prior", seed, config_hash, [&] {
            return dynamics_prior(reference, stats, noisy_labels, c, pcfg);
        });

        write_diagnostics_csv((seed_dir / ("dynamics_m" + std::to_string(m) + ".csv")).string(),
                              ids, stats, &provenance.flipped);
        write_prior_audit_csv((seed_dir / ("prior_audit_m" + std::to_string(m) + ".csv")).string(),
                              ids, priors[m], noisy_labels,
                              have_truth ? &train_truth : nullptr, ref_kind);
    }
    outcome.beta_used = beta_used;

    if (have_truth) {
        std::vector<char> mask(priors[0].flagged.begin(), priors[0].flagged.end());
        outcome.prior_quality =
            prior_quality(priors[0].y_prior, noisy_labels, train_truth, &mask);
        outcome.has_prior_quality = true;
    }

    // stage II inputs: each branch consumes its own trajectories,
    // reconstruction targets and prior
    std::vector<Stage2Inputs> inputs(m_count);
    for (std::size_t m = 0; m < m_count; ++m) {
        Stage2Inputs& in = inputs[m];
        const std::size_t w_dim = cfg.trajectory_mode == TrajectoryMode::concat_embeddings
                                      ? stage1.store.epochs * stage1.store.embed_dim
                                      : stage1.store.epochs;
        in.w = Mat(n, w_dim);
        for (std::size_t i = 0; i < n; ++i) {
            const Vec w = build_trajectory(stage1.store, i, m, cfg.trajectory_mode,
                                           &centroids[m], &noisy_labels);
            for (std::size_t j = 0; j < w_dim; ++j) in.w(i, j) = w[j];
        }
        if (cfg.stage2.yhat_source == YhatSource::branch_prediction) {
            in.yhat = argmax_rows(stage1.store.prediction_matrix(m));
        } else {
            in.yhat = noisy_labels;
        }
        in.alpha_prior = priors[m].alpha;
    }

    Stage2Config s2 = cfg.stage2;
    s2.seed = seed + kStage2SeedOffset;
    if (!cfg.toggles.stage2_coreg) s2.coreg_weight = 0.0;
    std::vector<GenerativeBranch> gen = run_stage("train_stage2", seed, config_hash, [&] {
        return train_stage2(inputs, s2);
    });

    // calibration matrices
    std::vector<CalibrationMatrix> h(m_count);
    for (std::size_t m = 0; m < m_count; ++m) {
        h[m] = run_stage("build_H", seed, config_hash, [&] {
            return build_H(gen[m], inputs[m].w, inputs[m].yhat);
        });
        h[m].save_csv((seed_dir / ("H_m" + std::to_string(m) + ".csv")).string());
        gen[m].save((seed_dir / ("stage2_m" + std::to_string(m) + ".bin")).string(),
                    s2.hash());
    }

    // evaluation on the test split
    const std::vector<int> truth =
        data.test.has_true_labels() ? data.test.true_labels() : data.test.noisy_labels();

    std::vector<Mat> branch_probs(m_count);
    for (std::size_t m = 0; m < m_count; ++m) {
        branch_probs[m] = stage1.branches[m].forward(x_test).probs;
    }
    Mat base_probs(x_test.rows, static_cast<std::size_t>(c));
    for (std::size_t m = 0; m < m_count; ++m) {
        for (std::size_t idx = 0; idx < base_probs.data.size(); ++idx) {
            base_probs.data[idx] += branch_probs[m].data[idx];
        }
    }
    for (auto& v : base_probs.data) v /= static_cast<double>(m_count);

    Mat dygen_probs;
    if (per_instance) {
        std::vector<Mat> test_trajs(m_count);
        for (std::size_t m = 0; m < m_count; ++m) {
            const std::size_t w_dim =
                stage1.aux_store.epochs * stage1.aux_store.embed_dim;
            test_trajs[m] = Mat(x_test.rows, w_dim);
            for (std::size_t i = 0; i < x_test.rows; ++i) {
                const Vec w = build_trajectory(stage1.aux_store, i, m,
                                               TrajectoryMode::concat_embeddings);
                for (std::size_t j = 0; j < w_dim; ++j) test_trajs[m](i, j) = w[j];
            }
        }
        dygen_probs = run_stage("infer", seed, config_hash, [&] {
            return infer_per_instance(gen, branch_probs, test_trajs);
        });
    } else {
        dygen_probs = run_stage("infer", seed, config_hash, [&] {
            return infer_batch(branch_probs, h);
        });
    }

    outcome.base = evaluate_predictions(base_probs, truth);
    outcome.dygen = evaluate_predictions(dygen_probs, truth);

    std::ofstream eval_out(seed_dir / "eval.json");
    eval_out << outcome.to_json().dump(2) << "\n";
    return outcome;
}

} // namespace

ResultsArtifact run_experiment(const ExperimentConfig& config) {
    config.validate();
    fs::create_directories(config.output_dir);

    const LoadedData data = load_data(config);
    ResultsArtifact artifact;
    artifact.config_snapshot = config.snapshot();
    std::ostringstream hex;
    hex << std::hex << fnv1a64(artifact.config_snapshot.dump());
    const std::string config_hash = hex.str();

    artifact.seeds.resize(config.num_seeds);

    if (config.workers <= 1 || config.num_seeds == 1) {
        for (std::size_t s = 0; s < config.num_seeds; ++s) {
            artifact.seeds[s] = run_single_seed(config, data, s, config_hash);
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errors(config.num_seeds);
        auto worker = [&] {
            for (;;) {
                const std::size_t s = next.fetch_add(1);
                if (s >= config.num_seeds) return;
                try {
                    artifact.seeds[s] = run_single_seed(config, data, s, config_hash);
                } catch (...) {
                    errors[s] = std::current_exception();
                }
            }
        };
        std::vector<std::thread> pool;
        const std::size_t n_threads = std::min(config.workers, config.num_seeds);
        pool.reserve(n_threads);
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
        for (const auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    artifact.recompute_summary();
    artifact.save((fs::path(config.output_dir) / "artifact.json").string());

    std::ofstream hash_out(fs::path(config.output_dir) / "artifact.hash");
    hash_out << std::hex << artifact.content_hash() << "\n";
    return artifact;
}

void emit_plots(const ResultsArtifact& artifact, const std::string& run_dir,
                const std::string& out_dir) {
    if (artifact.seeds.empty()) throw PlumbingError("artifact has no seed outcomes");
    fs::create_directories(out_dir);

    // (a) mu/sigma scatter split by flipped flag, from the stored
    // diagnostics of the first seed's first branch
    const fs::path diag = fs::path(run_dir) / "seed_0" / "dynamics_m0.csv";
    std::ifstream in(diag);
    if (!in) {
        throw PlumbingError("missing diagnostics table '" + diag.string() + "'");
    }
    std::ofstream scatter(fs::path(out_dir) / "scatter.csv");
    scatter << in.rdbuf();

    // (b) reliability-diagram bins for both predictors, first seed
    auto write_bins = [&](const std::string& name, const std::vector<EceBin>& bins) {
        std::ofstream out(fs::path(out_dir) / name);
        out << "bin_low,bin_high,count,mean_confidence,accuracy\n";
        const auto m = static_cast<double>(bins.size());
        char buf[128];
        for (std::size_t b = 0; b < bins.size(); ++b) {
            std::snprintf(buf, sizeof(buf), "%.3f,%.3f,%zu,%.17g,%.17g",
                          static_cast<double>(b) / m, static_cast<double>(b + 1) / m,
                          bins[b].count, bins[b].mean_confidence, bins[b].mean_accuracy);
            out << buf << "\n";
        }
    };
    write_bins("reliability_base.csv", artifact.seeds.front().base.bins);
    write_bins("reliability_dygen.csv", artifact.seeds.front().dygen.bins);

    // (c) prior-quality counts per seed
    std::ofstream pq(fs::path(out_dir) / "prior_quality.csv");
    pq << "seed,n_flagged,corrected_right,corrected_wrong,"
          "label_accuracy_before,label_accuracy_after\n";
    char buf[160];
    for (const auto& o : artifact.seeds) {
        if (!o.has_prior_quality) continue;
        std::snprintf(buf, sizeof(buf), "%llu,%zu,%zu,%zu,%.17g,%.17g",
                      static_cast<unsigned long long>(o.seed), o.prior_quality.n_flagged,
                      o.prior_quality.corrected_right, o.prior_quality.corrected_wrong,
                      o.prior_quality.label_accuracy_before,
                      o.prior_quality.label_accuracy_after);
        pq << buf << "\n";
    }
}

} // namespace dygen
