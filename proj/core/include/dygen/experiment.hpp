#pragma once

#include "dygen/dataset.hpp"
#include "dygen/inference.hpp"
#include "dygen/noise.hpp"
#include "dygen/prior.hpp"
#include "dygen/stage1.hpp"
#include "dygen/stage2.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dygen {

/// Table-4-style component toggles. Turning dynamics_prior off replaces
/// the trajectory-based prior with a vanilla KNN prior over raw input
/// features.
struct AblationToggles {
    bool stage1_coreg = true;
    bool dynamics_prior = true;
    bool stage2_coreg = true;

    std::string name() const; // e.g. "I1_P0_II1"
};

enum class BetaMode { provenance, fixed, estimate };

/// How test predictions are calibrated: per_instance evaluates the
/// Stage-II posterior on each test instance's own trajectory (recorded
/// label-free during Stage-I training); aggregated_h applies the
/// per-predicted-class calibration matrix instead.
enum class InferenceMode { per_instance, aggregated_h };

struct DataConfig {
    // either three explicit files...
    std::string train_path;
    std::string dev_path;  // optional
    std::string test_path;
    // ...or one file plus ratios
    std::string single_path;
    SplitRatios ratios;
    std::uint64_t split_seed = 0;

    FileFormat format = FileFormat::jsonl;
    int num_classes = 0;
};

struct ExperimentConfig {
    DataConfig data;
    NoiseSpec noise;
    bool inject_noise = true;
    Stage1Config stage1;
    PriorConfig prior;
    BetaMode beta_mode = BetaMode::provenance;
    Stage2Config stage2;
    AblationToggles toggles;
    TrajectoryMode trajectory_mode = TrajectoryMode::concat_embeddings;
    InferenceMode inference_mode = InferenceMode::per_instance;
    std::string output_dir = "out";
    std::uint64_t master_seed = 42;
    std::size_t num_seeds = 1;
    std::size_t workers = 1;
    bool persist_store = false;

    void validate() const;
    /// Snapshot of everything that defines the experiment. The output
    /// directory is environment, not identity, and is excluded.
    nlohmann::json snapshot() const;

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig from_file(const std::string& path);
};

struct SeedOutcome {
    std::uint64_t seed = 0;
    EvalReport base;
    EvalReport dygen;
    PriorQuality prior_quality;
    bool has_prior_quality = false;
    double realized_flip_fraction = 0.0;
    double beta_used = 0.0;

    nlohmann::json to_json() const;
    static SeedOutcome from_json(const nlohmann::json& j);
};

struct MetricSummary {
    double accuracy_mean = 0.0, accuracy_std = 0.0;
    double ece_mean = 0.0, ece_std = 0.0;
};

struct ResultsArtifact {
    nlohmann::json config_snapshot;
    std::vector<SeedOutcome> seeds;
    MetricSummary base_summary;
    MetricSummary dygen_summary;

    void recompute_summary();
    std::string to_json_string() const;
    std::uint64_t content_hash() const;
    void save(const std::string& path) const;
    static ResultsArtifact load(const std::string& path);
};

/// Full pipeline per seed: inject noise on the training labels, train the
/// Stage-I branches, quantify dynamics, build per-branch priors, train the
/// Stage-II calibrators, compose predictions on the test set and evaluate
/// both the uncalibrated branch mean and the calibrated model. Writes all
/// per-seed artifacts under <output_dir>/seed_<i>/.
ResultsArtifact run_experiment(const ExperimentConfig& config);

/// Plot-data emission: mu/sigma scatter split by the flipped flag, the
/// 10-bin reliability tables for base and calibrated predictions, and the
/// per-seed prior-quality counts.
void emit_plots(const ResultsArtifact& artifact, const std::string& run_dir,
                const std::string& out_dir);

/// All 8 combinations of the three toggles.
std::vector<AblationToggles> all_toggle_combinations();

} // namespace dygen
