// Experiment runner: generate benchmark data, inject label noise, run the
// two-stage pipeline with ablation toggles, and emit reports and plot data.

#include "dygen/errors.hpp"
#include "dygen/experiment.hpp"
#include "dygen/synthetic.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// DYGEN_OUTPUT_DIR overrides the configured output directory.
std::string resolve_output_dir(const std::string& configured) {
    if (const char* env = std::getenv("DYGEN_OUTPUT_DIR")) {
        if (*env != '\0') return env;
    }
    return configured;
}

int cmd_generate_data(const std::string& out_dir, std::size_t n_train, std::size_t n_dev,
                      std::size_t n_test, int classes, std::size_t dim, double separation,
                      std::uint64_t seed, std::uint64_t geometry_seed) {
    fs::create_directories(out_dir);
    dygen::SyntheticSpec spec;
    spec.num_classes = classes;
    spec.dim = dim;
    spec.separation = separation;
    spec.geometry_seed = geometry_seed;

    spec.n = n_train;
    spec.seed = seed;
    dygen::save_dataset(dygen::make_gaussian_mixture(spec, dygen::SplitTag::train),
                        (fs::path(out_dir) / "train.jsonl").string(),
                        dygen::FileFormat::jsonl);
    spec.n = n_dev;
    spec.seed = seed + 1;
    dygen::save_dataset(dygen::make_gaussian_mixture(spec, dygen::SplitTag::dev),
                        (fs::path(out_dir) / "dev.jsonl").string(),
                        dygen::FileFormat::jsonl);
    spec.n = n_test;
    spec.seed = seed + 2;
    dygen::save_dataset(dygen::make_gaussian_mixture(spec, dygen::SplitTag::test),
                        (fs::path(out_dir) / "test.jsonl").string(),
                        dygen::FileFormat::jsonl);
    std::cout << "wrote train/dev/test under " << out_dir << "\n";
    return 0;
}

int cmd_inject_noise(const std::string& in_path, const std::string& out_path,
                     const std::string& format, int classes, const std::string& kind,
                     double ratio, std::uint64_t seed, const std::vector<int>& pairing,
                     double idn_std) {
    const dygen::FileFormat fmt = dygen::parse_format(format);
    dygen::Dataset data = dygen::load_dataset(in_path, fmt, classes);

    dygen::NoiseSpec spec;
    spec.kind = dygen::parse_noise_kind(kind);
    spec.ratio = ratio;
    spec.seed = seed;
    spec.asym_pairing = pairing;
    spec.idn_std = idn_std;

    const dygen::InjectionResult result =
        dygen::inject(data.feature_matrix(), data.noisy_labels(), classes, spec);
    for (std::size_t i = 0; i < data.size(); ++i) {
        data.instances[i].noisy_label = result.noisy[i];
    }
    dygen::save_dataset(data, out_path, fmt);
    result.provenance.save(out_path + ".noise.json");
    std::cout << "injected " << kind << " noise at ratio " << ratio << ": realized "
              << result.provenance.realized_flip_fraction << "\n";
    std::cout << "wrote " << out_path << " and " << out_path << ".noise.json\n";
    return 0;
}

void print_summary_line(const char* name, const dygen::MetricSummary& s) {
    std::cout << "  " << name << ": accuracy " << s.accuracy_mean << " +- "
              << s.accuracy_std << ", ece " << s.ece_mean << " +- " << s.ece_std << "\n";
}

int cmd_run(dygen::ExperimentConfig cfg) {
    cfg.output_dir = resolve_output_dir(cfg.output_dir);
    const dygen::ResultsArtifact artifact = dygen::run_experiment(cfg);
    std::cout << "run complete (" << artifact.seeds.size() << " seed(s)); artifact at "
              << (fs::path(cfg.output_dir) / "artifact.json").string() << "\n";
    print_summary_line("base ", artifact.base_summary);
    print_summary_line("dygen", artifact.dygen_summary);
    std::cout << std::hex << "  content hash: " << artifact.content_hash() << std::dec
              << "\n";
    return 0;
}

int cmd_ablate(dygen::ExperimentConfig cfg) {
    cfg.output_dir = resolve_output_dir(cfg.output_dir);
    const fs::path root = cfg.output_dir;
    json summary;
    for (const dygen::AblationToggles& toggles : dygen::all_toggle_combinations()) {
        dygen::ExperimentConfig variant = cfg;
        variant.toggles = toggles;
        variant.output_dir = (root / toggles.name()).string();
        const dygen::ResultsArtifact artifact = dygen::run_experiment(variant);
        json row;
        row["base_accuracy_mean"] = artifact.base_summary.accuracy_mean;
        row["dygen_accuracy_mean"] = artifact.dygen_summary.accuracy_mean;
        row["dygen_ece_mean"] = artifact.dygen_summary.ece_mean;
        summary[toggles.name()] = row;
        std::cout << toggles.name() << ": dygen accuracy "
                  << artifact.dygen_summary.accuracy_mean << "\n";
    }
    std::ofstream out(root / "ablation_summary.json");
    out << summary.dump(2) << "\n";
    std::cout << "wrote " << (root / "ablation_summary.json").string() << "\n";
    return 0;
}

int cmd_report(const std::string& artifact_path) {
    const dygen::ResultsArtifact artifact = dygen::ResultsArtifact::load(artifact_path);
    std::cout << "seeds: " << artifact.seeds.size() << "\n";
    for (const auto& o : artifact.seeds) {
        std::cout << "  seed " << o.seed << ": base acc " << o.base.accuracy << " ece "
                  << o.base.ece << " | dygen acc " << o.dygen.accuracy << " ece "
                  << o.dygen.ece;
        if (o.has_prior_quality) {
            std::cout << " | prior " << o.prior_quality.label_accuracy_before << " -> "
                      << o.prior_quality.label_accuracy_after;
        }
        std::cout << "\n";
    }
    print_summary_line("base ", artifact.base_summary);
    print_summary_line("dygen", artifact.dygen_summary);
    std::cout << std::hex << "content hash: " << artifact.content_hash() << std::dec << "\n";
    return 0;
}

int cmd_emit_plots(const std::string& run_dir, const std::string& out_dir) {
    const dygen::ResultsArtifact artifact =
        dygen::ResultsArtifact::load((fs::path(run_dir) / "artifact.json").string());
    dygen::emit_plots(artifact, run_dir, out_dir);
    std::cout << "wrote plot data under " << out_dir << "\n";
    return 0;
}

void print_nested_exception(const std::exception& e, int depth = 0) {
    std::cerr << (depth == 0 ? "error: " : "  caused by: ") << e.what() << "\n";
    try {
        std::rethrow_if_nested(e);
    } catch (const std::exception& inner) {
        print_nested_exception(inner, depth + 1);
    } catch (...) {
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"DyGen: dynamics-enhanced generative denoising for noisy labels"};
    app.require_subcommand(1);

    // generate-data
    auto* gen = app.add_subcommand("generate-data",
                                   "Write a synthetic Gaussian-mixture benchmark");
    std::string gen_out = "data";
    std::size_t n_train = 2000, n_dev = 500, n_test = 1000, gen_dim = 16;
    int gen_classes = 4;
    double separation = 8.0;
    std::uint64_t gen_seed = 0, gen_geometry = 0;
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--n-train", n_train, "training instances");
    gen->add_option("--n-dev", n_dev, "dev instances");
    gen->add_option("--n-test", n_test, "test instances");
    gen->add_option("--classes", gen_classes, "number of classes");
    gen->add_option("--dim", gen_dim, "feature dimension");
    gen->add_option("--separation", separation,
                    "class-mean separation in within-class stds");
    gen->add_option("--seed", gen_seed, "sampling seed");
    gen->add_option("--geometry-seed", gen_geometry, "class-mean geometry seed");

    // inject-noise
    auto* inj = app.add_subcommand("inject-noise", "Corrupt the labels of a dataset");
    std::string inj_in, inj_out, inj_format = "jsonl", inj_kind = "symmetric";
    int inj_classes = 0;
    double inj_ratio = 0.2, inj_idn_std = 0.1;
    std::uint64_t inj_seed = 0;
    std::vector<int> inj_pairing;
    inj->add_option("--in", inj_in, "clean dataset")->required();
    inj->add_option("--out", inj_out, "noisy dataset to write")->required();
    inj->add_option("--format", inj_format, "jsonl or csv");
    inj->add_option("--classes", inj_classes, "number of classes")->required();
    inj->add_option("--kind", inj_kind, "symmetric|asymmetric|idn");
    inj->add_option("--ratio", inj_ratio, "expected flip rate tau");
    inj->add_option("--seed", inj_seed, "injection seed");
    inj->add_option("--pairing", inj_pairing, "asymmetric pairing, e.g. 1 2 3 0");
    inj->add_option("--idn-std", inj_idn_std, "truncated-normal std for IDN flip rates");

    // shared run/ablate options
    std::string config_path;
    std::string output_override;
    bool have_master_seed = false, have_num_seeds = false, have_workers = false;
    std::uint64_t master_seed = 0;
    std::size_t num_seeds = 0, workers = 0;
    bool persist_store = false;

    auto add_run_options = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config (JSON)")->required();
        sub->add_option("--output-dir", output_override, "override output directory");
        sub->add_option("--master-seed", master_seed, "override master seed")
            ->each([&](const std::string&) { have_master_seed = true; });
        sub->add_option("--num-seeds", num_seeds, "override number of seeds")
            ->each([&](const std::string&) { have_num_seeds = true; });
        sub->add_option("--workers", workers, "seed-level worker threads")
            ->each([&](const std::string&) { have_workers = true; });
        sub->add_flag("--persist-store", persist_store,
                      "write trajectory stores to the run directory");
    };

    auto* run = app.add_subcommand("run", "Run the full pipeline from a config file");
    add_run_options(run);
    auto* ablate = app.add_subcommand("ablate", "Run all 8 toggle combinations of I/P/II");
    add_run_options(ablate);

    // report
    auto* report = app.add_subcommand("report", "Summarize a results artifact");
    std::string artifact_path;
    report->add_option("--artifact", artifact_path, "path to artifact.json")->required();

    // emit-plots
    auto* plots = app.add_subcommand("emit-plots", "Write plot-data CSVs from a run");
    std::string plots_run, plots_out = "plots";
    plots->add_option("--run-dir", plots_run, "directory of a completed run")->required();
    plots->add_option("--out", plots_out, "directory for the CSVs");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            return cmd_generate_data(gen_out, n_train, n_dev, n_test, gen_classes, gen_dim,
                                     separation, gen_seed, gen_geometry);
        }
        if (inj->parsed()) {
            return cmd_inject_noise(inj_in, inj_out, inj_format, inj_classes, inj_kind,
                                    inj_ratio, inj_seed, inj_pairing, inj_idn_std);
        }
        if (run->parsed() || ablate->parsed()) {
            dygen::ExperimentConfig cfg = dygen::ExperimentConfig::from_file(config_path);
            if (!output_override.empty()) cfg.output_dir = output_override;
            if (have_master_seed) cfg.master_seed = master_seed;
            if (have_num_seeds) cfg.num_seeds = num_seeds;
            if (have_workers) cfg.workers = workers;
            if (persist_store) cfg.persist_store = true;
            return run->parsed() ? cmd_run(std::move(cfg)) : cmd_ablate(std::move(cfg));
        }
        if (report->parsed()) {
            return cmd_report(artifact_path);
        }
        if (plots->parsed()) {
            return cmd_emit_plots(plots_run, plots_out);
        }
    } catch (const std::exception& e) {
        print_nested_exception(e);
        return 1;
    }
    return 0;
}
