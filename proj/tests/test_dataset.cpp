#include "dygen/dataset.hpp"

#include "dygen/errors.hpp"
#include "dygen/rng.hpp"
#include "dygen/synthetic.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <cmath>
#include <set>

using namespace dygen;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "dygen_tests";
    fs::create_directories(dir);
    return dir / name;
}

Dataset tiny_dataset() {
    Dataset d;
    d.label_space.num_classes = 4;
    for (int i = 0; i < 3; ++i) {
        Instance inst;
        inst.id = std::to_string(i);
        inst.features = {0.5f + i, -1.25f, 3.0f};
        inst.noisy_label = i % 4;
        if (i != 1) inst.true_label = (i + 1) % 4;
        d.instances.push_back(inst);
    }
    return d;
}

} // namespace

TEST_CASE("jsonl load of valid records") {
    const auto path = temp_file("valid.jsonl");
    {
        std::ofstream out(path);
        out << R"({"id":"a","features":[1.0,2.0],"noisy_label":0,"true_label":1})" << "\n";
        out << R"({"id":"b","features":[0.5,-2.0],"noisy_label":3,"true_label":null})" << "\n";
        out << R"({"id":7,"features":[0.0,0.0],"noisy_label":2})" << "\n";
    }
    const Dataset d = load_dataset(path.string(), FileFormat::jsonl, 4);
    CHECK(d.size() == 3);
    CHECK(d.instances[0].id == "a");
    CHECK(d.instances[0].true_label == 1);
    CHECK_FALSE(d.instances[1].true_label.has_value());
    CHECK(d.instances[2].id == "7"); // integer ids normalize to strings
    CHECK(d.feature_dim() == 2);
}

TEST_CASE("missing required field raises a schema error naming the record") {
    const auto path = temp_file("missing.jsonl");
    {
        std::ofstream out(path);
        out << R"({"id":"a","features":[1.0],"noisy_label":0})" << "\n";
        out << R"({"id":"b","features":[1.0]})" << "\n";
    }
    try {
        load_dataset(path.string(), FileFormat::jsonl, 2);
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find("record 2") != std::string::npos);
        CHECK(std::string(e.what()).find("noisy_label") != std::string::npos);
    }
}

TEST_CASE("inconsistent feature dimension raises a dimension error") {
    const auto path = temp_file("ragged.jsonl");
    {
        std::ofstream out(path);
        out << R"({"id":"a","features":[1.0,2.0],"noisy_label":0})" << "\n";
        out << R"({"id":"b","features":[1.0],"noisy_label":1})" << "\n";
    }
    CHECK_THROWS_AS(load_dataset(path.string(), FileFormat::jsonl, 2), DimensionError);
}

TEST_CASE("unknown class index raises a label-range error") {
    const auto path = temp_file("range.jsonl");
    {
        std::ofstream out(path);
        out << R"({"id":"a","features":[1.0],"noisy_label":5})" << "\n";
    }
    CHECK_THROWS_AS(load_dataset(path.string(), FileFormat::jsonl, 3), LabelRangeError);
}

TEST_CASE("save/load round trip is field-for-field lossless") {
    const Dataset original = tiny_dataset();
    for (FileFormat fmt : {FileFormat::jsonl, FileFormat::csv}) {
        const auto path =
            temp_file(fmt == FileFormat::jsonl ? "roundtrip.jsonl" : "roundtrip.csv");
        save_dataset(original, path.string(), fmt);
        const Dataset loaded = load_dataset(path.string(), fmt, 4);
        REQUIRE(loaded.size() == original.size());
        for (std::size_t i = 0; i < original.size(); ++i) {
            CHECK(loaded.instances[i].id == original.instances[i].id);
            CHECK(loaded.instances[i].features == original.instances[i].features);
            CHECK(loaded.instances[i].noisy_label == original.instances[i].noisy_label);
            CHECK(loaded.instances[i].true_label == original.instances[i].true_label);
        }
    }
}

TEST_CASE("round trip is lossless for randomized datasets in both formats") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        Dataset d;
        d.label_space.num_classes = 2 + static_cast<int>(rng.uniform_int(7));
        const std::size_t n = 1 + rng.uniform_int(40);
        const std::size_t dim = 1 + rng.uniform_int(12);
        for (std::size_t i = 0; i < n; ++i) {
            Instance inst;
            inst.id = "r" + std::to_string(i);
            inst.features.resize(dim);
            for (auto& f : inst.features) {
                f = static_cast<float>(1000.0 * (rng.uniform() - 0.5));
            }
            inst.noisy_label = static_cast<int>(rng.uniform_int(d.label_space.num_classes));
            if (rng.uniform() < 0.5) {
                inst.true_label =
                    static_cast<int>(rng.uniform_int(d.label_space.num_classes));
            }
            d.instances.push_back(std::move(inst));
        }
        const FileFormat fmt = trial % 2 == 0 ? FileFormat::jsonl : FileFormat::csv;
        const auto path = temp_file("fuzz_roundtrip");
        save_dataset(d, path.string(), fmt);
        const Dataset loaded = load_dataset(path.string(), fmt, d.label_space.num_classes);
        REQUIRE(loaded.size() == d.size());
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(loaded.instances[i].id == d.instances[i].id);
            CHECK(loaded.instances[i].features == d.instances[i].features);
            CHECK(loaded.instances[i].noisy_label == d.instances[i].noisy_label);
            CHECK(loaded.instances[i].true_label == d.instances[i].true_label);
        }
    }
}

TEST_CASE("split sizes are floor-allocated with the remainder to train") {
    SyntheticSpec spec;
    spec.n = 100;
    spec.seed = 7;
    const Dataset d = make_gaussian_mixture(spec);
    const SplitResult s = split_dataset(d, {0.8, 0.1, 0.1}, 7);
    CHECK(s.train.size() == 80);
    CHECK(s.dev.size() == 10);
    CHECK(s.test.size() == 10);
    CHECK(s.train.split_tag == SplitTag::train);
    CHECK(s.dev.split_tag == SplitTag::dev);
    CHECK(s.test.split_tag == SplitTag::test);
}

TEST_CASE("split is deterministic and partitions the id set exactly") {
    SyntheticSpec spec;
    spec.n = 103; // non-divisible
    spec.seed = 3;
    const Dataset d = make_gaussian_mixture(spec);

    const SplitResult a = split_dataset(d, {0.7, 0.15, 0.15}, 99);
    const SplitResult b = split_dataset(d, {0.7, 0.15, 0.15}, 99);

    auto ids = [](const Dataset& ds) {
        std::set<std::string> out;
        for (const auto& i : ds.instances) out.insert(i.id);
        return out;
    };
    CHECK(ids(a.train) == ids(b.train));
    CHECK(ids(a.dev) == ids(b.dev));
    CHECK(ids(a.test) == ids(b.test));

    // union covers everything, pairwise disjoint
    std::set<std::string> all = ids(a.train);
    const auto dev_ids = ids(a.dev);
    const auto test_ids = ids(a.test);
    for (const auto& id : dev_ids) CHECK(all.insert(id).second);
    for (const auto& id : test_ids) CHECK(all.insert(id).second);
    CHECK(all.size() == d.size());

    // a different seed moves instances around
    const SplitResult c = split_dataset(d, {0.7, 0.15, 0.15}, 100);
    CHECK(ids(c.train) != ids(a.train));
}

TEST_CASE("ratios that do not sum to one raise a configuration error") {
    const Dataset d = tiny_dataset();
    CHECK_THROWS_AS(split_dataset(d, {0.5, 0.5, 0.2}, 1), ConfigError);
    CHECK_THROWS_AS(split_dataset(d, {0.5, 0.3, 0.3}, 1), ConfigError);
    // a sum off by less than 1e-9 is accepted
    CHECK_NOTHROW(split_dataset(d, {0.8, 0.1, -0.1 + 0.2}, 1));
}

TEST_CASE("synthetic mixture has well-separated classes and clean labels") {
    SyntheticSpec spec;
    spec.n = 400;
    spec.seed = 5;
    const Dataset d = make_gaussian_mixture(spec);
    CHECK(d.feature_dim() == 16);
    CHECK(d.has_true_labels());
    for (const auto& inst : d.instances) {
        CHECK(inst.noisy_label == *inst.true_label);
    }

    // class means should be ~separation apart
    Mat x = d.feature_matrix();
    std::vector<Vec> mean(4, Vec(16, 0.0));
    std::vector<std::size_t> count(4, 0);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const int y = d.instances[i].noisy_label;
        ++count[y];
        for (std::size_t j = 0; j < 16; ++j) mean[y][j] += x(i, j);
    }
    for (int k = 0; k < 4; ++k) {
        REQUIRE(count[k] > 0);
        for (auto& v : mean[k]) v /= count[k];
    }
    for (int a = 0; a < 4; ++a) {
        for (int b = a + 1; b < 4; ++b) {
            double dist = 0.0;
            for (std::size_t j = 0; j < 16; ++j) {
                dist += (mean[a][j] - mean[b][j]) * (mean[a][j] - mean[b][j]);
            }
            CHECK(std::sqrt(dist) > 7.0); // nominal 8, sample noise allowed
        }
    }
}
