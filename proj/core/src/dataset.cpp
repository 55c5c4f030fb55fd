#include "dygen/dataset.hpp"

#include "dygen/errors.hpp"
#include "dygen/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace dygen {

using nlohmann::json;

void LabelSpace::validate() const {
    if (num_classes < 2) {
        throw ConfigError("label space needs at least 2 classes, got " +
                          std::to_string(num_classes));
    }
    if (!class_names.empty()) {
        if (static_cast<int>(class_names.size()) != num_classes) {
            throw ConfigError("class_names length does not match num_classes");
        }
        std::set<std::string> unique(class_names.begin(), class_names.end());
        if (unique.size() != class_names.size()) {
            throw ConfigError("class_names must be unique");
        }
    }
}

const char* to_string(SplitTag tag) {
    switch (tag) {
        case SplitTag::train: return "train";
        case SplitTag::dev: return "dev";
        case SplitTag::test: return "test";
    }
    return "?";
}

void Dataset::validate() const {
    label_space.validate();
    if (instances.empty()) {
        throw SchemaError("dataset is empty");
    }
    const std::size_t d = instances.front().features.size();
    std::set<std::string> ids;
    for (const auto& inst : instances) {
        if (!ids.insert(inst.id).second) {
            throw SchemaError("duplicate instance id '" + inst.id + "'");
        }
        if (inst.features.size() != d) {
            throw DimensionError("instance '" + inst.id + "' has feature dimension " +
                                 std::to_string(inst.features.size()) + ", expected " +
                                 std::to_string(d));
        }
        if (inst.noisy_label < 0 || inst.noisy_label >= label_space.num_classes) {
            throw LabelRangeError("instance '" + inst.id + "' noisy_label " +
                                  std::to_string(inst.noisy_label) + " outside [0, " +
                                  std::to_string(label_space.num_classes) + ")");
        }
        if (inst.true_label &&
            (*inst.true_label < 0 || *inst.true_label >= label_space.num_classes)) {
            throw LabelRangeError("instance '" + inst.id + "' true_label out of range");
        }
    }
}

std::vector<int> Dataset::noisy_labels() const {
    std::vector<int> out(instances.size());
    for (std::size_t i = 0; i < instances.size(); ++i) out[i] = instances[i].noisy_label;
    return out;
}

std::vector<int> Dataset::true_labels() const {
    std::vector<int> out(instances.size());
    for (std::size_t i = 0; i < instances.size(); ++i) {
        if (!instances[i].true_label) {
            throw EvaluationUnavailableError("instance '" + instances[i].id +
                                             "' has no true label");
        }
        out[i] = *instances[i].true_label;
    }
    return out;
}

bool Dataset::has_true_labels() const {
    return std::all_of(instances.begin(), instances.end(),
                       [](const Instance& i) { return i.true_label.has_value(); });
}

Mat Dataset::feature_matrix() const {
    Mat x(instances.size(), feature_dim());
    for (std::size_t i = 0; i < instances.size(); ++i) {
        for (std::size_t j = 0; j < x.cols; ++j) {
            x(i, j) = static_cast<double>(instances[i].features[j]);
        }
    }
    return x;
}

FileFormat parse_format(const std::string& name) {
    if (name == "jsonl") return FileFormat::jsonl;
    if (name == "csv") return FileFormat::csv;
    throw ConfigError("unknown dataset format '" + name + "' (expected jsonl or csv)");
}

namespace {

std::string id_from_json(const json& v, std::size_t line_no) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    throw SchemaError("record " + std::to_string(line_no) + ": id must be string or integer");
}

Instance parse_jsonl_record(const std::string& line, std::size_t line_no) {
    json rec;
    try {
        rec = json::parse(line);
    } catch (const json::parse_error& e) {
        throw SchemaError("record " + std::to_string(line_no) + ": invalid JSON (" +
                          std::string(e.what()) + ")");
    }
    for (const char* key : {"id", "features", "noisy_label"}) {
        if (!rec.contains(key)) {
            throw SchemaError("record " + std::to_string(line_no) + ": missing field '" +
                              key + "'");
        }
    }
    Instance inst;
    inst.id = id_from_json(rec["id"], line_no);
    if (!rec["features"].is_array()) {
        throw SchemaError("record " + std::to_string(line_no) + ": features must be an array");
    }
    inst.features.reserve(rec["features"].size());
    for (const auto& f : rec["features"]) {
        if (!f.is_number()) {
            throw SchemaError("record " + std::to_string(line_no) +
                              ": features must be numeric");
        }
        inst.features.push_back(f.get<float>());
    }
    if (!rec["noisy_label"].is_number_integer()) {
        throw SchemaError("record " + std::to_string(line_no) +
                          ": noisy_label must be an integer");
    }
    inst.noisy_label = rec["noisy_label"].get<int>();
    if (rec.contains("true_label") && !rec["true_label"].is_null()) {
        inst.true_label = rec["true_label"].get<int>();
    }
    return inst;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.push_back("");
    return cells;
}

std::string f32_to_string(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

} // namespace

Dataset load_dataset(const std::string& path, FileFormat format, int num_classes) {
    std::ifstream in(path);
    if (!in) {
        throw InputError("cannot open dataset file '" + path + "'");
    }
    Dataset data;
    data.label_space.num_classes = num_classes;

    std::string line;
    std::size_t line_no = 0;

    if (format == FileFormat::jsonl) {
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            data.instances.push_back(parse_jsonl_record(line, line_no));
        }
    } else {
        if (!std::getline(in, line)) {
            throw SchemaError("csv file '" + path + "' has no header");
        }
        auto header = split_csv_line(line);
        // expected: id, f0..f{d-1}, noisy_label, true_label
        if (header.size() < 3 || header.front() != "id") {
            throw SchemaError("csv header must start with 'id' and end with labels");
        }
        std::size_t n_feat = 0;
        for (std::size_t i = 1; i < header.size(); ++i) {
            if (header[i] == "noisy_label") break;
            if (header[i] != "f" + std::to_string(i - 1)) {
                throw SchemaError("csv feature columns must be named f0..f{d-1}, got '" +
                                  header[i] + "'");
            }
            ++n_feat;
        }
        const bool has_true_col =
            header.size() == n_feat + 3 && header.back() == "true_label";
        if (header.size() != n_feat + 2 && !has_true_col) {
            throw SchemaError("csv header malformed: expected id,f*,noisy_label[,true_label]");
        }
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            auto cells = split_csv_line(line);
            if (cells.size() != header.size()) {
                throw SchemaError("record " + std::to_string(line_no) + ": expected " +
                                  std::to_string(header.size()) + " cells, got " +
                                  std::to_string(cells.size()));
            }
            Instance inst;
            inst.id = cells[0];
            inst.features.reserve(n_feat);
            try {
                for (std::size_t i = 0; i < n_feat; ++i) {
                    inst.features.push_back(std::stof(cells[1 + i]));
                }
                inst.noisy_label = std::stoi(cells[1 + n_feat]);
                if (has_true_col && !cells[2 + n_feat].empty()) {
                    inst.true_label = std::stoi(cells[2 + n_feat]);
                }
            } catch (const std::exception&) {
                throw SchemaError("record " + std::to_string(line_no) + ": non-numeric cell");
            }
            data.instances.push_back(std::move(inst));
        }
    }

    data.validate();
    return data;
}

void save_dataset(const Dataset& data, const std::string& path, FileFormat format) {
    std::ofstream out(path);
    if (!out) {
        throw InputError("cannot write dataset file '" + path + "'");
    }
    if (format == FileFormat::jsonl) {
        for (const auto& inst : data.instances) {
            json rec;
            rec["id"] = inst.id;
            rec["features"] = inst.features;
            rec["noisy_label"] = inst.noisy_label;
            rec["true_label"] = inst.true_label ? json(*inst.true_label) : json(nullptr);
            out << rec.dump() << "\n";
        }
    } else {
        const std::size_t d = data.feature_dim();
        out << "id";
        for (std::size_t j = 0; j < d; ++j) out << ",f" << j;
        out << ",noisy_label,true_label\n";
        for (const auto& inst : data.instances) {
            out << inst.id;
            for (float f : inst.features) out << "," << f32_to_string(f);
            out << "," << inst.noisy_label << ",";
            if (inst.true_label) out << *inst.true_label;
            out << "\n";
        }
    }
}

SplitResult split_dataset(const Dataset& data, const SplitRatios& ratios, std::uint64_t seed) {
    if (ratios.train <= 0.0 || ratios.dev <= 0.0 || ratios.test <= 0.0) {
        throw ConfigError("split ratios must all be positive");
    }
    const double sum = ratios.train + ratios.dev + ratios.test;
    if (std::abs(sum - 1.0) > 1e-9) {
        throw ConfigError("split ratios must sum to 1, got " + std::to_string(sum));
    }
    data.validate();

    const std::size_t n = data.size();
    const auto n_dev = static_cast<std::size_t>(std::floor(ratios.dev * n));
    const auto n_test = static_cast<std::size_t>(std::floor(ratios.test * n));
    const std::size_t n_train = n - n_dev - n_test;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);

    auto take = [&](std::size_t begin, std::size_t count, SplitTag tag) {
        std::vector<std::size_t> idx(order.begin() + begin, order.begin() + begin + count);
        std::sort(idx.begin(), idx.end());
        Dataset out;
        out.label_space = data.label_space;
        out.split_tag = tag;
        out.instances.reserve(count);
        for (std::size_t i : idx) out.instances.push_back(data.instances[i]);
        return out;
    };

    SplitResult result;
    result.train = take(0, n_train, SplitTag::train);
    result.dev = take(n_train, n_dev, SplitTag::dev);
    result.test = take(n_train + n_dev, n_test, SplitTag::test);
    return result;
}

} // namespace dygen
