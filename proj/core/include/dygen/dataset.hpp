#pragma once

#include "dygen/mat.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dygen {

/// The set of classes a task is defined over.
struct LabelSpace {
    int num_classes = 0;
    std::vector<std::string> class_names; // empty, or exactly num_classes entries

    void validate() const;
};

/// One labeled example. true_label is carried for evaluation only; the
/// training paths in this library never look at it.
struct Instance {
    std::string id;
    std::vector<float> features;
    int noisy_label = -1;
    std::optional<int> true_label;
};

enum class SplitTag { train, dev, test };

const char* to_string(SplitTag tag);

struct Dataset {
    std::vector<Instance> instances;
    LabelSpace label_space;
    SplitTag split_tag = SplitTag::train;

    std::size_t size() const { return instances.size(); }
    std::size_t feature_dim() const {
        return instances.empty() ? 0 : instances.front().features.size();
    }

    /// Checks id uniqueness, non-emptiness, consistent feature dimension
    /// and label ranges. Throws on violation.
    void validate() const;

    std::vector<int> noisy_labels() const;
    /// Throws EvaluationUnavailableError if any instance lacks a true label.
    std::vector<int> true_labels() const;
    bool has_true_labels() const;

    /// Features as an n x d double matrix (training-side view of f32 storage).
    Mat feature_matrix() const;
};

enum class FileFormat { jsonl, csv };

FileFormat parse_format(const std::string& name);

Dataset load_dataset(const std::string& path, FileFormat format, int num_classes);
void save_dataset(const Dataset& data, const std::string& path, FileFormat format);

struct SplitRatios {
    double train = 0.8;
    double dev = 0.1;
    double test = 0.1;
};

struct SplitResult {
    Dataset train;
    Dataset dev;
    Dataset test;
};

/// Deterministic disjoint split. Sizes are floor-allocated for dev/test
/// with the remainder going to train; relative record order is preserved
/// inside each split.
SplitResult split_dataset(const Dataset& data, const SplitRatios& ratios, std::uint64_t seed);

} // namespace dygen
