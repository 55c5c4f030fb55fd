#include "dygen/store.hpp"

#include "dygen/errors.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

namespace dygen {

namespace fs = std::filesystem;
using nlohmann::json;

void TrajectoryStore::init(std::size_t n_, std::size_t d_, std::size_t epochs_,
                           std::size_t branches_, std::size_t classes_,
                           std::uint64_t seed_, std::string config_hash_) {
    n = n_;
    embed_dim = d_;
    epochs = epochs_;
    branches = branches_;
    num_classes = classes_;
    seed = seed_;
    config_hash = std::move(config_hash_);
    embeddings.assign(branches, {});
    predictions.assign(branches, {});
}

void TrajectoryStore::append_epoch(std::size_t branch, std::size_t epoch,
                                   std::vector<float> emb) {
    if (branch >= branches) throw StoreIntegrityError("branch index out of range");
    if (epoch != embeddings[branch].size()) {
        throw StoreIntegrityError("epochs must be appended in order: got epoch " +
                                  std::to_string(epoch) + " for branch " +
                                  std::to_string(branch) + ", expected " +
                                  std::to_string(embeddings[branch].size()));
    }
    if (emb.size() != n * embed_dim) {
        throw StoreIntegrityError("embedding buffer has wrong size");
    }
    embeddings[branch].push_back(std::move(emb));
}

void TrajectoryStore::set_predictions(std::size_t branch, std::vector<float> probs) {
    if (branch >= branches) throw StoreIntegrityError("branch index out of range");
    if (probs.size() != n * num_classes) {
        throw StoreIntegrityError("prediction buffer has wrong size");
    }
    predictions[branch] = std::move(probs);
}

bool TrajectoryStore::complete() const {
    for (const auto& b : embeddings) {
        if (b.size() != epochs) return false;
    }
    return true;
}

void TrajectoryStore::require_complete() const {
    if (!complete()) {
        throw StoreIntegrityError("trajectory store incomplete: expected " +
                                  std::to_string(epochs) + " epochs per branch");
    }
}

const float* TrajectoryStore::embedding(std::size_t branch, std::size_t epoch,
                                        std::size_t instance) const {
    return embeddings[branch][epoch].data() + instance * embed_dim;
}

const float* TrajectoryStore::prediction(std::size_t branch, std::size_t instance) const {
    return predictions[branch].data() + instance * num_classes;
}

Mat TrajectoryStore::prediction_matrix(std::size_t branch) const {
    if (predictions[branch].size() != n * num_classes) {
        throw StoreIntegrityError("branch " + std::to_string(branch) +
                                  " has no stored predictions");
    }
    Mat p(n, num_classes);
    for (std::size_t i = 0; i < p.data.size(); ++i) {
        p.data[i] = static_cast<double>(predictions[branch][i]);
    }
    return p;
}

namespace {

void write_f32(const fs::path& path, const std::vector<float>& buf) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

std::vector<float> read_f32(const fs::path& path, std::size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StoreIntegrityError("missing store file '" + path.string() + "'");
    std::vector<float> buf(count);
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(count * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float)) {
        throw StoreIntegrityError("store file '" + path.string() + "' truncated");
    }
    return buf;
}

} // namespace

void TrajectoryStore::save(const std::string& dir) const {
    require_complete();
    fs::create_directories(dir);
    json meta;
    meta["n"] = n;
    meta["embed_dim"] = embed_dim;
    meta["epochs"] = epochs;
    meta["branches"] = branches;
    meta["num_classes"] = num_classes;
    meta["seed"] = seed;
    meta["config_hash"] = config_hash;
    std::ofstream mf(fs::path(dir) / "metadata.json");
    if (!mf) throw InputError("cannot write store metadata in '" + dir + "'");
    mf << meta.dump(2) << "\n";

    for (std::size_t m = 0; m < branches; ++m) {
        for (std::size_t e = 0; e < epochs; ++e) {
            write_f32(fs::path(dir) / ("traj_m" + std::to_string(m) + "_e" +
                                       std::to_string(e) + ".f32"),
                      embeddings[m][e]);
        }
        if (!predictions[m].empty()) {
            write_f32(fs::path(dir) / ("pred_m" + std::to_string(m) + ".f32"),
                      predictions[m]);
        }
    }
}

TrajectoryStore TrajectoryStore::load(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "metadata.json");
    if (!mf) throw StoreIntegrityError("missing metadata.json in '" + dir + "'");
    json meta;
    mf >> meta;

    TrajectoryStore store;
    store.init(meta.at("n").get<std::size_t>(), meta.at("embed_dim").get<std::size_t>(),
               meta.at("epochs").get<std::size_t>(), meta.at("branches").get<std::size_t>(),
               meta.at("num_classes").get<std::size_t>(), meta.at("seed").get<std::uint64_t>(),
               meta.at("config_hash").get<std::string>());
    for (std::size_t m = 0; m < store.branches; ++m) {
        for (std::size_t e = 0; e < store.epochs; ++e) {
            store.append_epoch(m, e,
                               read_f32(fs::path(dir) / ("traj_m" + std::to_string(m) +
                                                         "_e" + std::to_string(e) + ".f32"),
                                        store.n * store.embed_dim));
        }
        const fs::path pred = fs::path(dir) / ("pred_m" + std::to_string(m) + ".f32");
        if (fs::exists(pred)) {
            store.set_predictions(m, read_f32(pred, store.n * store.num_classes));
        }
    }
    return store;
}

TrajectoryStore store_from_matrix(const Mat& features, std::size_t num_classes) {
    TrajectoryStore store;
    store.init(features.rows, features.cols, 1, 1, num_classes, 0, "static");
    std::vector<float> buf(features.data.size());
    for (std::size_t i = 0; i < buf.size(); ++i) {
        buf[i] = static_cast<float>(features.data[i]);
    }
    store.append_epoch(0, 0, std::move(buf));
    return store;
}

} // namespace dygen
