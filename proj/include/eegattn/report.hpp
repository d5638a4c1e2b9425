#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "eegattn/nn.hpp"
#include "eegattn/training.hpp"

namespace eegattn {

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config <-> JSON (strict: unknown keys are rejected)
// ---------------------------------------------------------------------------

inline json model_config_to_json(const ModelConfig& c) {
    return json{{"n_channels", c.n_channels},
                {"n_samples", c.n_samples},
                {"sampling_rate", c.sampling_rate},
                {"n_classes", c.n_classes},
                {"temporal_filters", c.temporal_filters},
                {"depth_multiplier", c.depth_multiplier},
                {"pointwise_filters", c.pointwise_filters},
                {"temporal_kernel_len", c.temporal_kernel_len},
                {"sep_kernel_len", c.sep_kernel_len},
                {"pool1", c.pool1},
                {"pool2", c.pool2},
                {"d_model", c.d_model},
                {"n_heads", c.n_heads},
                {"n_encoder_layers", c.n_encoder_layers},
                {"ffn_dim", c.ffn_dim},
                {"patch_size", c.patch_size},
                {"dropout_conv", c.dropout_conv},
                {"dropout_encoder", c.dropout_encoder},
                {"use_positional_embeddings", c.use_positional_embeddings}};
}

inline json train_config_to_json(const TrainConfig& c) {
    return json{{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"learning_rate", c.learning_rate},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"adam_eps", c.adam_eps},
                {"weight_decay", c.weight_decay},
                {"folds", c.folds},
                {"seed", c.seed}};
}

namespace report_detail {

template <typename T>
void take(json& j, const char* key, T& out) {
    if (auto it = j.find(key); it != j.end()) {
        out = it->get<T>();
        j.erase(it);
    }
}

inline void reject_leftovers(const json& j, const std::string& where) {
    if (!j.empty()) {
        std::string keys;
        for (const auto& [k, v] : j.items()) keys += " \"" + k + "\"";
        throw ConfigError("unknown key(s) in " + where + ":" + keys);
    }
}

}  // namespace report_detail

inline void model_config_from_json(json j, ModelConfig& c) {
    using report_detail::take;
    take(j, "n_channels", c.n_channels);
    take(j, "n_samples", c.n_samples);
    take(j, "sampling_rate", c.sampling_rate);
    take(j, "n_classes", c.n_classes);
    take(j, "temporal_filters", c.temporal_filters);
    take(j, "depth_multiplier", c.depth_multiplier);
    take(j, "pointwise_filters", c.pointwise_filters);
    take(j, "temporal_kernel_len", c.temporal_kernel_len);
    take(j, "sep_kernel_len", c.sep_kernel_len);
    take(j, "pool1", c.pool1);
    take(j, "pool2", c.pool2);
    take(j, "d_model", c.d_model);
    take(j, "n_heads", c.n_heads);
    take(j, "n_encoder_layers", c.n_encoder_layers);
    take(j, "ffn_dim", c.ffn_dim);
    take(j, "patch_size", c.patch_size);
    take(j, "dropout_conv", c.dropout_conv);
    take(j, "dropout_encoder", c.dropout_encoder);
    take(j, "use_positional_embeddings", c.use_positional_embeddings);
    report_detail::reject_leftovers(j, "model config");
}

inline void train_config_from_json(json j, TrainConfig& c) {
    using report_detail::take;
    take(j, "epochs", c.epochs);
    take(j, "batch_size", c.batch_size);
    take(j, "learning_rate", c.learning_rate);
    take(j, "beta1", c.beta1);
    take(j, "beta2", c.beta2);
    take(j, "adam_eps", c.adam_eps);
    take(j, "weight_decay", c.weight_decay);
    take(j, "folds", c.folds);
    take(j, "seed", c.seed);
    report_detail::reject_leftovers(j, "train config");
}

// Loads {"model": {...}, "train": {...}} with strict key checking; both
// sections optional.
inline void load_run_config(const std::string& path, ModelConfig& mcfg,
                            TrainConfig& tcfg) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw ConfigError("config file " + path + ": " + e.what());
    }
    using report_detail::take;
    json model = json::object(), train = json::object();
    take(j, "model", model);
    take(j, "train", train);
    report_detail::reject_leftovers(j, "run config");
    model_config_from_json(model, mcfg);
    train_config_from_json(train, tcfg);
}

// ---------------------------------------------------------------------------
// Results documents
// ---------------------------------------------------------------------------

inline json fold_report_to_json(const FoldReport& r) {
    return json{{"fold_index", r.fold_index},
                {"test_accuracy", r.test_accuracy},
                {"confusion", r.confusion},
                {"train_loss_history", r.train_loss_history}};
}

inline json results_to_json(const ModelConfig& mcfg, const TrainConfig& tcfg,
                            const CvSummary& cv, const std::string& data_path,
                            double total_seconds) {
    json folds = json::array();
    for (const auto& f : cv.folds) folds.push_back(fold_report_to_json(f));
    return json{{"schema", "eegattn-results-v1"},
                {"config",
                 {{"model", model_config_to_json(mcfg)},
                  {"train", train_config_to_json(tcfg)},
                  {"data", data_path}}},
                {"folds", folds},
                {"summary",
                 {{"mean_accuracy", cv.mean_accuracy},
                  {"std_accuracy", cv.std_accuracy}}},
                {"timing", {{"total_s", total_seconds}}}};
}

// Per-fold test accuracies out of a results document.
inline std::vector<double> accuracies_from_results(const json& doc) {
    if (!doc.contains("folds") || !doc["folds"].is_array() || doc["folds"].empty())
        throw ConfigError("results document has no \"folds\" array");
    std::vector<double> acc;
    for (const auto& f : doc["folds"]) acc.push_back(f.at("test_accuracy").get<double>());
    return acc;
}

inline json load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open: " + path);
    json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return j;
}

inline void save_json(const json& j, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open for writing: " + path);
    os << j.dump(2) << "\n";
}

inline void confusion_to_csv(const FoldReport& r, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open for writing: " + path);
    for (const auto& row : r.confusion) {
        for (std::size_t i = 0; i < row.size(); ++i)
            os << (i ? "," : "") << row[i];
        os << "\n";
    }
}

}  // namespace eegattn
