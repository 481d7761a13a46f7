#pragma once

#include <filesystem>
#include <optional>

#include <json.hpp>

#include "socialmkl/dataset.hpp"
#include "socialmkl/evaluation.hpp"

namespace socialmkl {

/// Everything one CLI run needs. Exactly one of `data` / `synthetic` is set.
struct RunConfig {
    std::optional<DatasetPaths> data;
    bool strict_load = false;
    std::optional<SyntheticParams> synthetic;
    EvaluationConfig evaluation;
    std::filesystem::path out = "out";

    void validate() const;
};

// JSON mappings. Readers reject unknown keys and wrong types with
// ParameterError; missing keys keep their defaults.
nlohmann::json to_json(const SyntheticParams& p);
SyntheticParams synthetic_params_from_json(const nlohmann::json& j);
nlohmann::json to_json(const KernelConfig& c);
KernelConfig kernel_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SvrConfig& c);
SvrConfig svr_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MklConfig& c);
MklConfig mkl_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BaselineConfig& c);
BaselineConfig baseline_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TuningConfig& c);
TuningConfig tuning_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EvaluationConfig& c);
nlohmann::json to_json(const RunConfig& c);

/// Relative data paths resolve against `base_dir`.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Loads or generates the dataset the config names.
Dataset load_run_dataset(const RunConfig& config);

}  // namespace socialmkl
