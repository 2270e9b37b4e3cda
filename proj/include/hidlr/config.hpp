#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "hidlr/controller.hpp"
#include "hidlr/optim.hpp"

namespace hidlr {

enum class Method { hidlr, hiulr, constant, linear, cosine, grid };

std::string to_string(Method m);

struct ProblemSpec {
    std::string id = "ellipse";
    std::vector<std::size_t> hidden{32, 32};   // nam-synthetic, california-housing
    std::string csv;                            // california-housing
    std::string target = "MedHouseVal";         // california-housing
    std::size_t dim = 64;                       // lora-synthetic
    std::size_t rank = 4;                       // lora-synthetic
    std::size_t n_tasks = 40;                   // multitask
    std::size_t n_train = 0;                    // 0: problem default
    std::size_t n_test = 0;                     // 0: problem default
};

struct DiagSpec {
    std::size_t iteration = 200;
    Vec multipliers{-4.0, -3.0, -2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0};
};

struct ExperimentConfig {
    ProblemSpec problem;
    std::string grouping = "default";
    Method method = Method::hidlr;
    OptimizerKind optimizer = OptimizerKind::sgd;
    OptimizerHyper hyper;
    HiDlrConfig hidlr;      // eta0 may be empty: every group starts at eta0_default
    double eta0_default = 1e-3;
    Vec lr{1e-3};           // scheduled methods: one value (ULR) or one per group (static DLR)
    Vec grid;               // grid method; empty: {1e-5 * 10^(k/2)}_{k=0..11}
    std::size_t iterations = 0;  // full-batch / explicit step count; 0: derive from epochs
    std::size_t epochs = 1;
    std::size_t batch_size = 0;  // 0: full batch
    std::uint64_t seed = 0;
    std::string out;
    DiagSpec diag;
};

// Names accepted by the "preset" key.
std::vector<std::string> preset_names();
nlohmann::ordered_json preset_json(std::string_view name);

// Resolves preset, file values and key=value overrides (dotted paths, values
// parsed as JSON with a bare-string fallback) into a fully defaulted config.
// Unknown keys and type errors raise ParseError naming the key path;
// violated invariants raise ValidationError.
ExperimentConfig config_from_json(const nlohmann::ordered_json& doc,
                                  const std::vector<std::string>& overrides = {});
ExperimentConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
ExperimentConfig parse_config_text(std::string_view text, const std::vector<std::string>& overrides = {});

nlohmann::ordered_json to_json(const ExperimentConfig& cfg);

}  // namespace hidlr
