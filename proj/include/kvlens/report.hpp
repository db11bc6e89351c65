#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kvlens/model.hpp"
#include "kvlens/synthdata.hpp"

// Experiment runner: wires a JSON config to the experiments, emits CSV/JSON
// artifacts and a manifest with checksums, and carries the paired-task gap
// accounting.
namespace kvlens::report {

inline constexpr const char* kToolVersion = "kvlens 0.1.0";

struct PairedAccount {
    std::size_t both_correct = 0;
    std::size_t value_only = 0;  // value right, model wrong
    std::size_t model_only = 0;  // model right, value wrong
    std::size_t both_wrong = 0;
    double union_accuracy = 0.0;

    std::size_t total() const { return both_correct + value_only + model_only + both_wrong; }
};

// Exact 2x2 tally; throws on length mismatch or empty input.
PairedAccount paired_account(std::span<const int> model_correct,
                             std::span<const int> value_correct);

enum class Experiment : int {
    sweep = 0,
    variance = 1,
    knockout = 2,
    prefix = 3,
    paired = 4,
    pca_export = 5,
};

const char* experiment_name(Experiment e);

struct RunConfig {
    Experiment experiment = Experiment::sweep;
    std::uint64_t seed = 0;
    std::string out_dir = "out";
    std::optional<double> threshold; // manual variance threshold

    model::ModelConfig model;        // used unless weights_path is set
    std::string weights_path;        // load instead of building
    std::vector<std::pair<std::size_t, std::size_t>> planted; // PlantSpec targets
    double plant_input_gain = 0.0;
    double plant_bias_scale = 5.0;
    bool plant_value_head = false;   // probe-value construction on kv_head

    synth::Task task = synth::Task::sem_seg; // sweep
    std::size_t n_episodes = 4;
    std::size_t n_scenes = 8;        // variance / pca-export
    std::size_t n_items = 200;       // knockout
    std::size_t n_pairs = 24;        // paired
    std::size_t n_options = 3;       // paired
    std::size_t layer = 0;           // pca-export / paired value side
    std::size_t kv_head = 0;
    bool reselect = false;           // prefix: re-pick the best cell per condition
    int n_objects = 2;

    // Canonical JSON of the effective config (hashed into the manifest).
    std::string canonical_json() const;
};

// Parse a config document; unknown experiment names or malformed fields are
// std::invalid_argument. CLI overrides are applied by the caller.
RunConfig parse_config(const std::string& json_text);

struct Artifact {
    std::string path; // relative to out_dir
    std::string sha256;
};

struct RunResult {
    std::vector<Artifact> artifacts;
    std::string manifest_path;
    std::string manifest_json;
};

// Runs the configured experiment, writes artifacts and manifest.json under
// config.out_dir. Deterministic: identical configs yield identical artifact
// bytes and checksums.
RunResult run(const RunConfig& config);

} // namespace kvlens::report
