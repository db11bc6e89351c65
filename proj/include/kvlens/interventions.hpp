#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kvlens/key_analysis.hpp"
#include "kvlens/matrix.hpp"
#include "kvlens/model.hpp"
#include "kvlens/synthdata.hpp"

// Knockout experiments over layer groups with size-matched controls, and the
// synthetic existence-QA harness the planted-noise study runs on.
namespace kvlens::interventions {

enum class Condition : int { none = 0, agnostic = 1, dependent = 2, random_heads = 3 };
const char* condition_name(Condition c);

struct ExistenceQA {
    synth::SyntheticScene scene;
    std::vector<int> question; // "is there a {shape} ?"
    int gold_yes = 0;
};

std::vector<ExistenceQA> make_qa_set(std::uint64_t seed, std::size_t n);

// Fixed seeded readout: row 0 yields the yes logit, row 1 the no logit, both
// linear in the final-position residual.
Matrix seeded_readout(std::uint64_t seed, std::size_t d_model);

int readout_answer(const Matrix& readout, std::span<const double> residual);

// F1 of the "yes" class; all-no predictions give 0 by convention.
double yes_f1(std::span<const int> answers, std::span<const int> gold);
double accuracy(std::span<const int> answers, std::span<const int> gold);

// Targets for one condition. agnostic: every agnostic head in the group.
// dependent / random_heads: equally many heads sampled (seeded, without
// replacement) from the group's dependent heads / all heads. A group with no
// agnostic heads yields an empty spec for every condition.
model::KnockoutSpec build_knockout(const key_analysis::KeyClassification& cls,
                                   key_analysis::LayerGroup group, Condition condition,
                                   std::uint64_t seed);

struct EvalResult {
    double f1 = 0.0;
    double accuracy = 0.0;
    std::vector<int> answers;
    std::vector<int> gold;
};

EvalResult run_existence_eval(const model::ModelWeights& w, const std::vector<ExistenceQA>& qa,
                              const Matrix& readout, const model::KnockoutSpec& spec);

struct InterventionRun {
    Condition condition;
    key_analysis::LayerGroup layer_group;
    model::KnockoutSpec spec;
    double f1 = 0.0;
    double accuracy = 0.0;
    std::size_t n_items = 0;
    std::uint64_t seed = 0;
};

// The planted-noise construction: a model whose existence answer flows
// through one input-dependent late-layer head, while planted input-agnostic
// late-layer heads inject seeded noise into the readout direction via
// attention from the question span to image keys. Blocking the agnostic
// heads removes exactly the noise; blocking the dependent controls removes
// the signal path.
struct StudyModel {
    model::ModelWeights weights;
    Matrix readout;
    key_analysis::KeyClassification classification;
    std::vector<std::pair<std::size_t, std::size_t>> agnostic_cells; // planted, late layers
    std::pair<std::size_t, std::size_t> signal_head;
};

StudyModel build_noise_study_model(std::uint64_t seed);

struct StudyReport {
    std::vector<InterventionRun> runs; // none, agnostic, dependent, random_heads
    std::uint64_t seed = 0;
    std::size_t n_items = 0;
};

StudyReport planted_noise_study(std::uint64_t seed, std::size_t n_items = 200);

// JSON array of {condition, layer_group, f1, accuracy, n_items, seed}; the
// CSV mirror uses that column order.
std::string report_to_json(const StudyReport& report);
std::string report_to_csv(const StudyReport& report);

} // namespace kvlens::interventions
