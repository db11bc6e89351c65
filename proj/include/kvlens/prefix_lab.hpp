#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kvlens/matrix.hpp"
#include "kvlens/model.hpp"
#include "kvlens/probes.hpp"
#include "kvlens/synthdata.hpp"

// Prefixing experiments: how a text prefix placed before the image changes
// image values and probe metrics, with random and incorrect controls.
namespace kvlens::prefix_lab {

enum class PrefixKind : int { none = 0, informative = 1, random_text = 2, incorrect = 3 };
const char* kind_name(PrefixKind kind);

struct PrefixCondition {
    PrefixKind kind = PrefixKind::none;
    std::vector<int> text;
};

// The fixed random-control sentence, tokenized by the shipped table.
const std::string& random_control_sentence();

// Task-aware condition construction: informative prefixes are the query
// scene's caption (ref_seg), the class shape word (sem_corr) or the domain
// template sentence (sem_seg); incorrect prefixes swap colors, class or
// domain. Episode tasks outside {ref_seg, sem_corr, sem_seg} are rejected.
PrefixCondition condition_for(PrefixKind kind, const synth::Episode& ep);

// Mean L2 distance between image values with and without the prefix, per
// (layer, kv_head), averaged over image positions. Both runs share identical
// image patches; spans are aligned by image-relative index.
Matrix kv_delta(const model::ModelWeights& w, const synth::SyntheticScene& scene,
                const PrefixCondition& condition);

// The base probe with the condition's prefix prepended to the image input.
probes::ProbeResult prefixed_probe(const model::ModelWeights& w, const synth::Episode& ep,
                                   const PrefixCondition& condition, std::size_t layer,
                                   std::size_t kv_head);

struct PrefixRow {
    synth::Task task;
    PrefixKind condition;
    std::size_t layer;
    std::size_t kv_head;
    std::string metric;
    double value;
};

// All four conditions in the fixed order none, informative, random, incorrect.
std::vector<PrefixRow> prefix_report(const model::ModelWeights& w, const synth::Episode& ep,
                                     std::size_t layer, std::size_t kv_head);

// CSV: task,condition,layer,kv_head,metric,value
std::string prefix_report_csv(const std::vector<PrefixRow>& rows);

// Planted construction: a model where prefix color words are copied into the
// residual of matching image patches and a later value head exposes the mark,
// so the informative prefix lifts referring-expression IoU to 1 while the
// unprefixed probe stays low.
struct PrefixDemo {
    model::ModelWeights weights;
    synth::Episode episode; // ref_seg, one query scene
    std::size_t probe_layer = 1;
    std::size_t probe_head = 2;
};

PrefixDemo build_prefix_demo(std::uint64_t seed);

} // namespace kvlens::prefix_lab
