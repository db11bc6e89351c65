#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kvlens/matrix.hpp"
#include "kvlens/model.hpp"
#include "kvlens/synthdata.hpp"

// Variance statistics over image keys across a scene set, bimodal
// thresholding into input-agnostic vs input-dependent heads, and PCA export
// of keys for visualization.
namespace kvlens::key_analysis {

struct VarianceMap {
    std::size_t n_layers = 0;
    std::size_t n_kv_heads = 0;
    std::size_t n_scenes = 0;
    std::vector<double> variance; // layer-major, nonnegative

    double at(std::size_t layer, std::size_t head) const {
        return variance[layer * n_kv_heads + head];
    }
};

// Trace variance across scenes at fixed position, averaged over positions:
// mean_p mean_s ||k_s(p) - mean_s' k_s'(p)||^2. Insensitive to the fixed
// per-position rope rotation.
double trace_variance(const std::vector<Matrix>& per_scene_keys);

VarianceMap variance_map(const model::ModelWeights& w,
                         const std::vector<synth::SyntheticScene>& scenes);

struct BimodalSplit {
    double threshold;
    double mode_low;
    double mode_high;
};

// Kernel-smoothed histogram (64 bins over the data range, Gaussian bandwidth
// range/16); modes are the two highest local maxima and the threshold is the
// density argmin strictly between them. nullopt when fewer than two local
// maxima form. Requires at least 4 values.
std::optional<BimodalSplit> bimodal_threshold(std::span<const double> values);

enum class KeyLabel : int { dependent = 0, agnostic = 1 };
enum class LayerGroup : int { early = 0, middle = 1, late = 2 };

struct KeyClassification {
    double threshold = 0.0;
    std::size_t n_layers = 0;
    std::size_t n_kv_heads = 0;
    std::vector<KeyLabel> labels; // layer-major; agnostic iff variance < threshold
    std::size_t early_end = 0;    // early = [0, early_end)
    std::size_t late_begin = 0;   // late = [late_begin, n_layers)

    KeyLabel at(std::size_t layer, std::size_t head) const {
        return labels[layer * n_kv_heads + head];
    }
    LayerGroup group_of(std::size_t layer) const {
        if (layer < early_end) return LayerGroup::early;
        if (layer >= late_begin) return LayerGroup::late;
        return LayerGroup::middle;
    }
};

const char* label_name(KeyLabel label);
const char* group_name(LayerGroup group);

// Threshold from bimodal_threshold unless one is given. Throws
// std::runtime_error when no split exists and no manual threshold is given.
KeyClassification classify_keys(const VarianceMap& vmap,
                                std::optional<double> threshold = std::nullopt);

// PCA of all image keys pooled over the scenes at (layer, kv_head); each
// scene's keys projected to k components, min-max scaled to [0,1] per
// component over the pooled projections (constant components map to 0).
std::vector<Matrix> export_key_pca(const model::ModelWeights& w,
                                   const std::vector<synth::SyntheticScene>& scenes,
                                   std::size_t layer, std::size_t kv_head, std::size_t k = 3);

// CSV: layer,kv_head,variance,label
std::string variance_to_csv(const VarianceMap& vmap, const KeyClassification* cls = nullptr);

// CSV: scene_id,position,row,col,c1,c2,c3
std::string key_pca_to_csv(const std::vector<Matrix>& per_scene, int grid_w);

} // namespace kvlens::key_analysis
