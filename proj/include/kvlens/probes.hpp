#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kvlens/matrix.hpp"
#include "kvlens/model.hpp"
#include "kvlens/synthdata.hpp"

// Probing procedures over cached image values at a chosen (layer, kv_head),
// plus the pooled-similarity readout. Each probe has a pure core operating on
// value matrices (used by the oracle tests) and a model-facing wrapper that
// runs the forward passes.
namespace kvlens::probes {

struct ProbeResult {
    synth::Task task;
    std::size_t layer = 0;
    std::size_t kv_head = 0;
    std::string metric; // mIoU | J_m | PCK | JandF | accuracy
    double value = 0.0;
    std::size_t n_episodes = 0;
    bool flagged = false; // degenerate input noted, metric still computed
};

struct SimilarityReadout {
    std::vector<double> pooled_query;
    Matrix pooled_options;            // one row per option
    std::vector<double> similarities; // cosine per option (-1 for zero vectors)
    std::size_t chosen = 0;           // argmax cosine, lowest index on ties
};

// ---- metric primitives (oracle-tested) ------------------------------------

// Foreground IoU; two empty masks count as a perfect match.
double binary_iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt);

// Exhaustive threshold minimizing within-class variance over the sorted
// values (midpoint of the boundary pair). nullopt when all values are equal.
std::optional<double> otsu_threshold(std::span<const double> scores);

// Mask patches with a 4-neighbor outside the mask (off-grid counts outside).
std::vector<std::uint8_t> boundary_mask(std::span<const std::uint8_t> mask, int grid_h,
                                        int grid_w);

// Boundary F1 with a 1-patch tolerance; both boundaries empty -> 1.0.
double boundary_f_score(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                        int grid_h, int grid_w);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// ---- probe cores over value matrices --------------------------------------

struct FgSegCore {
    double miou;
    bool flagged;
};
FgSegCore fg_seg_core(const std::vector<Matrix>& support_values,
                      const std::vector<std::vector<std::uint8_t>>& support_masks,
                      const std::vector<Matrix>& query_values,
                      const std::vector<std::vector<std::uint8_t>>& query_masks);

double co_seg_core(const std::vector<Matrix>& scene_values,
                   const std::vector<std::vector<std::uint8_t>>& scene_masks,
                   std::uint64_t seed);

double text_seg_core(const Matrix& image_values, std::span<const double> text_value,
                     std::span<const std::uint8_t> target_mask);

double sem_corr_core(const Matrix& src_values, const Matrix& dst_values,
                     const std::vector<synth::KeypointPair>& keypoints, int grid_h, int grid_w);

double temp_corr_core(const std::vector<Matrix>& frame_values,
                      std::span<const std::uint8_t> first_mask,
                      std::span<const std::uint8_t> final_gt_mask, int grid_h, int grid_w);

SimilarityReadout pooled_choice_core(const Matrix& query_values,
                                     const std::vector<Matrix>& option_values);

// ---- model-facing probes ---------------------------------------------------

// Image values of a scene at (layer, kv_head): one forward, no text.
Matrix image_values(const model::ModelWeights& w, const synth::SyntheticScene& scene,
                    std::size_t layer, std::size_t kv_head);

// Value vector of the final text token, computed causally before any image
// so it is bitwise independent of image content.
std::vector<double> text_token_value(const model::ModelWeights& w, std::span<const int> text,
                                     std::size_t layer, std::size_t kv_head);

ProbeResult probe_fg_seg(const model::ModelWeights& w, const synth::Episode& ep,
                         std::size_t layer, std::size_t kv_head);
ProbeResult probe_co_seg(const model::ModelWeights& w, const synth::Episode& ep,
                         std::size_t layer, std::size_t kv_head);
ProbeResult probe_text_seg(const model::ModelWeights& w, const synth::SyntheticScene& scene,
                           std::span<const int> text, std::size_t layer, std::size_t kv_head);
ProbeResult probe_sem_corr(const model::ModelWeights& w, const synth::Episode& ep,
                           std::size_t layer, std::size_t kv_head);
ProbeResult probe_temp_corr(const model::ModelWeights& w, const synth::Episode& ep,
                            std::size_t layer, std::size_t kv_head);

SimilarityReadout pooled_similarity_choice(const model::ModelWeights& w,
                                           const synth::SyntheticScene& query_scene,
                                           const std::vector<synth::SyntheticScene>& options,
                                           std::size_t layer, std::size_t kv_head);

// Dispatch on episode task (sem_seg/ref_seg evaluate text_seg on each query
// scene and average).
ProbeResult probe_episode(const model::ModelWeights& w, const synth::Episode& ep,
                          std::size_t layer, std::size_t kv_head);

// ---- sweep ------------------------------------------------------------------

struct SweepResult {
    synth::Task task;
    std::size_t n_layers = 0;
    std::size_t n_kv_heads = 0;
    std::vector<ProbeResult> grid;      // layer-major
    std::vector<double> per_layer_max;  // max over heads
    double global_max = 0.0;

    const ProbeResult& cell(std::size_t layer, std::size_t head) const {
        return grid[layer * n_kv_heads + head];
    }
};

SweepResult layer_head_sweep(const model::ModelWeights& w,
                             const std::vector<synth::Episode>& episodes, synth::Task task);

// CSV with columns: task,layer,kv_head,metric,value,n_episodes
std::string sweep_to_csv(const std::vector<ProbeResult>& results);

const char* metric_for_task(synth::Task task);

} // namespace kvlens::probes
