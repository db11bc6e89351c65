#include "kvlens/probes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "kvlens/io_util.hpp"
#include "kvlens/kernels.hpp"
#include "kvlens/numerics.hpp"
#include "kvlens/rng.hpp"

namespace kvlens::probes {

double binary_iou(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt) {
    if (pred.size() != gt.size()) throw std::invalid_argument("binary_iou: size mismatch");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        inter += (p && g) ? 1 : 0;
        uni += (p || g) ? 1 : 0;
    }
    if (uni == 0) return 1.0; // both empty: nothing to miss
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::optional<double> otsu_threshold(std::span<const double> scores) {
    std::vector<double> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    if (n < 2 || sorted.front() == sorted.back()) return std::nullopt;

    // Prefix sums for O(n) within-class variance at each split.
    std::vector<double> prefix(n + 1, 0.0), prefix_sq(n + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        prefix[i + 1] = prefix[i] + sorted[i];
        prefix_sq[i + 1] = prefix_sq[i] + sorted[i] * sorted[i];
    }
    auto class_var = [&](std::size_t lo, std::size_t hi) { // [lo, hi)
        const double cnt = static_cast<double>(hi - lo);
        const double mean = (prefix[hi] - prefix[lo]) / cnt;
        return (prefix_sq[hi] - prefix_sq[lo]) - cnt * mean * mean;
    };

    double best = std::numeric_limits<double>::infinity();
    std::size_t best_split = 0; // classes [0, s), [s, n)
    for (std::size_t s = 1; s < n; ++s) {
        if (sorted[s] == sorted[s - 1]) continue; // not a realizable threshold
        const double wcv = class_var(0, s) + class_var(s, n);
        if (wcv < best) {
            best = wcv;
            best_split = s;
        }
    }
    return 0.5 * (sorted[best_split - 1] + sorted[best_split]);
}

std::vector<std::uint8_t> boundary_mask(std::span<const std::uint8_t> mask, int grid_h,
                                        int grid_w) {
    std::vector<std::uint8_t> out(mask.size(), 0);
    auto inside = [&](int r, int c) {
        return r >= 0 && c >= 0 && r < grid_h && c < grid_w &&
               mask[static_cast<std::size_t>(r * grid_w + c)] != 0;
    };
    for (int r = 0; r < grid_h; ++r) {
        for (int c = 0; c < grid_w; ++c) {
            if (!mask[static_cast<std::size_t>(r * grid_w + c)]) continue;
            const bool edge = !inside(r - 1, c) || !inside(r + 1, c) || !inside(r, c - 1) ||
                              !inside(r, c + 1);
            if (edge) out[static_cast<std::size_t>(r * grid_w + c)] = 1;
        }
    }
    return out;
}

namespace {

std::vector<std::pair<int, int>> mask_cells(std::span<const std::uint8_t> mask, int grid_w) {
    std::vector<std::pair<int, int>> cells;
    for (std::size_t p = 0; p < mask.size(); ++p)
        if (mask[p])
            cells.emplace_back(static_cast<int>(p) / grid_w, static_cast<int>(p) % grid_w);
    return cells;
}

double match_fraction(const std::vector<std::pair<int, int>>& from,
                      const std::vector<std::pair<int, int>>& to, double tol) {
    if (from.empty()) return 0.0;
    std::size_t hit = 0;
    for (auto [r, c] : from) {
        double best = std::numeric_limits<double>::infinity();
        for (auto [r2, c2] : to) {
            const double d = std::hypot(double(r - r2), double(c - c2));
            best = std::min(best, d);
        }
        if (best <= tol) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(from.size());
}

} // namespace

double boundary_f_score(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                        int grid_h, int grid_w) {
    const auto bp = boundary_mask(pred, grid_h, grid_w);
    const auto bg = boundary_mask(gt, grid_h, grid_w);
    const auto cp = mask_cells(bp, grid_w);
    const auto cg = mask_cells(bg, grid_w);
    if (cp.empty() && cg.empty()) return 1.0;
    if (cp.empty() || cg.empty()) return 0.0;
    const double tol = 1.0;
    const double precision = match_fraction(cp, cg, tol);
    const double recall = match_fraction(cg, cp, tol);
    if (precision + recall == 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    const double na = std::sqrt(kernels::dot(a.data(), a.data(), a.size()));
    const double nb = std::sqrt(kernels::dot(b.data(), b.data(), b.size()));
    if (na == 0.0 || nb == 0.0) return 0.0;
    return kernels::dot(a.data(), b.data(), a.size()) / (na * nb);
}

FgSegCore fg_seg_core(const std::vector<Matrix>& support_values,
                      const std::vector<std::vector<std::uint8_t>>& support_masks,
                      const std::vector<Matrix>& query_values,
                      const std::vector<std::vector<std::uint8_t>>& query_masks) {
    if (support_values.empty() || support_values.size() != support_masks.size() ||
        query_values.size() != query_masks.size())
        throw std::invalid_argument("fg_seg_core: inconsistent inputs");

    const std::size_t d = support_values[0].cols;
    std::size_t total = 0;
    for (const auto& m : support_values) total += m.rows;
    Matrix features(total, d);
    std::vector<int> labels(total);
    std::size_t row = 0;
    for (std::size_t s = 0; s < support_values.size(); ++s) {
        for (std::size_t p = 0; p < support_values[s].rows; ++p, ++row) {
            std::copy(support_values[s].row(p).begin(), support_values[s].row(p).end(),
                      features.row_mut(row).begin());
            labels[row] = support_masks[s][p] ? 1 : 0;
        }
    }
    const bool all_one = std::all_of(labels.begin(), labels.end(), [](int v) { return v == 1; });
    const bool all_zero = std::all_of(labels.begin(), labels.end(), [](int v) { return v == 0; });
    FgSegCore out{0.0, all_one || all_zero};

    auto model = numerics::logistic_fit(features, labels);
    double iou_sum = 0.0;
    for (std::size_t q = 0; q < query_values.size(); ++q) {
        std::vector<std::uint8_t> pred(query_values[q].rows, 0);
        for (std::size_t p = 0; p < query_values[q].rows; ++p)
            pred[p] = numerics::logistic_predict(model, query_values[q].row(p)) > 0.5 ? 1 : 0;
        iou_sum += binary_iou(pred, query_masks[q]);
    }
    out.miou = query_values.empty() ? 0.0 : iou_sum / static_cast<double>(query_values.size());
    return out;
}

double co_seg_core(const std::vector<Matrix>& scene_values,
                   const std::vector<std::vector<std::uint8_t>>& scene_masks,
                   std::uint64_t seed) {
    if (scene_values.size() < 2 || scene_values.size() != scene_masks.size())
        throw std::invalid_argument("co_seg_core: need >=2 scenes");
    const std::size_t d = scene_values[0].cols;
    std::size_t total = 0;
    for (const auto& m : scene_values) total += m.rows;
    Matrix stacked(total, d);
    std::size_t row = 0;
    for (const auto& m : scene_values)
        for (std::size_t p = 0; p < m.rows; ++p, ++row)
            std::copy(m.row(p).begin(), m.row(p).end(), stacked.row_mut(row).begin());

    auto km = numerics::kmeans(stacked, 2, seed);

    double best = 0.0;
    for (int fg_cluster = 0; fg_cluster < 2; ++fg_cluster) {
        double iou_sum = 0.0;
        std::size_t offset = 0;
        for (std::size_t s = 0; s < scene_values.size(); ++s) {
            std::vector<std::uint8_t> pred(scene_values[s].rows, 0);
            for (std::size_t p = 0; p < scene_values[s].rows; ++p)
                pred[p] = km.labels[offset + p] == fg_cluster ? 1 : 0;
            iou_sum += binary_iou(pred, scene_masks[s]);
            offset += scene_values[s].rows;
        }
        best = std::max(best, iou_sum / static_cast<double>(scene_values.size()));
    }
    return best;
}

double text_seg_core(const Matrix& image_values, std::span<const double> text_value,
                     std::span<const std::uint8_t> target_mask) {
    std::vector<double> scores(image_values.rows);
    for (std::size_t p = 0; p < image_values.rows; ++p)
        scores[p] = kernels::dot(image_values.row(p).data(), text_value.data(),
                                 text_value.size());
    std::vector<std::uint8_t> pred(image_values.rows, 1);
    if (auto thr = otsu_threshold(scores)) {
        for (std::size_t p = 0; p < scores.size(); ++p) pred[p] = scores[p] > *thr ? 1 : 0;
    }
    // All scores equal: the split degenerates to all-foreground.
    return binary_iou(pred, target_mask);
}

double sem_corr_core(const Matrix& src_values, const Matrix& dst_values,
                     const std::vector<synth::KeypointPair>& keypoints, int grid_h,
                     int grid_w) {
    if (keypoints.empty()) throw std::invalid_argument("sem_corr_core: no keypoints");
    const double threshold = 0.1 * static_cast<double>(std::max(grid_h, grid_w));
    std::size_t correct = 0;
    for (const auto& kp : keypoints) {
        const std::size_t src_pos =
            static_cast<std::size_t>(kp.src_row * grid_w + kp.src_col);
        double best_sim = -std::numeric_limits<double>::infinity();
        std::size_t best_pos = 0;
        for (std::size_t j = 0; j < dst_values.rows; ++j) {
            const double sim = cosine_similarity(src_values.row(src_pos), dst_values.row(j));
            if (sim > best_sim) {
                best_sim = sim;
                best_pos = j;
            }
        }
        const int pr = static_cast<int>(best_pos) / grid_w;
        const int pc = static_cast<int>(best_pos) % grid_w;
        const double dist = std::hypot(double(pr - kp.dst_row), double(pc - kp.dst_col));
        if (dist <= threshold) ++correct; // boundary counts as correct
    }
    return static_cast<double>(correct) / static_cast<double>(keypoints.size());
}

double temp_corr_core(const std::vector<Matrix>& frame_values,
                      std::span<const std::uint8_t> first_mask,
                      std::span<const std::uint8_t> final_gt_mask, int grid_h, int grid_w) {
    if (frame_values.size() < 2) throw std::invalid_argument("temp_corr_core: need >=2 frames");
    std::vector<std::uint8_t> labels(first_mask.begin(), first_mask.end());
    for (std::size_t t = 1; t < frame_values.size(); ++t) {
        const Matrix& prev = frame_values[t - 1];
        const Matrix& cur = frame_values[t];
        std::vector<std::uint8_t> next(cur.rows, 0);
        for (std::size_t p = 0; p < cur.rows; ++p) {
            double best_sim = -std::numeric_limits<double>::infinity();
            std::size_t best_pos = 0;
            for (std::size_t j = 0; j < prev.rows; ++j) {
                const double sim = cosine_similarity(cur.row(p), prev.row(j));
                if (sim > best_sim) {
                    best_sim = sim;
                    best_pos = j;
                }
            }
            next[p] = labels[best_pos];
        }
        labels = std::move(next);
    }
    const double j_final = binary_iou(labels, final_gt_mask);
    const double f_final = boundary_f_score(labels, final_gt_mask, grid_h, grid_w);
    return 0.5 * (j_final + f_final);
}

SimilarityReadout pooled_choice_core(const Matrix& query_values,
                                     const std::vector<Matrix>& option_values) {
    if (option_values.size() < 2)
        throw std::invalid_argument("pooled_choice_core: need >=2 options");
    auto pool = [](const Matrix& m) {
        std::vector<double> mean(m.cols, 0.0);
        for (std::size_t p = 0; p < m.rows; ++p)
            for (std::size_t j = 0; j < m.cols; ++j) mean[j] += m.at(p, j);
        for (auto& v : mean) v /= static_cast<double>(m.rows);
        return mean;
    };
    SimilarityReadout out;
    out.pooled_query = pool(query_values);
    out.pooled_options = Matrix(option_values.size(), query_values.cols);
    const double qnorm = std::sqrt(kernels::dot(out.pooled_query.data(),
                                                out.pooled_query.data(),
                                                out.pooled_query.size()));
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t o = 0; o < option_values.size(); ++o) {
        auto pooled = pool(option_values[o]);
        std::copy(pooled.begin(), pooled.end(), out.pooled_options.row_mut(o).begin());
        const double onorm = std::sqrt(kernels::dot(pooled.data(), pooled.data(), pooled.size()));
        double sim;
        if (qnorm == 0.0 || onorm == 0.0) {
            sim = -1.0; // zero pooled vector
        } else {
            sim = kernels::dot(out.pooled_query.data(), pooled.data(), pooled.size()) /
                  (qnorm * onorm);
        }
        out.similarities.push_back(sim);
        if (sim > best) {
            best = sim;
            out.chosen = o;
        }
    }
    return out;
}

Matrix image_values(const model::ModelWeights& w, const synth::SyntheticScene& scene,
                    std::size_t layer, std::size_t kv_head) {
    model::MultimodalInput in;
    in.image_patches = scene.patches;
    auto res = model::forward(w, in);
    return model::image_kv(res.cache, layer, kv_head).values;
}

std::vector<double> text_token_value(const model::ModelWeights& w, std::span<const int> text,
                                     std::size_t layer, std::size_t kv_head) {
    if (text.empty()) throw std::invalid_argument("text_token_value: empty text");
    model::MultimodalInput in;
    in.prefix_text.assign(text.begin(), text.end());
    auto res = model::forward(w, in);
    auto v = res.cache.value_at(layer, kv_head, text.size() - 1);
    return std::vector<double>(v.begin(), v.end());
}

namespace {

std::uint64_t cell_seed(std::uint64_t episode_seed, std::size_t layer, std::size_t kv_head) {
    return Rng(episode_seed).child(0xc05e9 + layer * 97 + kv_head).root_seed();
}

std::vector<std::uint8_t> primary_mask(const synth::SyntheticScene& scene) {
    return scene.primary().mask;
}

} // namespace

ProbeResult probe_fg_seg(const model::ModelWeights& w, const synth::Episode& ep,
                         std::size_t layer, std::size_t kv_head) {
    if (ep.task != synth::Task::fg_seg) throw std::invalid_argument("probe_fg_seg: wrong task");
    std::vector<Matrix> sv, qv;
    std::vector<std::vector<std::uint8_t>> sm, qm;
    for (const auto& s : ep.support) {
        sv.push_back(image_values(w, s, layer, kv_head));
        sm.push_back(primary_mask(s));
    }
    for (const auto& s : ep.query) {
        qv.push_back(image_values(w, s, layer, kv_head));
        qm.push_back(primary_mask(s));
    }
    auto core = fg_seg_core(sv, sm, qv, qm);
    return {ep.task, layer, kv_head, "mIoU", core.miou, 1, core.flagged};
}

ProbeResult probe_co_seg(const model::ModelWeights& w, const synth::Episode& ep,
                         std::size_t layer, std::size_t kv_head) {
    if (ep.task != synth::Task::co_seg) throw std::invalid_argument("probe_co_seg: wrong task");
    std::vector<Matrix> values;
    std::vector<std::vector<std::uint8_t>> masks;
    for (const auto& s : ep.support) {
        values.push_back(image_values(w, s, layer, kv_head));
        masks.push_back(primary_mask(s));
    }
    const double jm = co_seg_core(values, masks, cell_seed(ep.seed, layer, kv_head));
    return {ep.task, layer, kv_head, "J_m", jm, 1, false};
}

ProbeResult probe_text_seg(const model::ModelWeights& w, const synth::SyntheticScene& scene,
                           std::span<const int> text, std::size_t layer, std::size_t kv_head) {
    const auto tval = text_token_value(w, text, layer, kv_head);
    const auto values = image_values(w, scene, layer, kv_head);
    const double iou = text_seg_core(values, tval, primary_mask(scene));
    return {synth::Task::sem_seg, layer, kv_head, "mIoU", iou, 1, false};
}

ProbeResult probe_sem_corr(const model::ModelWeights& w, const synth::Episode& ep,
                           std::size_t layer, std::size_t kv_head) {
    if (ep.task != synth::Task::sem_corr)
        throw std::invalid_argument("probe_sem_corr: wrong task");
    const auto src = image_values(w, ep.support.at(0), layer, kv_head);
    const auto dst = image_values(w, ep.query.at(0), layer, kv_head);
    const double pck = sem_corr_core(src, dst, ep.keypoints, ep.support[0].grid_h,
                                     ep.support[0].grid_w);
    return {ep.task, layer, kv_head, "PCK", pck, 1, false};
}

ProbeResult probe_temp_corr(const model::ModelWeights& w, const synth::Episode& ep,
                            std::size_t layer, std::size_t kv_head) {
    if (ep.task != synth::Task::temp_corr)
        throw std::invalid_argument("probe_temp_corr: wrong task");
    std::vector<Matrix> values;
    for (const auto& f : ep.frames) values.push_back(image_values(w, f, layer, kv_head));
    const double jf = temp_corr_core(values, primary_mask(ep.frames.front()),
                                     primary_mask(ep.frames.back()), ep.frames[0].grid_h,
                                     ep.frames[0].grid_w);
    return {ep.task, layer, kv_head, "JandF", jf, 1, false};
}

SimilarityReadout pooled_similarity_choice(const model::ModelWeights& w,
                                           const synth::SyntheticScene& query_scene,
                                           const std::vector<synth::SyntheticScene>& options,
                                           std::size_t layer, std::size_t kv_head) {
    const auto qv = image_values(w, query_scene, layer, kv_head);
    std::vector<Matrix> ov;
    for (const auto& s : options) ov.push_back(image_values(w, s, layer, kv_head));
    return pooled_choice_core(qv, ov);
}

ProbeResult probe_episode(const model::ModelWeights& w, const synth::Episode& ep,
                          std::size_t layer, std::size_t kv_head) {
    switch (ep.task) {
        case synth::Task::fg_seg: return probe_fg_seg(w, ep, layer, kv_head);
        case synth::Task::co_seg: return probe_co_seg(w, ep, layer, kv_head);
        case synth::Task::sem_seg:
        case synth::Task::ref_seg: {
            double sum = 0.0;
            for (const auto& s : ep.query) {
                auto r = probe_text_seg(w, s, ep.text, layer, kv_head);
                sum += r.value;
            }
            return {ep.task, layer, kv_head, "mIoU",
                    sum / static_cast<double>(ep.query.size()), 1, false};
        }
        case synth::Task::sem_corr: return probe_sem_corr(w, ep, layer, kv_head);
        case synth::Task::temp_corr: return probe_temp_corr(w, ep, layer, kv_head);
        case synth::Task::existence_qa:
            throw std::invalid_argument("probe_episode: existence_qa is not a value probe");
    }
    throw std::invalid_argument("probe_episode: unknown task");
}

const char* metric_for_task(synth::Task task) {
    switch (task) {
        case synth::Task::fg_seg:
        case synth::Task::sem_seg:
        case synth::Task::ref_seg: return "mIoU";
        case synth::Task::co_seg: return "J_m";
        case synth::Task::sem_corr: return "PCK";
        case synth::Task::temp_corr: return "JandF";
        case synth::Task::existence_qa: return "accuracy";
    }
    return "value";
}

SweepResult layer_head_sweep(const model::ModelWeights& w,
                             const std::vector<synth::Episode>& episodes, synth::Task task) {
    if (episodes.empty()) throw std::invalid_argument("layer_head_sweep: no episodes");
    const auto& cfg = w.config;
    SweepResult out;
    out.task = task;
    out.n_layers = cfg.n_layers;
    out.n_kv_heads = cfg.n_kv_heads;
    out.grid.assign(cfg.n_layers * cfg.n_kv_heads,
                    ProbeResult{task, 0, 0, metric_for_task(task), 0.0, episodes.size(), false});

    // One forward per scene; every (layer, head) cell reads the same caches.
    for (const auto& ep : episodes) {
        if (ep.task != task) throw std::invalid_argument("layer_head_sweep: mixed tasks");
        std::vector<model::ForwardResult> support, query, frames;
        for (const auto& s : ep.support) {
            model::MultimodalInput in;
            in.image_patches = s.patches;
            support.push_back(model::forward(w, in));
        }
        for (const auto& s : ep.query) {
            model::MultimodalInput in;
            in.image_patches = s.patches;
            query.push_back(model::forward(w, in));
        }
        for (const auto& s : ep.frames) {
            model::MultimodalInput in;
            in.image_patches = s.patches;
            frames.push_back(model::forward(w, in));
        }
        std::optional<model::ForwardResult> text_fw;
        if (!ep.text.empty()) {
            model::MultimodalInput in;
            in.prefix_text = ep.text;
            text_fw = model::forward(w, in);
        }

        for (std::size_t l = 0; l < cfg.n_layers; ++l) {
            for (std::size_t h = 0; h < cfg.n_kv_heads; ++h) {
                auto& cell = out.grid[l * cfg.n_kv_heads + h];
                cell.layer = l;
                cell.kv_head = h;
                double value = 0.0;
                bool flagged = false;
                switch (task) {
                    case synth::Task::fg_seg: {
                        std::vector<Matrix> sv, qv;
                        std::vector<std::vector<std::uint8_t>> sm, qm;
                        for (std::size_t i = 0; i < support.size(); ++i) {
                            sv.push_back(model::image_kv(support[i].cache, l, h).values);
                            sm.push_back(primary_mask(ep.support[i]));
                        }
                        for (std::size_t i = 0; i < query.size(); ++i) {
                            qv.push_back(model::image_kv(query[i].cache, l, h).values);
                            qm.push_back(primary_mask(ep.query[i]));
                        }
                        auto core = fg_seg_core(sv, sm, qv, qm);
                        value = core.miou;
                        flagged = core.flagged;
                        break;
                    }
                    case synth::Task::co_seg: {
                        std::vector<Matrix> values;
                        std::vector<std::vector<std::uint8_t>> masks;
                        for (std::size_t i = 0; i < support.size(); ++i) {
                            values.push_back(model::image_kv(support[i].cache, l, h).values);
                            masks.push_back(primary_mask(ep.support[i]));
                        }
                        value = co_seg_core(values, masks, cell_seed(ep.seed, l, h));
                        break;
                    }
                    case synth::Task::sem_seg:
                    case synth::Task::ref_seg: {
                        auto tv = text_fw->cache.value_at(l, h, ep.text.size() - 1);
                        double sum = 0.0;
                        for (std::size_t i = 0; i < query.size(); ++i) {
                            auto values = model::image_kv(query[i].cache, l, h).values;
                            sum += text_seg_core(values, tv, primary_mask(ep.query[i]));
                        }
                        value = sum / static_cast<double>(query.size());
                        break;
                    }
                    case synth::Task::sem_corr: {
                        auto src = model::image_kv(support[0].cache, l, h).values;
                        auto dst = model::image_kv(query[0].cache, l, h).values;
                        value = sem_corr_core(src, dst, ep.keypoints, ep.support[0].grid_h,
                                              ep.support[0].grid_w);
                        break;
                    }
                    case synth::Task::temp_corr: {
                        std::vector<Matrix> values;
                        for (auto& f : frames)
                            values.push_back(model::image_kv(f.cache, l, h).values);
                        value = temp_corr_core(values, primary_mask(ep.frames.front()),
                                               primary_mask(ep.frames.back()),
                                               ep.frames[0].grid_h, ep.frames[0].grid_w);
                        break;
                    }
                    case synth::Task::existence_qa:
                        throw std::invalid_argument("layer_head_sweep: existence_qa");
                }
                cell.value += value / static_cast<double>(episodes.size());
                cell.flagged = cell.flagged || flagged;
            }
        }
    }

    out.per_layer_max.assign(cfg.n_layers, 0.0);
    out.global_max = 0.0;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        double m = 0.0;
        for (std::size_t h = 0; h < cfg.n_kv_heads; ++h)
            m = std::max(m, out.cell(l, h).value);
        out.per_layer_max[l] = m;
        out.global_max = std::max(out.global_max, m);
    }
    return out;
}

std::string sweep_to_csv(const std::vector<ProbeResult>& results) {
    std::ostringstream os;
    os << "task,layer,kv_head,metric,value,n_episodes\n";
    for (const auto& r : results) {
        os << synth::task_name(r.task) << ',' << r.layer << ',' << r.kv_head << ',' << r.metric
           << ',' << io::format_double(r.value) << ',' << r.n_episodes << '\n';
    }
    return os.str();
}

} // namespace kvlens::probes
