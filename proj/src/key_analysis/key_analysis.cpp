#include "kvlens/key_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "kvlens/io_util.hpp"
#include "kvlens/kernels.hpp"
#include "kvlens/numerics.hpp"

namespace kvlens::key_analysis {

double trace_variance(const std::vector<Matrix>& per_scene_keys) {
    if (per_scene_keys.size() < 2)
        throw std::invalid_argument("trace_variance: need at least 2 scenes");
    const std::size_t n_pos = per_scene_keys[0].rows;
    const std::size_t d = per_scene_keys[0].cols;
    for (const auto& m : per_scene_keys)
        if (m.rows != n_pos || m.cols != d)
            throw std::invalid_argument("trace_variance: mismatched key matrices");
    const double n_scenes = static_cast<double>(per_scene_keys.size());

    double total = 0.0;
    std::vector<double> mean(d);
    for (std::size_t p = 0; p < n_pos; ++p) {
        std::fill(mean.begin(), mean.end(), 0.0);
        for (const auto& m : per_scene_keys)
            for (std::size_t j = 0; j < d; ++j) mean[j] += m.at(p, j);
        for (auto& v : mean) v /= n_scenes;
        double acc = 0.0;
        for (const auto& m : per_scene_keys)
            acc += kernels::l2sq(m.row(p).data(), mean.data(), d);
        total += acc / n_scenes;
    }
    return total / static_cast<double>(n_pos);
}

VarianceMap variance_map(const model::ModelWeights& w,
                         const std::vector<synth::SyntheticScene>& scenes) {
    if (scenes.size() < 2) throw std::invalid_argument("variance_map: need at least 2 scenes");
    for (const auto& s : scenes)
        if (s.grid_h != scenes[0].grid_h || s.grid_w != scenes[0].grid_w)
            throw std::invalid_argument("variance_map: mismatched scene grids");

    const auto& cfg = w.config;
    std::vector<model::ForwardResult> runs;
    runs.reserve(scenes.size());
    for (const auto& s : scenes) {
        model::MultimodalInput in;
        in.image_patches = s.patches;
        runs.push_back(model::forward(w, in));
    }

    VarianceMap vmap;
    vmap.n_layers = cfg.n_layers;
    vmap.n_kv_heads = cfg.n_kv_heads;
    vmap.n_scenes = scenes.size();
    vmap.variance.assign(cfg.n_layers * cfg.n_kv_heads, 0.0);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        for (std::size_t h = 0; h < cfg.n_kv_heads; ++h) {
            std::vector<Matrix> keys;
            keys.reserve(runs.size());
            for (const auto& r : runs) keys.push_back(model::image_kv(r.cache, l, h).keys);
            vmap.variance[l * cfg.n_kv_heads + h] = trace_variance(keys);
        }
    }
    return vmap;
}

std::optional<BimodalSplit> bimodal_threshold(std::span<const double> values) {
    if (values.size() < 4)
        throw std::invalid_argument("bimodal_threshold: need at least 4 values");
    const auto [mn_it, mx_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *mn_it, hi = *mx_it;
    if (hi == lo) return std::nullopt;

    constexpr std::size_t kBins = 64;
    const double range = hi - lo;
    const double bandwidth = range / 16.0;
    std::vector<double> center(kBins), density(kBins, 0.0);
    for (std::size_t b = 0; b < kBins; ++b) {
        center[b] = lo + (static_cast<double>(b) + 0.5) * range / static_cast<double>(kBins);
        for (double v : values) {
            const double t = (center[b] - v) / bandwidth;
            density[b] += std::exp(-0.5 * t * t);
        }
    }

    std::vector<std::size_t> maxima;
    for (std::size_t b = 0; b < kBins; ++b) {
        const bool left_ok = b == 0 || density[b] > density[b - 1];
        const bool right_ok = b + 1 == kBins || density[b] > density[b + 1];
        if (left_ok && right_ok) maxima.push_back(b);
    }
    if (maxima.size() < 2) return std::nullopt;

    // Two highest local maxima (lower index wins ties).
    std::stable_sort(maxima.begin(), maxima.end(),
                     [&](std::size_t a, std::size_t b) { return density[a] > density[b]; });
    std::size_t m1 = maxima[0], m2 = maxima[1];
    if (m1 > m2) std::swap(m1, m2);

    std::size_t argmin = m1 + 1;
    for (std::size_t b = m1 + 1; b < m2; ++b)
        if (density[b] < density[argmin]) argmin = b;

    BimodalSplit split;
    split.threshold = center[argmin];
    split.mode_low = center[m1];
    split.mode_high = center[m2];
    return split;
}

const char* label_name(KeyLabel label) {
    return label == KeyLabel::agnostic ? "agnostic" : "dependent";
}

const char* group_name(LayerGroup group) {
    switch (group) {
        case LayerGroup::early: return "early";
        case LayerGroup::middle: return "middle";
        case LayerGroup::late: return "late";
    }
    return "unknown";
}

KeyClassification classify_keys(const VarianceMap& vmap, std::optional<double> threshold) {
    double thr;
    if (threshold) {
        if (!std::isfinite(*threshold))
            throw std::invalid_argument("classify_keys: threshold must be finite");
        thr = *threshold;
    } else {
        auto split = bimodal_threshold(vmap.variance);
        if (!split)
            throw std::runtime_error(
                "classify_keys: no bimodal split found and no manual threshold given");
        thr = split->threshold;
    }

    KeyClassification cls;
    cls.threshold = thr;
    cls.n_layers = vmap.n_layers;
    cls.n_kv_heads = vmap.n_kv_heads;
    cls.labels.resize(vmap.variance.size());
    for (std::size_t i = 0; i < vmap.variance.size(); ++i)
        cls.labels[i] = vmap.variance[i] < thr ? KeyLabel::agnostic : KeyLabel::dependent;
    // Layer thirds: early is the first floor(n/3) layers, late the last.
    const std::size_t third = vmap.n_layers / 3;
    cls.early_end = third;
    cls.late_begin = vmap.n_layers - third;
    return cls;
}

std::vector<Matrix> export_key_pca(const model::ModelWeights& w,
                                   const std::vector<synth::SyntheticScene>& scenes,
                                   std::size_t layer, std::size_t kv_head, std::size_t k) {
    if (scenes.empty()) throw std::invalid_argument("export_key_pca: no scenes");
    std::vector<Matrix> keys;
    for (const auto& s : scenes) {
        model::MultimodalInput in;
        in.image_patches = s.patches;
        auto res = model::forward(w, in);
        keys.push_back(model::image_kv(res.cache, layer, kv_head).keys);
    }
    const std::size_t n_pos = keys[0].rows;
    const std::size_t d = keys[0].cols;
    Matrix pooled(scenes.size() * n_pos, d);
    for (std::size_t s = 0; s < keys.size(); ++s)
        for (std::size_t p = 0; p < n_pos; ++p)
            std::copy(keys[s].row(p).begin(), keys[s].row(p).end(),
                      pooled.row_mut(s * n_pos + p).begin());

    std::vector<Matrix> out;
    Matrix projected;
    const bool degenerate_variance = [&] {
        for (std::size_t i = 0; i < pooled.rows; ++i)
            for (std::size_t j = 0; j < d; ++j)
                if (pooled.at(i, j) != pooled.at(0, j)) return false;
        return true;
    }();
    if (degenerate_variance) {
        projected = Matrix(pooled.rows, k); // all zero: constant keys project to 0
    } else {
        auto pca = numerics::pca_fit(pooled, k);
        projected = numerics::pca_project(pca, pooled);
    }

    // Min-max scale per component over the pooled projections so scenes stay
    // comparable; a constant component maps to 0.
    for (std::size_t c = 0; c < k; ++c) {
        double lo = projected.at(0, c), hi = projected.at(0, c);
        for (std::size_t i = 0; i < projected.rows; ++i) {
            lo = std::min(lo, projected.at(i, c));
            hi = std::max(hi, projected.at(i, c));
        }
        const double range = hi - lo;
        for (std::size_t i = 0; i < projected.rows; ++i)
            projected.at(i, c) = range == 0.0 ? 0.0 : (projected.at(i, c) - lo) / range;
    }

    for (std::size_t s = 0; s < scenes.size(); ++s) {
        Matrix m(n_pos, k);
        for (std::size_t p = 0; p < n_pos; ++p)
            std::copy(projected.row(s * n_pos + p).begin(), projected.row(s * n_pos + p).end(),
                      m.row_mut(p).begin());
        out.push_back(std::move(m));
    }
    return out;
}

std::string variance_to_csv(const VarianceMap& vmap, const KeyClassification* cls) {
    std::ostringstream os;
    os << "layer,kv_head,variance,label\n";
    for (std::size_t l = 0; l < vmap.n_layers; ++l)
        for (std::size_t h = 0; h < vmap.n_kv_heads; ++h) {
            os << l << ',' << h << ',' << io::format_double(vmap.at(l, h)) << ','
               << (cls ? label_name(cls->at(l, h)) : "") << '\n';
        }
    return os.str();
}

std::string key_pca_to_csv(const std::vector<Matrix>& per_scene, int grid_w) {
    std::ostringstream os;
    os << "scene_id,position,row,col,c1,c2,c3\n";
    for (std::size_t s = 0; s < per_scene.size(); ++s) {
        const auto& m = per_scene[s];
        for (std::size_t p = 0; p < m.rows; ++p) {
            os << s << ',' << p << ',' << p / static_cast<std::size_t>(grid_w) << ','
               << p % static_cast<std::size_t>(grid_w);
            for (std::size_t c = 0; c < m.cols; ++c) os << ',' << io::format_double(m.at(p, c));
            for (std::size_t c = m.cols; c < 3; ++c) os << ",0";
            os << '\n';
        }
    }
    return os.str();
}

} // namespace kvlens::key_analysis
