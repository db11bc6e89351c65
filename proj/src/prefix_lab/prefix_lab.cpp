#include "kvlens/prefix_lab.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "kvlens/io_util.hpp"
#include "kvlens/kernels.hpp"
#include "kvlens/numerics.hpp"
#include "kvlens/plants.hpp"
#include "kvlens/rng.hpp"
#include "kvlens/tokenizer.hpp"

namespace kvlens::prefix_lab {

const char* kind_name(PrefixKind kind) {
    switch (kind) {
        case PrefixKind::none: return "none";
        case PrefixKind::informative: return "informative";
        case PrefixKind::random_text: return "random";
        case PrefixKind::incorrect: return "incorrect";
    }
    return "unknown";
}

const std::string& random_control_sentence() {
    static const std::string s =
        "A rustic wooden table filled with freshly baked croissants, dripping honey, and a "
        "steaming pot of Earl Grey tea beside a bowl of ripe figs.";
    return s;
}

namespace {

std::vector<int> domain_sentence(synth::Domain domain) {
    if (domain == synth::Domain::day)
        return tok::tokenize("the image is taken at daytime and it is from city street view");
    return tok::tokenize("the image is taken at nighttime and it is from highway");
}

std::vector<int> swapped_colors(const std::vector<int>& caption) {
    std::vector<int> out = caption;
    for (auto& t : out) {
        for (int c = 0; c < synth::num_colors(); ++c) {
            if (t == tok::word_id(synth::color_word(c))) {
                t = tok::word_id(synth::color_word((c + 3) % synth::num_colors()));
                break;
            }
        }
    }
    return out;
}

const synth::SyntheticScene& probe_scene(const synth::Episode& ep) {
    if (!ep.query.empty()) return ep.query.front();
    if (!ep.support.empty()) return ep.support.front();
    throw std::invalid_argument("prefix_lab: episode has no scenes");
}

} // namespace

PrefixCondition condition_for(PrefixKind kind, const synth::Episode& ep) {
    if (ep.task != synth::Task::ref_seg && ep.task != synth::Task::sem_corr &&
        ep.task != synth::Task::sem_seg)
        throw std::invalid_argument("prefix_lab: unsupported episode task");

    PrefixCondition cond;
    cond.kind = kind;
    switch (kind) {
        case PrefixKind::none:
            break;
        case PrefixKind::random_text:
            cond.text = tok::tokenize(random_control_sentence());
            break;
        case PrefixKind::informative:
            switch (ep.task) {
                case synth::Task::ref_seg: cond.text = probe_scene(ep).caption; break;
                case synth::Task::sem_corr:
                    cond.text = {tok::word_id(
                        synth::shape_word(ep.support.front().primary().shape))};
                    break;
                default: cond.text = domain_sentence(probe_scene(ep).domain); break;
            }
            break;
        case PrefixKind::incorrect:
            switch (ep.task) {
                case synth::Task::ref_seg:
                    cond.text = swapped_colors(probe_scene(ep).caption);
                    break;
                case synth::Task::sem_corr: {
                    const int s = static_cast<int>(ep.support.front().primary().shape);
                    cond.text = {tok::word_id(
                        synth::shape_word(static_cast<synth::Shape>((s + 1) % 3)))};
                    break;
                }
                default:
                    cond.text = domain_sentence(probe_scene(ep).domain == synth::Domain::day
                                                    ? synth::Domain::night
                                                    : synth::Domain::day);
                    break;
            }
            break;
    }
    return cond;
}

Matrix kv_delta(const model::ModelWeights& w, const synth::SyntheticScene& scene,
                const PrefixCondition& condition) {
    model::MultimodalInput plain;
    plain.image_patches = scene.patches;
    auto base = model::forward(w, plain);

    model::MultimodalInput prefixed = plain;
    prefixed.prefix_text = condition.text;
    auto with = model::forward(w, prefixed);

    const auto& cfg = w.config;
    Matrix delta(cfg.n_layers, cfg.n_kv_heads);
    const std::size_t n = base.cache.spans.image_len();
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        for (std::size_t h = 0; h < cfg.n_kv_heads; ++h) {
            double sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const auto a = base.cache.value_at(l, h, base.cache.spans.image_begin + i);
                const auto b = with.cache.value_at(l, h, with.cache.spans.image_begin + i);
                sum += std::sqrt(kernels::l2sq(a.data(), b.data(), cfg.d_head));
            }
            delta.at(l, h) = sum / static_cast<double>(n);
        }
    }
    return delta;
}

namespace {

Matrix prefixed_image_values(const model::ModelWeights& w, const synth::SyntheticScene& scene,
                             const PrefixCondition& condition, std::size_t layer,
                             std::size_t kv_head) {
    model::MultimodalInput in;
    in.prefix_text = condition.text;
    in.image_patches = scene.patches;
    auto res = model::forward(w, in);
    return model::image_kv(res.cache, layer, kv_head).values;
}

} // namespace

probes::ProbeResult prefixed_probe(const model::ModelWeights& w, const synth::Episode& ep,
                                   const PrefixCondition& condition, std::size_t layer,
                                   std::size_t kv_head) {
    switch (ep.task) {
        case synth::Task::ref_seg:
        case synth::Task::sem_seg: {
            const auto text_value = probes::text_token_value(w, ep.text, layer, kv_head);
            double sum = 0.0;
            for (const auto& scene : ep.query) {
                const auto values = prefixed_image_values(w, scene, condition, layer, kv_head);
                sum += probes::text_seg_core(values, text_value, scene.primary().mask);
            }
            return {ep.task, layer, kv_head, "mIoU",
                    sum / static_cast<double>(ep.query.size()), 1, false};
        }
        case synth::Task::sem_corr: {
            const auto src =
                prefixed_image_values(w, ep.support.at(0), condition, layer, kv_head);
            const auto dst = prefixed_image_values(w, ep.query.at(0), condition, layer, kv_head);
            const double pck = probes::sem_corr_core(src, dst, ep.keypoints,
                                                     ep.support[0].grid_h, ep.support[0].grid_w);
            return {ep.task, layer, kv_head, "PCK", pck, 1, false};
        }
        default:
            throw std::invalid_argument("prefixed_probe: unsupported episode task");
    }
}

std::vector<PrefixRow> prefix_report(const model::ModelWeights& w, const synth::Episode& ep,
                                     std::size_t layer, std::size_t kv_head) {
    std::vector<PrefixRow> rows;
    for (PrefixKind kind : {PrefixKind::none, PrefixKind::informative, PrefixKind::random_text,
                            PrefixKind::incorrect}) {
        auto cond = condition_for(kind, ep);
        auto result = prefixed_probe(w, ep, cond, layer, kv_head);
        rows.push_back({ep.task, kind, layer, kv_head, result.metric, result.value});
    }
    return rows;
}

std::string prefix_report_csv(const std::vector<PrefixRow>& rows) {
    std::ostringstream os;
    os << "task,condition,layer,kv_head,metric,value\n";
    for (const auto& r : rows) {
        os << synth::task_name(r.task) << ',' << kind_name(r.condition) << ',' << r.layer << ','
           << r.kv_head << ',' << r.metric << ',' << io::format_double(r.value) << '\n';
    }
    return os.str();
}

namespace {

double rms_of(std::span<const double> x) {
    double ms = 0.0;
    for (double v : x) ms += v * v;
    ms /= static_cast<double>(x.size());
    return std::sqrt(ms + numerics::kRmsEps);
}

std::vector<double> token_embed(const model::ModelWeights& w, int id) {
    std::vector<double> e(w.config.d_model);
    for (std::size_t j = 0; j < w.config.d_model; ++j)
        e[j] = w.token_embedding.at(static_cast<std::size_t>(id), j);
    return e;
}

} // namespace

PrefixDemo build_prefix_demo(std::uint64_t seed) {
    model::ModelConfig cfg;
    cfg.seed = seed;
    auto w = model::build_model(cfg);
    const std::size_t dh = cfg.d_head;
    const std::size_t dm = cfg.d_model;

    // Residual writes only through the planted circuit.
    for (auto& lw : w.layers) {
        for (auto& v : lw.w_o.data) v = 0.0;
        for (auto& v : lw.mlp_out.data) v = 0.0;
    }

    auto cd = plants::content_directions(w);

    // Orthonormal basis of the image-embedding subspace.
    std::vector<std::vector<double>> image_span;
    for (int px = 0; px < synth::kRawPatchDim; ++px) {
        std::vector<double> unit(synth::kRawPatchDim, 0.0);
        unit[static_cast<std::size_t>(px)] = 1.0;
        auto dir = plants::pixel_model_direction(w, unit);
        for (const auto& b : image_span) {
            double c = 0.0;
            for (std::size_t j = 0; j < dm; ++j) c += dir[j] * b[j];
            for (std::size_t j = 0; j < dm; ++j) dir[j] -= c * b[j];
        }
        double norm = 0.0;
        for (double v : dir) norm += v * v;
        if (norm > 1e-18) {
            norm = std::sqrt(norm);
            for (auto& v : dir) v /= norm;
            image_span.push_back(std::move(dir));
        }
    }

    // Demo vocabulary: three color words and three shape words. Readers from
    // duals over {image span, these tokens} are exactly zero on any image
    // residual and on each other's tokens.
    const std::vector<int> color_tokens = {tok::word_id("red"), tok::word_id("green"),
                                           tok::word_id("blue")};
    const std::vector<int> shape_tokens = {tok::word_id("square"), tok::word_id("disc"),
                                           tok::word_id("bar")};
    std::vector<std::vector<double>> text_basis = image_span;
    for (int id : color_tokens) text_basis.push_back(token_embed(w, id));
    for (int id : shape_tokens) text_basis.push_back(token_embed(w, id));
    auto text_duals = plants::dual_basis(text_basis);
    auto color_word_reader = [&](int c) { return text_duals[image_span.size() + c]; };
    auto shape_word_reader = [&](int s) { return text_duals[image_span.size() + 3 + s]; };

    // Marks live outside the image subspace and away from the demo tokens.
    Rng dir_rng(Rng(seed).child(0x9eef).root_seed());
    std::vector<std::vector<double>> taken;
    auto fresh_dir = [&]() {
        std::vector<double> v(dm);
        for (auto& x : v) x = dir_rng.gaussian();
        std::vector<std::vector<double>> against = image_span;
        for (int id : color_tokens) against.push_back(token_embed(w, id));
        for (int id : shape_tokens) against.push_back(token_embed(w, id));
        for (const auto& t : taken) against.push_back(t);
        auto d = plants::orthogonal_complement(std::move(v), against);
        taken.push_back(d);
        return d;
    };
    std::vector<std::vector<double>> r_mark;
    for (int c = 0; c < 3; ++c) r_mark.push_back(fresh_dir());

    auto head_axis = [&](std::size_t i) {
        std::vector<double> v(dh, 0.0);
        v[i] = 1.0;
        return v;
    };

    // Patch-color selectors: dual of the three demo palette triples in the
    // rgb-read space, so a red patch reads (1,0,0) and so on.
    std::vector<std::vector<double>> palette_rows;
    for (int c = 0; c < 3; ++c) {
        // The rgb readers report the coefficient of each channel-indicator
        // direction, which for a solid color patch is its per-pixel value.
        auto px = synth::color_base_pixels(c);
        palette_rows.push_back({px[0], px[1], px[2]});
    }
    auto palette_duals = plants::dual_basis(palette_rows);
    // Centering makes a gray patch (equal coefficients on all three palette
    // colors) read exactly zero, so the background never queries color words.
    for (int ch = 0; ch < 3; ++ch) {
        double mean = 0.0;
        for (int c = 0; c < 3; ++c)
            mean += palette_duals[static_cast<std::size_t>(c)][static_cast<std::size_t>(ch)];
        mean /= 3.0;
        for (int c = 0; c < 3; ++c)
            palette_duals[static_cast<std::size_t>(c)][static_cast<std::size_t>(ch)] -= mean;
    }
    auto patch_color_reader = [&](int c) {
        std::vector<double> reader(dm, 0.0);
        for (int ch = 0; ch < 3; ++ch)
            for (std::size_t j = 0; j < dm; ++j)
                reader[j] += palette_duals[static_cast<std::size_t>(c)]
                                          [static_cast<std::size_t>(ch)] *
                             cd.rgb_reader[static_cast<std::size_t>(ch)][j];
        return reader;
    };

    // Typical 1/rms of an image patch embedding for calibration.
    double inv_rms_img = 0.0;
    for (int c = 0; c < 3; ++c) {
        auto proto = plants::pixel_model_direction(
            w, synth::object_pixels(c, synth::Shape::square));
        inv_rms_img += 1.0 / rms_of(proto);
    }
    inv_rms_img /= 3.0;

    // --- copy head: layer 0, kv head 3, q head 6. Image patches of color c
    // attend to the prefix token of color word c and receive r_mark[c].
    {
        auto& lw = w.layers[0];
        const std::size_t kv = 3, qh = 6;
        // g_red/g_green in the slowest rope pair, g_blue in the next one.
        std::vector<std::vector<double>> g = {head_axis(6), head_axis(7), head_axis(4)};
        const double kappa = 1.0;
        // Centered palette reads give 2/3 on the patch's own color.
        const double gamma = 1.5 * 22.0 * std::sqrt(static_cast<double>(dh)) / kappa;

        plants::zero_columns(lw.w_k, kv * dh, dh);
        for (int c = 0; c < 3; ++c) {
            const auto e_word = token_embed(w, color_tokens[static_cast<std::size_t>(c)]);
            plants::add_reader(lw.w_k, color_word_reader(c), g[static_cast<std::size_t>(c)],
                               kv * dh, kappa * rms_of(e_word));
        }
        plants::zero_columns(lw.w_q, qh * dh, dh);
        for (int c = 0; c < 3; ++c)
            plants::add_reader(lw.w_q, patch_color_reader(c), g[static_cast<std::size_t>(c)],
                               qh * dh, gamma / inv_rms_img);
        plants::zero_columns(lw.w_v, kv * dh, dh);
        for (int c = 0; c < 3; ++c) {
            const auto e_word = token_embed(w, color_tokens[static_cast<std::size_t>(c)]);
            plants::add_reader(lw.w_v, color_word_reader(c),
                               head_axis(static_cast<std::size_t>(c)), kv * dh,
                               rms_of(e_word));
            plants::add_head_writer(lw.w_o, qh, dh, head_axis(static_cast<std::size_t>(c)),
                                    r_mark[static_cast<std::size_t>(c)], 1.0);
        }
        // Counter head: zero query, so its causal-uniform profile matches the
        // profile of any zero-query position and its negative writers cancel
        // the uniform mark leakage on background patches.
        plants::zero_columns(lw.w_q, (qh + 1) * dh, dh);
        for (int c = 0; c < 3; ++c)
            plants::add_head_writer(lw.w_o, qh + 1, dh, head_axis(static_cast<std::size_t>(c)),
                                    r_mark[static_cast<std::size_t>(c)], -1.0);
    }

    // --- value head: layer 1, kv head 2. Marked patches expose the mark on
    // the channel of their color; shape words bind to the same channels for
    // the dot-product scoring (square->red, disc->green, bar->blue).
    {
        auto& lw = w.layers[1];
        const std::size_t kv = 2;
        plants::zero_columns(lw.w_v, kv * dh, dh);
        for (int c = 0; c < 3; ++c)
            plants::add_reader(lw.w_v, r_mark[static_cast<std::size_t>(c)],
                               head_axis(static_cast<std::size_t>(c)), kv * dh,
                               1.0 / inv_rms_img);
        for (int s = 0; s < 3; ++s)
            plants::add_reader(lw.w_v, shape_word_reader(s),
                               head_axis(static_cast<std::size_t>(s)), kv * dh, 1.0);
    }

    PrefixDemo demo;
    demo.probe_layer = 1;
    demo.probe_head = 2;

    // Fixed demo episode: red square primary, green disc distractor, with
    // the referring expression "the red square".
    synth::SceneSpec spec;
    spec.forced_objects = {{synth::Shape::square, 0, 1, 1, 2, false},
                           {synth::Shape::disc, 1, 4, 4, 1, false}};
    auto scene = synth::gen_scene(Rng(seed).child(0xdead).root_seed(), spec);
    demo.episode.task = synth::Task::ref_seg;
    demo.episode.seed = seed;
    demo.episode.text = scene.referring_expressions.front().text;
    demo.episode.query.push_back(std::move(scene));
    demo.weights = std::move(w);
    return demo;
}

} // namespace kvlens::prefix_lab
