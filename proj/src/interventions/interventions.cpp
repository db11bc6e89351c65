#include "kvlens/interventions.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "kvlens/io_util.hpp"
#include "kvlens/kernels.hpp"
#include "kvlens/numerics.hpp"
#include "kvlens/plants.hpp"
#include "kvlens/rng.hpp"
#include "kvlens/tokenizer.hpp"

namespace kvlens::interventions {

const char* condition_name(Condition c) {
    switch (c) {
        case Condition::none: return "none";
        case Condition::agnostic: return "agnostic";
        case Condition::dependent: return "dependent";
        case Condition::random_heads: return "random";
    }
    return "unknown";
}

std::vector<ExistenceQA> make_qa_set(std::uint64_t seed, std::size_t n) {
    std::vector<ExistenceQA> qa;
    Rng rng(seed);
    synth::EpisodeSizes sizes;
    sizes.n_objects = 2;
    for (std::size_t i = 0; i < n; ++i) {
        auto ep = synth::gen_episode(synth::Task::existence_qa, rng.next_u64(), sizes);
        qa.push_back({std::move(ep.query[0]), std::move(ep.text), ep.gold_yes});
    }
    return qa;
}

Matrix seeded_readout(std::uint64_t seed, std::size_t d_model) {
    Rng rng(seed);
    Matrix r(2, d_model);
    for (auto& v : r.data) v = rng.gaussian();
    return r;
}

int readout_answer(const Matrix& readout, std::span<const double> residual) {
    const double yes = kernels::dot(readout.row(0).data(), residual.data(), residual.size());
    const double no = kernels::dot(readout.row(1).data(), residual.data(), residual.size());
    return yes > no ? 1 : 0;
}

double yes_f1(std::span<const int> answers, std::span<const int> gold) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < answers.size(); ++i) {
        tp += (answers[i] == 1 && gold[i] == 1) ? 1 : 0;
        fp += (answers[i] == 1 && gold[i] == 0) ? 1 : 0;
        fn += (answers[i] == 0 && gold[i] == 1) ? 1 : 0;
    }
    if (tp == 0) return 0.0;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    return 2.0 * precision * recall / (precision + recall);
}

double accuracy(std::span<const int> answers, std::span<const int> gold) {
    if (answers.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < answers.size(); ++i) hit += answers[i] == gold[i] ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(answers.size());
}

model::KnockoutSpec build_knockout(const key_analysis::KeyClassification& cls,
                                   key_analysis::LayerGroup group, Condition condition,
                                   std::uint64_t seed) {
    model::KnockoutSpec spec;
    if (condition == Condition::none) return spec;

    std::vector<std::pair<std::size_t, std::size_t>> agnostic, dependent, all;
    for (std::size_t l = 0; l < cls.n_layers; ++l) {
        if (cls.group_of(l) != group) continue;
        for (std::size_t h = 0; h < cls.n_kv_heads; ++h) {
            all.emplace_back(l, h);
            if (cls.at(l, h) == key_analysis::KeyLabel::agnostic)
                agnostic.emplace_back(l, h);
            else
                dependent.emplace_back(l, h);
        }
    }
    if (agnostic.empty()) return spec; // nothing to block; controls stay size-matched (0)

    auto sample = [&](std::vector<std::pair<std::size_t, std::size_t>> pool, std::size_t count) {
        if (pool.size() < count)
            throw std::runtime_error("build_knockout: not enough control heads in group");
        Rng rng(seed);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t j = i + rng.uniform_index(pool.size() - i);
            std::swap(pool[i], pool[j]);
        }
        pool.resize(count);
        std::sort(pool.begin(), pool.end());
        return pool;
    };

    switch (condition) {
        case Condition::none: break;
        case Condition::agnostic: spec.targets = agnostic; break;
        case Condition::dependent: spec.targets = sample(dependent, agnostic.size()); break;
        case Condition::random_heads: spec.targets = sample(all, agnostic.size()); break;
    }
    return spec;
}

EvalResult run_existence_eval(const model::ModelWeights& w, const std::vector<ExistenceQA>& qa,
                              const Matrix& readout, const model::KnockoutSpec& spec) {
    if (qa.empty()) throw std::invalid_argument("run_existence_eval: empty qa set");
    EvalResult out;
    for (const auto& item : qa) {
        model::MultimodalInput in;
        in.image_patches = item.scene.patches;
        in.query_text = item.question;
        auto res = model::forward(w, in, &spec);
        const std::size_t last = res.residual_out.rows - 1;
        out.answers.push_back(readout_answer(readout, res.residual_out.row(last)));
        out.gold.push_back(item.gold_yes);
    }
    out.f1 = yes_f1(out.answers, out.gold);
    out.accuracy = accuracy(out.answers, out.gold);
    return out;
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

StudyModel build_noise_study_model(std::uint64_t seed) {
    model::ModelConfig cfg;
    cfg.seed = seed;

    // Late group is layers 8..11. Eight planted agnostic cells there force
    // the size-matched dependent control to cover every dependent late cell,
    // including the signal head.
    model::PlantSpec plant;
    plant.targets = {{9, 0}, {9, 1}, {9, 2}, {9, 3}, {11, 0}, {11, 1}, {11, 2}, {11, 3}};
    auto w = model::build_model(cfg, &plant);

    const std::size_t dh = cfg.d_head;
    const std::size_t dm = cfg.d_model;

    // Residual writes happen only through the planted circuit.
    for (auto& lw : w.layers) {
        for (auto& v : lw.w_o.data) v = 0.0;
        for (auto& v : lw.mlp_out.data) v = 0.0;
    }

    auto cd = plants::content_directions(w);

    // Dual readers over {rgb, textures, question tokens}: each responds to
    // one direction and annihilates the rest.
    const std::vector<int> q_tokens = {
        tok::word_id("is"),  tok::word_id("there"), tok::word_id("a"),
        tok::word_id("square"), tok::word_id("disc"), tok::word_id("bar"),
        tok::word_id("?")};
    std::vector<std::vector<double>> basis = cd.rgb;
    for (const auto& v : cd.shape) basis.push_back(v);
    for (int id : q_tokens) basis.push_back(token_embed(w, id));
    // Content readers that also annihilate the question tokens exactly; text
    // positions amplify reads by 1/rms of their small embeddings, so token
    // orthogonality cannot be left to chance.
    auto content_duals = plants::dual_basis(basis);
    auto rgb_reader_t = [&](int ch) { return content_duals[static_cast<std::size_t>(ch)]; };
    auto shape_reader_t = [&](int s) {
        return content_duals[cd.rgb.size() + static_cast<std::size_t>(s)];
    };

    // The circuit's residual directions live in the orthogonal complement of
    // the whole pixel-embedding subspace (rank <= 48 inside d_model = 64), so
    // no image patch, noise included, can read or write them. They are also
    // orthogonal to the question-token embeddings.
    std::vector<std::vector<double>> image_span;
    for (int px = 0; px < synth::kRawPatchDim; ++px) {
        std::vector<double> unit(synth::kRawPatchDim, 0.0);
        unit[static_cast<std::size_t>(px)] = 1.0;
        auto dir = plants::pixel_model_direction(w, unit);
        for (const auto& b : image_span) {
            double c = 0.0, nb = 0.0;
            for (std::size_t j = 0; j < dm; ++j) {
                c += dir[j] * b[j];
                nb += b[j] * b[j];
            }
            for (std::size_t j = 0; j < dm; ++j) dir[j] -= c / nb * b[j];
        }
        double norm = 0.0;
        for (double v : dir) norm += v * v;
        if (norm > 1e-18) {
            norm = std::sqrt(norm);
            for (auto& v : dir) v /= norm;
            image_span.push_back(std::move(dir));
        }
    }

    // Token readers as duals over {image span, question tokens}: they read
    // 1.0 on their own token and exactly zero on every other token and on any
    // image-position residual, pixel noise included.
    std::vector<std::vector<double>> text_basis = image_span;
    for (int id : q_tokens) text_basis.push_back(token_embed(w, id));
    auto text_duals = plants::dual_basis(text_basis);
    auto token_reader = [&](int idx) {
        return text_duals[image_span.size() + static_cast<std::size_t>(idx)];
    };

    Rng dir_rng(Rng(seed).child(0xd17).root_seed());
    auto fresh_dir = [&](std::vector<std::vector<double>> against) {
        std::vector<double> v(dm);
        for (auto& x : v) x = dir_rng.gaussian();
        for (const auto& b : basis) against.push_back(b);
        for (const auto& b : image_span) against.push_back(b);
        return plants::orthogonal_complement(std::move(v), against);
    };
    std::vector<std::vector<double>> taken;
    std::vector<std::vector<double>> r_ask;
    for (int s = 0; s < 3; ++s) {
        auto d = fresh_dir(taken);
        taken.push_back(d);
        r_ask.push_back(std::move(d));
    }
    auto r_yes = fresh_dir(taken);
    taken.push_back(r_yes);

    auto head_axis = [&](std::size_t i) {
        std::vector<double> v(dh, 0.0);
        v[i] = 1.0;
        return v;
    };

    // --- copy head: layer 0, kv head 3, q head 6. The "?" position attends
    // to its predecessor (the asked shape word) and writes r_ask[shape].
    {
        auto& lw = w.layers[0];
        const std::size_t kv = 3, qh = 6;
        plants::zero_columns(lw.w_k, kv * dh, dh);
        auto oa = plants::offset_attention(dh, 6.0, 1, cfg.rope_base);
        for (std::size_t j = 0; j < dh; ++j) lw.b_k[kv * dh + j] = oa.key[j];
        plants::zero_columns(lw.w_q, qh * dh, dh);
        const auto e_qmark = token_embed(w, q_tokens[6]);
        plants::add_reader(lw.w_q, token_reader(6), oa.query, qh * dh, rms_of(e_qmark));
        plants::zero_columns(lw.w_v, kv * dh, dh);
        for (int s = 0; s < 3; ++s) {
            const auto e_word = token_embed(w, q_tokens[3 + s]);
            plants::add_reader(lw.w_v, token_reader(3 + s), head_axis(static_cast<std::size_t>(s)),
                               kv * dh, rms_of(e_word));
            plants::add_head_writer(lw.w_o, qh, dh, head_axis(static_cast<std::size_t>(s)),
                                    r_ask[static_cast<std::size_t>(s)], 1.0);
        }
    }

    // Calibration constants. Image-content reads scale with 1/rms of a patch
    // embedding; measure it on the noise-free prototypes.
    double inv_rms_img = 0.0;
    for (int c = 0; c < synth::num_colors(); ++c)
        for (int s = 0; s < 3; ++s) {
            auto proto = plants::pixel_model_direction(
                w, synth::object_pixels(c, static_cast<synth::Shape>(s)));
            inv_rms_img += 1.0 / rms_of(proto);
        }
    inv_rms_img /= static_cast<double>(synth::num_colors() * 3);

    // --- signal head: layer 8, kv head 0, q head 0. Shape-selective keys in
    // separate rope pair subspaces; image values carry a yes marker.
    const std::pair<std::size_t, std::size_t> signal_head{8, 0};
    {
        auto& lw = w.layers[8];
        const std::size_t kv = 0, qh = 0;
        // f_square/f_disc live in the slowest pair (dims 6,7); f_bar in the
        // next pair (dims 4,5). Pairs never mix under rope.
        std::vector<std::vector<double>> f = {head_axis(6), head_axis(7), head_axis(4)};
        // Keys stay at the magnitude of ordinary dependent heads so the
        // variance map cannot tell the signal head apart; the query gain
        // carries the logit scale instead.
        const double kappa = 0.35;
        const double gamma = 20.0 * std::sqrt(static_cast<double>(dh)) / kappa;

        plants::zero_columns(lw.w_k, kv * dh, dh);
        for (int s = 0; s < 3; ++s)
            plants::add_reader(lw.w_k, shape_reader_t(s), f[static_cast<std::size_t>(s)],
                               kv * dh, kappa / inv_rms_img);

        // Query proto: "?" residual is e_? + r_ask after the copy layer.
        plants::zero_columns(lw.w_q, qh * dh, dh);
        auto q_proto = token_embed(w, q_tokens[6]);
        for (std::size_t j = 0; j < dm; ++j) q_proto[j] += r_ask[0][j];
        const double q_scale = gamma * rms_of(q_proto);
        for (int s = 0; s < 3; ++s)
            plants::add_reader(lw.w_q, r_ask[static_cast<std::size_t>(s)],
                               f[static_cast<std::size_t>(s)], qh * dh, q_scale);

        plants::zero_columns(lw.w_v, kv * dh, dh);
        for (int s = 0; s < 3; ++s)
            plants::add_reader(lw.w_v, shape_reader_t(s), head_axis(0), kv * dh,
                               1.0 / inv_rms_img);
        plants::add_head_writer(lw.w_o, qh, dh, head_axis(0), r_yes, 1.0);

        // Counter head: the group partner gets a zero query, so away from
        // the "?" position its attention profile (causal uniform) matches the
        // signal head's exactly and its negative writer cancels every
        // residual write outside the question. Later-layer keys stay clean.
        plants::zero_columns(lw.w_q, (qh + 1) * dh, dh);
        plants::add_head_writer(lw.w_o, qh + 1, dh, head_axis(0), r_yes, -1.0);
    }

    // --- noise heads: planted agnostic cells at layers 10 and 11 read image
    // brightness (exactly zero on every question-span direction) and write
    // signed noise along the readout direction.
    {
        std::vector<std::vector<double>> against;
        for (int id : q_tokens) against.push_back(token_embed(w, id));
        for (const auto& r : r_ask) against.push_back(r);
        against.push_back(r_yes);

        // Each noise head reads a different pixel channel, so the injected
        // amount depends on the scene's color composition and the heads do
        // not cancel each other.
        std::vector<double> brightness(dm, 0.0);
        for (int ch = 0; ch < 3; ++ch)
            for (std::size_t j = 0; j < dm; ++j) brightness[j] += rgb_reader_t(ch)[j];
        std::vector<std::vector<double>> raw_readers = {rgb_reader_t(0), rgb_reader_t(1),
                                                        rgb_reader_t(2), brightness};
        // All four noise heads sit in the last layer so their residual
        // writes feed only the readout, never later keys.
        const std::pair<std::size_t, std::size_t> noise_cells[] = {
            {11, 0}, {11, 1}, {11, 2}, {11, 3}};
        const double gains[] = {2.4, -1.95, 2.1, -2.25};
        for (std::size_t i = 0; i < 4; ++i) {
            auto reader = plants::orthogonal_complement(raw_readers[i], against);
            // Normalize so a typical object patch reads about 1.
            double typical = 0.0;
            for (int c = 0; c < synth::num_colors(); ++c) {
                auto proto = plants::pixel_model_direction(
                    w, synth::object_pixels(c, synth::Shape::square));
                double read = 0.0;
                for (std::size_t j = 0; j < dm; ++j) read += proto[j] * reader[j];
                typical += read / rms_of(proto);
            }
            typical /= static_cast<double>(synth::num_colors());

            auto [l, h] = noise_cells[i];
            auto& lw = w.layers[l];
            plants::zero_columns(lw.w_v, h * dh, dh);
            plants::add_reader(lw.w_v, reader, head_axis(0), h * dh, 1.0 / typical);
            plants::add_head_writer(lw.w_o, h * cfg.group_size(), dh, head_axis(0), r_yes,
                                    gains[i]);
        }
    }

    StudyModel sm;
    sm.weights = std::move(w);
    sm.signal_head = signal_head;
    sm.agnostic_cells.assign(plant.targets.begin(), plant.targets.end());

    // Readout: yes logit reads the marker mass, no logit supplies a constant
    // threshold through the fixed "?" embedding.
    const double tau = 0.55;
    sm.readout = Matrix(2, dm);
    const auto e_qmark = token_embed(sm.weights, tok::word_id("?"));
    const double e_norm_sq = kernels::dot(e_qmark.data(), e_qmark.data(), dm);
    for (std::size_t j = 0; j < dm; ++j) {
        sm.readout.at(0, j) = r_yes[j];
        sm.readout.at(1, j) = tau * e_qmark[j] / e_norm_sq;
    }

    // Classification from the model's own variance map.
    std::vector<synth::SyntheticScene> scenes;
    Rng scene_rng(Rng(seed).child(0x5ce7e5).root_seed());
    synth::SceneSpec spec;
    spec.n_objects = 2;
    for (int i = 0; i < 8; ++i) scenes.push_back(synth::gen_scene(scene_rng.next_u64(), spec));
    sm.classification = key_analysis::classify_keys(
        key_analysis::variance_map(sm.weights, scenes));
    return sm;
}

StudyReport planted_noise_study(std::uint64_t seed, std::size_t n_items) {
    auto sm = build_noise_study_model(seed);
    auto qa = make_qa_set(Rng(seed).child(0x9a).root_seed(), n_items);

    StudyReport report;
    report.seed = seed;
    report.n_items = n_items;
    for (Condition c : {Condition::none, Condition::agnostic, Condition::dependent,
                        Condition::random_heads}) {
        InterventionRun run;
        run.condition = c;
        run.layer_group = key_analysis::LayerGroup::late;
        run.seed = seed;
        run.spec = build_knockout(sm.classification, key_analysis::LayerGroup::late, c, seed);
        auto eval = run_existence_eval(sm.weights, qa, sm.readout, run.spec);
        run.f1 = eval.f1;
        run.accuracy = eval.accuracy;
        run.n_items = n_items;
        report.runs.push_back(std::move(run));
    }
    return report;
}

std::string report_to_json(const StudyReport& report) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& run : report.runs) {
        arr.push_back({{"condition", condition_name(run.condition)},
                       {"layer_group", key_analysis::group_name(run.layer_group)},
                       {"f1", run.f1},
                       {"accuracy", run.accuracy},
                       {"n_items", run.n_items},
                       {"seed", run.seed}});
    }
    return arr.dump(2);
}

std::string report_to_csv(const StudyReport& report) {
    std::ostringstream os;
    os << "condition,layer_group,f1,accuracy,n_items,seed\n";
    for (const auto& run : report.runs) {
        os << condition_name(run.condition) << ',' << key_analysis::group_name(run.layer_group)
           << ',' << io::format_double(run.f1) << ',' << io::format_double(run.accuracy) << ','
           << run.n_items << ',' << run.seed << '\n';
    }
    return os.str();
}

} // namespace kvlens::interventions
