#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "kvlens/key_analysis.hpp"
#include "kvlens/rng.hpp"

using namespace kvlens;
using namespace kvlens::key_analysis;

namespace {

std::vector<synth::SyntheticScene> make_scenes(int n, std::uint64_t seed0, int n_objects = 2) {
    std::vector<synth::SyntheticScene> scenes;
    synth::SceneSpec spec;
    spec.n_objects = n_objects;
    for (int i = 0; i < n; ++i) scenes.push_back(synth::gen_scene(seed0 + i, spec));
    return scenes;
}

// Brute-force optimal 1-D split into two classes minimizing within-class
// variance; returns the midpoint threshold.
double brute_force_split(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    double best = std::numeric_limits<double>::infinity();
    double thr = 0.0;
    for (std::size_t s = 1; s < v.size(); ++s) {
        if (v[s] == v[s - 1]) continue;
        double wcv = 0.0;
        for (int cls = 0; cls < 2; ++cls) {
            const std::size_t lo = cls == 0 ? 0 : s;
            const std::size_t hi = cls == 0 ? s : v.size();
            double mean = 0.0;
            for (std::size_t i = lo; i < hi; ++i) mean += v[i];
            mean /= static_cast<double>(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) wcv += (v[i] - mean) * (v[i] - mean);
        }
        if (wcv < best) {
            best = wcv;
            thr = 0.5 * (v[s - 1] + v[s]);
        }
    }
    return thr;
}

} // namespace

TEST_CASE("trace variance hand arithmetic") {
    // Two scenes, one position, d = 1, keys {0, 2}: mean 1, mean sq dist 1.
    Matrix a(1, 1, {0.0});
    Matrix b(1, 1, {2.0});
    CHECK(trace_variance({a, b}) == doctest::Approx(1.0).epsilon(1e-15));

    // Invariant to a fixed per-position rotation (2-D rotation by 0.7 rad).
    Matrix a2(1, 2, {1.0, 0.5});
    Matrix b2(1, 2, {-0.3, 2.0});
    const double base = trace_variance({a2, b2});
    const double c = std::cos(0.7), s = std::sin(0.7);
    auto rot = [&](const Matrix& m) {
        Matrix r(1, 2);
        r.at(0, 0) = m.at(0, 0) * c - m.at(0, 1) * s;
        r.at(0, 1) = m.at(0, 0) * s + m.at(0, 1) * c;
        return r;
    };
    CHECK(trace_variance({rot(a2), rot(b2)}) == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("variance map: identical scenes give zero, planted heads stand out") {
    model::ModelConfig cfg;
    cfg.n_layers = 12;
    cfg.seed = 3;
    model::PlantSpec plant;
    plant.targets = {{0, 0}, {1, 1}, {10, 2}, {11, 3}};
    auto w = model::build_model(cfg, &plant);

    auto scene = synth::gen_scene(5, synth::SceneSpec{});
    auto vm_same = variance_map(w, {scene, scene, scene});
    for (double v : vm_same.variance) CHECK(v <= 1e-20);

    auto scenes = make_scenes(6, 100);
    auto vm = variance_map(w, scenes);
    for (auto [l, h] : plant.targets) CHECK(vm.at(l, h) < 1e-12);
    for (std::size_t l = 0; l < vm.n_layers; ++l)
        for (std::size_t h = 0; h < vm.n_kv_heads; ++h) {
            bool is_planted = false;
            for (auto [pl, ph] : plant.targets) is_planted |= (pl == l && ph == h);
            if (!is_planted) CHECK(vm.at(l, h) > 1e-3);
        }

    // Permutation invariance over the scene set.
    std::vector<synth::SyntheticScene> shuffled{scenes[3], scenes[0], scenes[5],
                                                scenes[1], scenes[4], scenes[2]};
    auto vm2 = variance_map(w, shuffled);
    for (std::size_t i = 0; i < vm.variance.size(); ++i)
        CHECK(vm2.variance[i] == doctest::Approx(vm.variance[i]).epsilon(1e-12));

    CHECK_THROWS_AS((void)variance_map(w, {scene}), std::invalid_argument);
}

TEST_CASE("bimodal threshold: two-mode data, degenerate data, brute-force agreement") {
    Rng rng(9);
    std::vector<double> values;
    for (int i = 0; i < 40; ++i) values.push_back(200.0 + rng.gaussian() * 25.0);
    for (int i = 0; i < 40; ++i) values.push_back(600.0 + rng.gaussian() * 40.0);
    auto split = bimodal_threshold(values);
    REQUIRE(split.has_value());
    CHECK(split->threshold > 200.0);
    CHECK(split->threshold < 600.0);
    CHECK(split->mode_low < split->mode_high);
    CHECK(std::abs(split->mode_low - 200.0) < 60.0);
    CHECK(std::abs(split->mode_high - 600.0) < 80.0);

    std::vector<double> flat(8, 3.0);
    CHECK(!bimodal_threshold(flat).has_value());
    CHECK_THROWS_AS((void)bimodal_threshold(std::vector<double>{1.0, 2.0}),
                    std::invalid_argument);

    // {1,1,1,9,9,9}: threshold inside (1,9), classification matches the
    // exhaustive two-cluster split.
    std::vector<double> six{1, 1, 1, 9, 9, 9};
    auto s6 = bimodal_threshold(six);
    REQUIRE(s6.has_value());
    CHECK(s6->threshold > 1.0);
    CHECK(s6->threshold < 9.0);
    const double oracle_thr = brute_force_split(six);
    for (double v : six) CHECK((v < s6->threshold) == (v < oracle_thr));

    // Label agreement with the brute-force split on 50 well-separated draws.
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> draw;
        const double lo_center = 1.0 + rng.uniform() * 3.0;
        const double hi_center = 20.0 + rng.uniform() * 30.0;
        const std::size_t n_lo = 5 + rng.uniform_index(20);
        const std::size_t n_hi = 5 + rng.uniform_index(20);
        for (std::size_t i = 0; i < n_lo; ++i) draw.push_back(lo_center + rng.gaussian() * 0.4);
        for (std::size_t i = 0; i < n_hi; ++i) draw.push_back(hi_center + rng.gaussian() * 2.0);
        auto sp = bimodal_threshold(draw);
        REQUIRE(sp.has_value());
        const double oracle = brute_force_split(draw);
        for (double v : draw) CHECK((v < sp->threshold) == (v < oracle));
    }
}

TEST_CASE("classify_keys recovers a planted model exactly") {
    model::ModelConfig cfg;
    cfg.n_layers = 12;
    cfg.seed = 17;
    model::PlantSpec plant;
    plant.targets = {{0, 0}, {0, 2}, {1, 1}, {1, 3}, {10, 0}, {10, 1}, {11, 2}, {11, 3}};
    auto w = model::build_model(cfg, &plant);
    auto vm = variance_map(w, make_scenes(6, 400));

    auto cls = classify_keys(vm);
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t l = 0; l < cfg.n_layers; ++l)
        for (std::size_t h = 0; h < cfg.n_kv_heads; ++h) {
            bool planted = false;
            for (auto [pl, ph] : plant.targets) planted |= pl == l && ph == h;
            const bool agn = cls.at(l, h) == KeyLabel::agnostic;
            tp += (planted && agn) ? 1 : 0;
            fp += (!planted && agn) ? 1 : 0;
            fn += (planted && !agn) ? 1 : 0;
        }
    CHECK(tp == plant.targets.size());
    CHECK(fp == 0);
    CHECK(fn == 0);

    // Layer thirds for 12 layers: 4/4/4.
    CHECK(cls.early_end == 4);
    CHECK(cls.late_begin == 8);
    CHECK(cls.group_of(0) == LayerGroup::early);
    CHECK(cls.group_of(4) == LayerGroup::middle);
    CHECK(cls.group_of(8) == LayerGroup::late);
    CHECK(cls.group_of(11) == LayerGroup::late);

    // Manual thresholds override the derived split.
    auto all_dep = classify_keys(vm, -1.0);
    for (auto lab : all_dep.labels) CHECK(lab == KeyLabel::dependent);
    auto all_agn = classify_keys(vm, 1e18);
    for (auto lab : all_agn.labels) CHECK(lab == KeyLabel::agnostic);

    // No-split data without a manual threshold is an error.
    VarianceMap degenerate;
    degenerate.n_layers = 2;
    degenerate.n_kv_heads = 2;
    degenerate.n_scenes = 2;
    degenerate.variance = {1.0, 1.0, 1.0, 1.0};
    CHECK_THROWS_AS((void)classify_keys(degenerate), std::runtime_error);
    auto manual = classify_keys(degenerate, 2.0);
    for (auto lab : manual.labels) CHECK(lab == KeyLabel::agnostic);
}

TEST_CASE("key pca export: planted head projections coincide across scenes") {
    model::ModelConfig cfg;
    cfg.n_layers = 4;
    cfg.seed = 23;
    model::PlantSpec plant;
    plant.targets = {{2, 1}};
    auto w = model::build_model(cfg, &plant);
    auto scenes = make_scenes(2, 900);

    auto planted = export_key_pca(w, scenes, 2, 1, 3);
    REQUIRE(planted.size() == 2);
    CHECK(planted[0].rows == 64);
    CHECK(planted[0].cols == 3);
    for (std::size_t p = 0; p < planted[0].rows; ++p)
        for (std::size_t c = 0; c < 3; ++c)
            CHECK(std::abs(planted[0].at(p, c) - planted[1].at(p, c)) < 1e-9);
    for (double v : planted[0].data) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    // Unplanted heads differ across scenes.
    auto dependent = export_key_pca(w, scenes, 0, 0, 3);
    double max_diff = 0.0;
    for (std::size_t p = 0; p < dependent[0].rows; ++p)
        for (std::size_t c = 0; c < 3; ++c)
            max_diff = std::max(max_diff,
                                std::abs(dependent[0].at(p, c) - dependent[1].at(p, c)));
    CHECK(max_diff > 1e-6);

    // Single scene: shape N x 3.
    auto single = export_key_pca(w, {scenes[0]}, 0, 0, 3);
    CHECK(single.size() == 1);
    CHECK(single[0].rows == 64);
    CHECK(single[0].cols == 3);
}

TEST_CASE("csv emitters carry the pinned column orders") {
    model::ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.d_model = 16;
    cfg.n_q_heads = 2;
    cfg.n_kv_heads = 2;
    cfg.d_head = 8;
    cfg.seed = 1;
    auto w = model::build_model(cfg);
    auto scenes = make_scenes(3, 50, 1);
    auto vm = variance_map(w, scenes);
    auto cls = classify_keys(vm, 1e9);
    auto csv = variance_to_csv(vm, &cls);
    CHECK(csv.rfind("layer,kv_head,variance,label\n", 0) == 0);
    CHECK(csv.find(",agnostic\n") != std::string::npos);

    auto pca = export_key_pca(w, scenes, 0, 0, 3);
    auto pcsv = key_pca_to_csv(pca, scenes[0].grid_w);
    CHECK(pcsv.rfind("scene_id,position,row,col,c1,c2,c3\n", 0) == 0);
}
