#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <set>

#include <json.hpp>

#include "kvlens/interventions.hpp"
#include "kvlens/rng.hpp"

using namespace kvlens;
using namespace kvlens::interventions;

namespace {

key_analysis::KeyClassification hand_classification(
    std::size_t n_layers, std::size_t n_heads,
    const std::set<std::pair<std::size_t, std::size_t>>& agnostic) {
    key_analysis::KeyClassification cls;
    cls.threshold = 1.0;
    cls.n_layers = n_layers;
    cls.n_kv_heads = n_heads;
    cls.labels.assign(n_layers * n_heads, key_analysis::KeyLabel::dependent);
    for (auto [l, h] : agnostic)
        cls.labels[l * n_heads + h] = key_analysis::KeyLabel::agnostic;
    const std::size_t third = n_layers / 3;
    cls.early_end = third;
    cls.late_begin = n_layers - third;
    return cls;
}

} // namespace

TEST_CASE("f1 and accuracy match a hand-computed confusion matrix on 6 items") {
    std::vector<int> answers{1, 1, 0, 0, 1, 0};
    std::vector<int> gold{1, 0, 0, 1, 1, 0};
    // TP=2 FP=1 FN=1 -> precision 2/3, recall 2/3, F1 = 2/3; 4 of 6 correct.
    CHECK(yes_f1(answers, gold) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(accuracy(answers, gold) == doctest::Approx(4.0 / 6.0).epsilon(1e-15));

    // All-no gold and all-no predictions: accuracy 1, yes-F1 defined as 0.
    std::vector<int> none(4, 0);
    CHECK(accuracy(none, none) == 1.0);
    CHECK(yes_f1(none, none) == 0.0);
}

TEST_CASE("readout answers follow the larger logit on hand-set residuals") {
    Matrix readout(2, 3, {1, 0, 0, 0, 1, 0}); // yes reads x0, no reads x1
    CHECK(readout_answer(readout, std::vector<double>{2.0, 1.0, 5.0}) == 1);
    CHECK(readout_answer(readout, std::vector<double>{1.0, 2.0, 5.0}) == 0);
    // Ties resolve to no.
    CHECK(readout_answer(readout, std::vector<double>{1.0, 1.0, 0.0}) == 0);
}

TEST_CASE("qa sets are deterministic and roughly balanced") {
    auto a = make_qa_set(9, 40);
    auto b = make_qa_set(9, 40);
    REQUIRE(a.size() == 40);
    int yes = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].question == b[i].question);
        CHECK(a[i].gold_yes == b[i].gold_yes);
        CHECK(a[i].scene.patches == b[i].scene.patches);
        yes += a[i].gold_yes;
        REQUIRE(a[i].question.size() == 5);
    }
    CHECK(yes >= 8);
    CHECK(yes <= 32);
}

TEST_CASE("build_knockout conditions and size parity") {
    // 12 layers, 4 heads; agnostic cells in the late third plus early noise.
    std::set<std::pair<std::size_t, std::size_t>> agnostic{
        {0, 0}, {9, 1}, {10, 0}, {11, 2}};
    auto cls = hand_classification(12, 4, agnostic);

    auto none = build_knockout(cls, key_analysis::LayerGroup::late, Condition::none, 5);
    CHECK(none.targets.empty());

    auto agn = build_knockout(cls, key_analysis::LayerGroup::late, Condition::agnostic, 5);
    std::set<std::pair<std::size_t, std::size_t>> expected{{9, 1}, {10, 0}, {11, 2}};
    CHECK(std::set(agn.targets.begin(), agn.targets.end()) == expected);

    auto dep = build_knockout(cls, key_analysis::LayerGroup::late, Condition::dependent, 5);
    CHECK(dep.targets.size() == agn.targets.size());
    for (auto [l, h] : dep.targets) {
        CHECK(l >= cls.late_begin);
        CHECK(cls.at(l, h) == key_analysis::KeyLabel::dependent);
    }

    auto rnd = build_knockout(cls, key_analysis::LayerGroup::late, Condition::random_heads, 5);
    CHECK(rnd.targets.size() == agn.targets.size());
    for (auto [l, h] : rnd.targets) CHECK(l >= cls.late_begin);

    // Deterministic for a fixed seed; different seeds may differ.
    auto dep2 = build_knockout(cls, key_analysis::LayerGroup::late, Condition::dependent, 5);
    CHECK(dep.targets == dep2.targets);

    // A group without agnostic heads yields empty specs for every condition.
    auto empty_agn = build_knockout(cls, key_analysis::LayerGroup::middle, Condition::agnostic, 5);
    CHECK(empty_agn.targets.empty());
    auto empty_dep =
        build_knockout(cls, key_analysis::LayerGroup::middle, Condition::dependent, 5);
    CHECK(empty_dep.targets.empty());

    // Early group: 4 agnostic... only one agnostic cell and 15 dependent; fine.
    auto early = build_knockout(cls, key_analysis::LayerGroup::early, Condition::agnostic, 5);
    CHECK(early.targets == decltype(early.targets){{0, 0}});

    // Insufficient dependent pool: all-but-one agnostic in the late group.
    std::set<std::pair<std::size_t, std::size_t>> heavy;
    for (std::size_t l = 8; l < 12; ++l)
        for (std::size_t h = 0; h < 4; ++h)
            if (!(l == 8 && h == 0)) heavy.insert({l, h});
    auto heavy_cls = hand_classification(12, 4, heavy);
    CHECK_THROWS_AS(
        (void)build_knockout(heavy_cls, key_analysis::LayerGroup::late, Condition::dependent, 5),
        std::runtime_error);
}

TEST_CASE("empty knockout spec is a bitwise no-op end to end") {
    auto sm = build_noise_study_model(3);
    auto qa = make_qa_set(17, 6);
    model::KnockoutSpec none;
    auto a = run_existence_eval(sm.weights, qa, sm.readout, none);
    auto b = run_existence_eval(sm.weights, qa, sm.readout, none);
    CHECK(a.answers == b.answers);
    CHECK(a.f1 == b.f1);

    CHECK_THROWS_AS((void)run_existence_eval(sm.weights, {}, sm.readout, none),
                    std::invalid_argument);
}

TEST_CASE("planted-noise study reproduces the intervention direction") {
    const std::uint64_t seed = 2026;
    auto report = planted_noise_study(seed, 60);
    REQUIRE(report.runs.size() == 4);
    CHECK(report.runs[0].condition == Condition::none);
    CHECK(report.runs[1].condition == Condition::agnostic);
    CHECK(report.runs[2].condition == Condition::dependent);
    CHECK(report.runs[3].condition == Condition::random_heads);

    const double acc_none = report.runs[0].accuracy;
    const double acc_agn = report.runs[1].accuracy;
    const double acc_dep = report.runs[2].accuracy;

    // Noise removal cannot hurt the noise-free readout; removing the signal
    // path cannot help it.
    CHECK(acc_agn >= acc_none);
    CHECK(acc_none >= acc_dep);
    // The clean circuit answers every item by construction.
    CHECK(acc_agn >= 0.95);

    // Size parity of the controls.
    CHECK(report.runs[1].spec.targets.size() == report.runs[2].spec.targets.size());
    CHECK(report.runs[1].spec.targets.size() == report.runs[3].spec.targets.size());

    // The agnostic condition blocks exactly the planted cells.
    auto sm = build_noise_study_model(seed);
    std::set<std::pair<std::size_t, std::size_t>> planted(sm.agnostic_cells.begin(),
                                                          sm.agnostic_cells.end());
    CHECK(std::set(report.runs[1].spec.targets.begin(), report.runs[1].spec.targets.end()) ==
          planted);
    // The dependent control removes the signal head.
    CHECK(std::find(report.runs[2].spec.targets.begin(), report.runs[2].spec.targets.end(),
                    sm.signal_head) != report.runs[2].spec.targets.end());

    // Rerun with the same seed: identical report.
    auto again = planted_noise_study(seed, 60);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(again.runs[i].accuracy == report.runs[i].accuracy);
        CHECK(again.runs[i].f1 == report.runs[i].f1);
        CHECK(again.runs[i].spec.targets == report.runs[i].spec.targets);
    }

    // Report formats.
    auto parsed = nlohmann::json::parse(report_to_json(report));
    REQUIRE(parsed.is_array());
    REQUIRE(parsed.size() == 4);
    CHECK(parsed[0]["condition"] == "none");
    CHECK(parsed[1]["layer_group"] == "late");
    CHECK(parsed[0]["n_items"] == 60);

    auto csv = report_to_csv(report);
    CHECK(csv.rfind("condition,layer_group,f1,accuracy,n_items,seed\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}
