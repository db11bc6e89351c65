#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include <json.hpp>

#include "kvlens/rng.hpp"
#include "kvlens/synthdata.hpp"
#include "kvlens/tokenizer.hpp"

using namespace kvlens;
using namespace kvlens::synth;

TEST_CASE("tokenizer maps the shipped table and splits punctuation") {
    auto ids = tok::tokenize("A red square, left of a blue disc?");
    std::vector<int> expected = {
        tok::word_id("a"),    tok::word_id("red"), tok::word_id("square"),
        tok::word_id(","),    tok::word_id("left"), tok::word_id("of"),
        tok::word_id("a"),    tok::word_id("blue"), tok::word_id("disc"),
        tok::word_id("?"),
    };
    CHECK(ids == expected);
    for (int id : ids) CHECK(id != tok::kUnk);
    CHECK(tok::word_id("zeppelin") == tok::kUnk);
    CHECK(tok::table_size() <= tok::kVocabSize);

    // The fixed random-control sentence tokenizes fully in-vocabulary.
    const char* control =
        "A rustic wooden table filled with freshly baked croissants, dripping honey, "
        "and a steaming pot of Earl Grey tea beside a bowl of ripe figs.";
    for (int id : tok::tokenize(control)) CHECK(id != tok::kUnk);
}

TEST_CASE("gen_scene is deterministic and honors n_objects = 0") {
    SceneSpec spec;
    spec.n_objects = 2;
    auto a = gen_scene(42, spec);
    auto b = gen_scene(42, spec);
    CHECK(a.patches == b.patches);
    CHECK(a.caption == b.caption);
    REQUIRE(a.objects.size() == b.objects.size());
    for (std::size_t i = 0; i < a.objects.size(); ++i)
        CHECK(a.objects[i].mask == b.objects[i].mask);

    auto c = gen_scene(43, spec);
    CHECK(a.patches.data != c.patches.data);

    SceneSpec empty;
    empty.n_objects = 0;
    auto bg = gen_scene(7, empty);
    for (auto v : bg.foreground_mask()) CHECK(v == 0);
}

TEST_CASE("hand-enumerated 2x2 square mask") {
    SceneSpec spec;
    spec.forced_objects = {{Shape::square, 0, 1, 1, 2, false}};
    auto scene = gen_scene(5, spec);
    REQUIRE(scene.objects.size() == 1);
    const auto& mask = scene.objects[0].mask;
    std::set<int> set_positions;
    for (std::size_t p = 0; p < mask.size(); ++p)
        if (mask[p]) set_positions.insert(static_cast<int>(p));
    CHECK(set_positions == std::set<int>{scene.position(1, 1), scene.position(1, 2),
                                         scene.position(2, 1), scene.position(2, 2)});
    CHECK(scene.objects[0].primary);
}

TEST_CASE("night domain scales pixels by 0.3") {
    SceneSpec day_spec;
    day_spec.forced_objects = {{Shape::disc, 2, 1, 1, 1, false}};
    auto day = gen_scene(9, day_spec);
    auto night_spec = day_spec;
    night_spec.domain = Domain::night;
    auto night = gen_scene(9, night_spec);
    auto pd = render_patch_pixels(day, 2, 2);
    auto pn = render_patch_pixels(night, 2, 2);
    for (std::size_t i = 0; i < pd.size(); ++i)
        CHECK(pn[i] == doctest::Approx(0.3 * pd[i]).epsilon(1e-12));
}

TEST_CASE("unplaceable objects are an error") {
    SceneSpec spec;
    spec.forced_objects = {{Shape::square, 0, 7, 7, 3, false}};
    CHECK_THROWS_AS((void)gen_scene(1, spec), std::runtime_error);

    SceneSpec crowded;
    crowded.grid_h = 4;
    crowded.grid_w = 4;
    crowded.n_objects = 12;
    CHECK_THROWS_AS((void)gen_scene(1, crowded), std::runtime_error);
}

TEST_CASE("episode invalid sizes are rejected") {
    EpisodeSizes sizes;
    sizes.n_support = 3;
    CHECK_THROWS_AS((void)gen_episode(Task::fg_seg, 1, sizes), std::invalid_argument);
    EpisodeSizes frames;
    frames.n_frames = 1;
    CHECK_THROWS_AS((void)gen_episode(Task::temp_corr, 1, frames), std::invalid_argument);
    EpisodeSizes co;
    co.n_support = 1;
    CHECK_THROWS_AS((void)gen_episode(Task::co_seg, 1, co), std::invalid_argument);
}

namespace {

std::pair<double, double> centroid(const std::vector<std::uint8_t>& mask, int grid_w) {
    double mr = 0, mc = 0, n = 0;
    for (std::size_t p = 0; p < mask.size(); ++p) {
        if (!mask[p]) continue;
        mr += static_cast<double>(p / static_cast<std::size_t>(grid_w));
        mc += static_cast<double>(p % static_cast<std::size_t>(grid_w));
        n += 1;
    }
    return {mr / n, mc / n};
}

void check_scene_consistency(const SyntheticScene& scene) {
    int primaries = 0;
    for (const auto& obj : scene.objects) {
        REQUIRE(obj.mask.size() ==
                static_cast<std::size_t>(scene.grid_h) * static_cast<std::size_t>(scene.grid_w));
        primaries += obj.primary ? 1 : 0;
        REQUIRE(!obj.keypoints.empty());
        for (auto [r, c] : obj.keypoints) {
            REQUIRE(r >= 0);
            REQUIRE(c >= 0);
            REQUIRE(r < scene.grid_h);
            REQUIRE(c < scene.grid_w);
            REQUIRE(obj.mask[static_cast<std::size_t>(scene.position(r, c))] == 1);
        }
    }
    if (!scene.objects.empty()) REQUIRE(primaries == 1);
}

} // namespace

TEST_CASE("episode annotations are internally consistent over 200 random episodes") {
    Rng rng(321);
    const Task tasks[] = {Task::fg_seg,   Task::co_seg,    Task::sem_seg,     Task::ref_seg,
                          Task::sem_corr, Task::temp_corr, Task::existence_qa};
    for (int i = 0; i < 200; ++i) {
        const Task task = tasks[i % 7];
        EpisodeSizes sizes;
        sizes.n_objects = 1 + static_cast<int>(rng.uniform_index(2));
        auto ep = gen_episode(task, rng.next_u64(), sizes);

        for (const auto& s : ep.support) check_scene_consistency(s);
        for (const auto& s : ep.query) check_scene_consistency(s);
        for (const auto& s : ep.frames) check_scene_consistency(s);

        switch (task) {
            case Task::fg_seg:
                REQUIRE(ep.support.size() == 5);
                REQUIRE(!ep.query.empty());
                break;
            case Task::co_seg: {
                REQUIRE(ep.support.size() >= 2);
                const auto& first = ep.support[0].primary();
                for (const auto& s : ep.support) {
                    CHECK(s.primary().shape == first.shape);
                    CHECK(s.primary().color == first.color);
                }
                break;
            }
            case Task::sem_seg:
            case Task::ref_seg:
                REQUIRE(!ep.text.empty());
                break;
            case Task::sem_corr: {
                REQUIRE(ep.support.size() == 1);
                REQUIRE(ep.query.size() == 1);
                REQUIRE(!ep.keypoints.empty());
                const auto& dst = ep.query[0];
                for (const auto& kp : ep.keypoints) {
                    // Correspondence pairs share object identity.
                    CHECK(dst.primary().mask[static_cast<std::size_t>(
                              dst.position(kp.dst_row, kp.dst_col))] == 1);
                }
                break;
            }
            case Task::temp_corr: {
                REQUIRE(ep.frames.size() >= 2);
                for (std::size_t t = 1; t < ep.frames.size(); ++t) {
                    auto [r0, c0] = centroid(ep.frames[t - 1].primary().mask, sizes.grid_w);
                    auto [r1, c1] = centroid(ep.frames[t].primary().mask, sizes.grid_w);
                    CHECK(std::abs(r1 - r0) <= 1.0 + 1e-12);
                    CHECK(std::abs(c1 - c0) <= 1.0 + 1e-12);
                }
                break;
            }
            case Task::existence_qa: {
                REQUIRE(ep.query.size() == 1);
                REQUIRE(ep.text.size() == 5);
                const int shape_tok = ep.text[3];
                bool present = false;
                for (const auto& obj : ep.query[0].objects)
                    present |= tok::word_id(shape_word(obj.shape)) == shape_tok;
                CHECK(ep.gold_yes == (present ? 1 : 0));
                break;
            }
        }
    }
}

TEST_CASE("rle round trip and scene json") {
    Rng rng(77);
    for (int rep = 0; rep < 30; ++rep) {
        std::vector<std::uint8_t> mask(64);
        for (auto& m : mask) m = rng.uniform() < 0.3 ? 1 : 0;
        CHECK(rle_to_mask(mask_to_rle(mask), mask.size()) == mask);
    }

    SceneSpec spec;
    spec.n_objects = 2;
    auto scene = gen_scene(11, spec);
    auto parsed = nlohmann::json::parse(scene_to_json(scene));
    CHECK(parsed["grid_h"] == 8);
    CHECK(parsed["objects"].size() == 2);
    const std::string rle = parsed["objects"][0]["mask_rle"];
    CHECK(rle_to_mask(rle, 64) == scene.objects[0].mask);
}
