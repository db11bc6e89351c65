#include "kvlens/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "kvlens/rng.hpp"
#include "kvlens/tokenizer.hpp"

namespace kvlens::synth {
namespace {

struct Rgb {
    double r, g, b;
};

constexpr std::array<Rgb, 6> kPalette = {{
    {1.00, 0.15, 0.10}, // red
    {0.10, 0.95, 0.20}, // green
    {0.15, 0.25, 1.00}, // blue
    {0.95, 0.90, 0.10}, // yellow
    {0.70, 0.15, 0.90}, // purple
    {1.00, 0.55, 0.05}, // orange
}};

constexpr std::array<const char*, 6> kColorWords = {"red",    "green",  "blue",
                                                    "yellow", "purple", "orange"};
constexpr std::array<const char*, 3> kShapeWords = {"square", "disc", "bar"};

constexpr double kBackgroundLevel = 0.35;
constexpr double kObjectLevel = 0.85;
constexpr double kTextureLevel = 0.35;
constexpr double kNoiseLevel = 0.004;
constexpr double kNightFactor = 0.3;

constexpr std::uint64_t kTextureSeed = 0xc0ffee01ull;
constexpr std::uint64_t kProjectionSeed = 0xbadc0de5ull;

// Per-shape pixel texture so shape identity is decodable from a single patch.
const std::vector<double>& shape_texture(Shape s) {
    static const auto textures = [] {
        std::array<std::vector<double>, 3> t;
        for (int si = 0; si < 3; ++si) {
            Rng rng(kTextureSeed + static_cast<std::uint64_t>(si));
            t[si].resize(kRawPatchDim);
            for (auto& v : t[si]) v = 2.0 * rng.uniform() - 1.0;
        }
        return t;
    }();
    return textures[static_cast<int>(s)];
}

// Fixed seeded projection from raw patch pixels to patch_dim.
Matrix patch_projection(int patch_dim) {
    Rng rng(kProjectionSeed);
    Matrix p(kRawPatchDim, patch_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(kRawPatchDim));
    for (auto& v : p.data) v = rng.gaussian() * scale;
    return p;
}

void stamp_mask(SceneObject& obj, int grid_h, int grid_w, const ObjectPlacement& pl) {
    obj.mask.assign(static_cast<std::size_t>(grid_h) * grid_w, 0);
    auto set = [&](int r, int c) {
        obj.mask[static_cast<std::size_t>(r) * grid_w + c] = 1;
    };
    switch (pl.shape) {
        case Shape::square:
            for (int r = pl.row; r < pl.row + pl.size; ++r)
                for (int c = pl.col; c < pl.col + pl.size; ++c) set(r, c);
            obj.row = pl.row;
            obj.col = pl.col;
            obj.height = obj.width = pl.size;
            break;
        case Shape::disc: {
            const int cr = pl.row + pl.size;
            const int cc = pl.col + pl.size;
            for (int r = pl.row; r <= pl.row + 2 * pl.size; ++r)
                for (int c = pl.col; c <= pl.col + 2 * pl.size; ++c)
                    if ((r - cr) * (r - cr) + (c - cc) * (c - cc) <= pl.size * pl.size)
                        set(r, c);
            obj.row = pl.row;
            obj.col = pl.col;
            obj.height = obj.width = 2 * pl.size + 1;
            break;
        }
        case Shape::bar:
            if (pl.vertical) {
                for (int r = pl.row; r < pl.row + pl.size; ++r) set(r, pl.col);
                obj.height = pl.size;
                obj.width = 1;
            } else {
                for (int c = pl.col; c < pl.col + pl.size; ++c) set(pl.row, c);
                obj.height = 1;
                obj.width = pl.size;
            }
            obj.row = pl.row;
            obj.col = pl.col;
            break;
    }
    obj.shape = pl.shape;
    obj.color = pl.color;
}

bool placement_fits(const ObjectPlacement& pl, int grid_h, int grid_w) {
    switch (pl.shape) {
        case Shape::square:
            return pl.row >= 0 && pl.col >= 0 && pl.row + pl.size <= grid_h &&
                   pl.col + pl.size <= grid_w;
        case Shape::disc:
            return pl.row >= 0 && pl.col >= 0 && pl.row + 2 * pl.size + 1 <= grid_h &&
                   pl.col + 2 * pl.size + 1 <= grid_w;
        case Shape::bar:
            if (pl.vertical)
                return pl.row >= 0 && pl.col >= 0 && pl.row + pl.size <= grid_h && pl.col < grid_w;
            return pl.row >= 0 && pl.col >= 0 && pl.row < grid_h && pl.col + pl.size <= grid_w;
    }
    return false;
}

bool overlaps(const std::vector<std::uint8_t>& a, const std::vector<std::uint8_t>& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] && b[i]) return true;
    return false;
}

void add_keypoints(SceneObject& obj, int grid_w) {
    std::vector<std::pair<int, int>> cells;
    for (std::size_t p = 0; p < obj.mask.size(); ++p)
        if (obj.mask[p])
            cells.emplace_back(static_cast<int>(p) / grid_w, static_cast<int>(p) % grid_w);
    if (cells.empty()) return;
    double mr = 0.0, mc = 0.0;
    for (auto [r, c] : cells) {
        mr += r;
        mc += c;
    }
    int cr = static_cast<int>(std::lround(mr / cells.size()));
    int cc = static_cast<int>(std::lround(mc / cells.size()));
    if (!obj.mask[static_cast<std::size_t>(cr) * grid_w + cc]) {
        cr = cells.front().first;
        cc = cells.front().second;
    }
    obj.keypoints.emplace_back(cr, cc);
    if (cells.front() != std::make_pair(cr, cc)) obj.keypoints.push_back(cells.front());
    if (cells.back() != std::make_pair(cr, cc) && cells.back() != cells.front())
        obj.keypoints.push_back(cells.back());
}

ObjectPlacement sample_placement(Rng& rng, int grid_h, int grid_w) {
    ObjectPlacement pl;
    pl.shape = static_cast<Shape>(rng.uniform_index(3));
    pl.color = static_cast<int>(rng.uniform_index(kPalette.size()));
    switch (pl.shape) {
        case Shape::square: pl.size = 2 + static_cast<int>(rng.uniform_index(2)); break;
        case Shape::disc: pl.size = 1 + static_cast<int>(rng.uniform_index(2)); break;
        case Shape::bar:
            pl.size = 3 + static_cast<int>(rng.uniform_index(2));
            pl.vertical = rng.uniform() < 0.5;
            break;
    }
    pl.row = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(grid_h)));
    pl.col = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(grid_w)));
    return pl;
}

std::vector<int> relation_tokens(const SceneObject& a, const SceneObject& b) {
    const double ar = a.row + a.height / 2.0, ac = a.col + a.width / 2.0;
    const double br = b.row + b.height / 2.0, bc = b.col + b.width / 2.0;
    if (std::abs(ar - br) >= std::abs(ac - bc))
        return {tok::word_id(ar < br ? "above" : "below")};
    if (ac < bc) return {tok::word_id("left"), tok::word_id("of")};
    return {tok::word_id("right"), tok::word_id("of")};
}

} // namespace

const char* shape_word(Shape s) { return kShapeWords[static_cast<int>(s)]; }
const char* color_word(int color_id) { return kColorWords[static_cast<std::size_t>(color_id)]; }
int num_colors() { return static_cast<int>(kPalette.size()); }

std::vector<std::uint8_t> SyntheticScene::foreground_mask() const {
    std::vector<std::uint8_t> fg(static_cast<std::size_t>(grid_h) * grid_w, 0);
    for (const auto& obj : objects)
        for (std::size_t p = 0; p < fg.size(); ++p) fg[p] |= obj.mask[p];
    return fg;
}

const SceneObject& SyntheticScene::primary() const {
    for (const auto& obj : objects)
        if (obj.primary) return obj;
    throw std::logic_error("scene has no primary object");
}

std::vector<double> render_patch_pixels(const SyntheticScene& scene, int r, int c) {
    // Re-render deterministically: the per-pixel noise stream is keyed on the
    // patch position so rendering is order-independent.
    const int p = scene.position(r, c);
    int owner = -1;
    for (std::size_t o = 0; o < scene.objects.size(); ++o) {
        if (scene.objects[o].mask[static_cast<std::size_t>(p)]) {
            owner = static_cast<int>(o);
            break;
        }
    }
    Rng noise = Rng(scene.seed).child(0x9000 + static_cast<std::uint64_t>(p));
    std::vector<double> px(kRawPatchDim);
    for (int i = 0; i < kPatchPixels * kPatchPixels; ++i) {
        for (int ch = 0; ch < kPixelChannels; ++ch) {
            const int idx = i * kPixelChannels + ch;
            double v;
            const double n = (2.0 * noise.uniform() - 1.0) * kNoiseLevel;
            if (owner < 0) {
                v = kBackgroundLevel + n;
            } else {
                const auto& obj = scene.objects[static_cast<std::size_t>(owner)];
                const Rgb& rgb = kPalette[static_cast<std::size_t>(obj.color)];
                const double base = (ch == 0 ? rgb.r : ch == 1 ? rgb.g : rgb.b);
                v = base * kObjectLevel + shape_texture(obj.shape)[idx] * kTextureLevel + n;
            }
            if (scene.domain == Domain::night) v *= kNightFactor;
            px[idx] = v;
        }
    }
    return px;
}

SyntheticScene gen_scene(std::uint64_t seed, const SceneSpec& spec) {
    SyntheticScene scene;
    scene.grid_h = spec.grid_h;
    scene.grid_w = spec.grid_w;
    scene.patch_dim = spec.patch_dim;
    scene.domain = spec.domain;
    scene.seed = seed;

    Rng rng(seed);
    std::vector<ObjectPlacement> placements = spec.forced_objects;
    if (placements.empty() && spec.n_objects > 0) {
        for (int o = 0; o < spec.n_objects; ++o) {
            bool placed = false;
            for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
                ObjectPlacement pl = sample_placement(rng, spec.grid_h, spec.grid_w);
                if (!placement_fits(pl, spec.grid_h, spec.grid_w)) continue;
                SceneObject probe;
                stamp_mask(probe, spec.grid_h, spec.grid_w, pl);
                bool clash = false;
                for (const auto& existing : scene.objects)
                    clash |= overlaps(existing.mask, probe.mask);
                if (clash) continue;
                placements.push_back(pl);
                scene.objects.push_back(std::move(probe));
                placed = true;
            }
            if (!placed) throw std::runtime_error("gen_scene: unplaceable object");
        }
        scene.objects.clear();
    }

    for (const auto& pl : placements) {
        if (!placement_fits(pl, spec.grid_h, spec.grid_w))
            throw std::runtime_error("gen_scene: unplaceable object");
        SceneObject obj;
        stamp_mask(obj, spec.grid_h, spec.grid_w, pl);
        for (const auto& existing : scene.objects)
            if (overlaps(existing.mask, obj.mask))
                throw std::runtime_error("gen_scene: unplaceable object");
        add_keypoints(obj, spec.grid_w);
        scene.objects.push_back(std::move(obj));
    }
    if (!scene.objects.empty()) scene.objects.front().primary = true;

    // Caption and referring expressions.
    if (scene.objects.size() >= 2) {
        const auto& a = scene.objects[0];
        const auto& b = scene.objects[1];
        scene.caption = {tok::word_id("a"), tok::word_id(color_word(a.color)),
                         tok::word_id(shape_word(a.shape))};
        for (int t : relation_tokens(a, b)) scene.caption.push_back(t);
        scene.caption.push_back(tok::word_id("a"));
        scene.caption.push_back(tok::word_id(color_word(b.color)));
        scene.caption.push_back(tok::word_id(shape_word(b.shape)));
    } else if (scene.objects.size() == 1) {
        const auto& a = scene.objects[0];
        scene.caption = {tok::word_id("a"), tok::word_id(color_word(a.color)),
                         tok::word_id(shape_word(a.shape))};
    }
    for (std::size_t o = 0; o < scene.objects.size(); ++o) {
        ReferringExpression ref;
        ref.text = {tok::word_id("the"), tok::word_id(color_word(scene.objects[o].color)),
                    tok::word_id(shape_word(scene.objects[o].shape))};
        ref.target = o;
        scene.referring_expressions.push_back(std::move(ref));
    }

    // Render and project patches.
    const Matrix proj = patch_projection(spec.patch_dim);
    scene.patches = Matrix(static_cast<std::size_t>(scene.n_patches()),
                           static_cast<std::size_t>(spec.patch_dim));
    for (int r = 0; r < spec.grid_h; ++r) {
        for (int c = 0; c < spec.grid_w; ++c) {
            const auto px = render_patch_pixels(scene, r, c);
            const int p = scene.position(r, c);
            for (int j = 0; j < spec.patch_dim; ++j) {
                double s = 0.0;
                for (int i = 0; i < kRawPatchDim; ++i) s += px[i] * proj.at(i, j);
                scene.patches.at(static_cast<std::size_t>(p), static_cast<std::size_t>(j)) = s;
            }
        }
    }
    return scene;
}

std::vector<double> shape_texture_pixels(Shape shape) {
    auto px = shape_texture(shape);
    for (auto& v : px) v *= kTextureLevel;
    return px;
}

std::vector<double> color_base_pixels(int color_id) {
    const Rgb& rgb = kPalette[static_cast<std::size_t>(color_id)];
    std::vector<double> px(kRawPatchDim);
    for (int i = 0; i < kPatchPixels * kPatchPixels; ++i) {
        px[i * kPixelChannels + 0] = rgb.r * kObjectLevel;
        px[i * kPixelChannels + 1] = rgb.g * kObjectLevel;
        px[i * kPixelChannels + 2] = rgb.b * kObjectLevel;
    }
    return px;
}

std::vector<double> object_pixels(int color_id, Shape shape) {
    auto px = color_base_pixels(color_id);
    const auto& tex = shape_texture(shape);
    for (int i = 0; i < kRawPatchDim; ++i) px[i] += tex[i] * kTextureLevel;
    return px;
}

std::vector<double> background_pixels() {
    return std::vector<double>(kRawPatchDim, kBackgroundLevel);
}

std::vector<double> project_pixels(std::span<const double> pixels, int patch_dim) {
    const Matrix proj = patch_projection(patch_dim);
    std::vector<double> out(static_cast<std::size_t>(patch_dim), 0.0);
    for (int j = 0; j < patch_dim; ++j) {
        double s = 0.0;
        for (int i = 0; i < kRawPatchDim; ++i) s += pixels[i] * proj.at(i, j);
        out[static_cast<std::size_t>(j)] = s;
    }
    return out;
}

const char* task_name(Task t) {
    switch (t) {
        case Task::fg_seg: return "fg_seg";
        case Task::co_seg: return "co_seg";
        case Task::sem_seg: return "sem_seg";
        case Task::ref_seg: return "ref_seg";
        case Task::sem_corr: return "sem_corr";
        case Task::temp_corr: return "temp_corr";
        case Task::existence_qa: return "existence_qa";
    }
    return "unknown";
}

namespace {

// Scene whose primary object has the given shape/color; distractors avoid
// both so class-driven probes have unambiguous targets.
SyntheticScene class_scene(Rng& rng, const EpisodeSizes& sizes, Shape shape, int color) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        const std::uint64_t scene_seed = rng.next_u64();
        Rng layout = rng.child(0x11 + static_cast<std::uint64_t>(attempt));
        SceneSpec spec;
        spec.grid_h = sizes.grid_h;
        spec.grid_w = sizes.grid_w;
        spec.domain = sizes.domain;
        spec.patch_dim = sizes.patch_dim;

        std::vector<ObjectPlacement> placements;
        std::vector<SceneObject> stamped;
        bool ok = true;
        for (int o = 0; o < std::max(1, sizes.n_objects) && ok; ++o) {
            bool placed = false;
            for (int t = 0; t < 200 && !placed; ++t) {
                ObjectPlacement pl = sample_placement(layout, sizes.grid_h, sizes.grid_w);
                if (o == 0) {
                    pl.shape = shape;
                    pl.color = color;
                    if (shape == Shape::square) pl.size = 2 + static_cast<int>(layout.uniform_index(2));
                    if (shape == Shape::disc) pl.size = 1;
                    if (shape == Shape::bar) pl.size = 3 + static_cast<int>(layout.uniform_index(2));
                } else {
                    if (pl.shape == shape || pl.color == color) continue;
                }
                if (!placement_fits(pl, sizes.grid_h, sizes.grid_w)) continue;
                SceneObject probe;
                stamp_mask(probe, sizes.grid_h, sizes.grid_w, pl);
                bool clash = false;
                for (const auto& e : stamped) clash |= overlaps(e.mask, probe.mask);
                if (clash) continue;
                placements.push_back(pl);
                stamped.push_back(std::move(probe));
                placed = true;
            }
            ok = placed;
        }
        if (!ok) continue;
        SceneSpec forced = spec;
        forced.forced_objects = placements;
        return gen_scene(scene_seed, forced);
    }
    throw std::runtime_error("gen_episode: could not build class scene");
}

std::vector<ObjectPlacement> placements_of(const SyntheticScene& scene) {
    std::vector<ObjectPlacement> out;
    for (const auto& obj : scene.objects) {
        ObjectPlacement pl;
        pl.shape = obj.shape;
        pl.color = obj.color;
        pl.row = obj.row;
        pl.col = obj.col;
        switch (obj.shape) {
            case Shape::square: pl.size = obj.height; break;
            case Shape::disc: pl.size = (obj.height - 1) / 2; break;
            case Shape::bar:
                pl.vertical = obj.height > obj.width;
                pl.size = std::max(obj.height, obj.width);
                break;
        }
        out.push_back(pl);
    }
    return out;
}

std::vector<ObjectPlacement> translate(const std::vector<ObjectPlacement>& placements,
                                       int dr, int dc) {
    auto out = placements;
    for (auto& pl : out) {
        pl.row += dr;
        pl.col += dc;
    }
    return out;
}

bool all_fit(const std::vector<ObjectPlacement>& placements, int grid_h, int grid_w) {
    for (const auto& pl : placements)
        if (!placement_fits(pl, grid_h, grid_w)) return false;
    return true;
}

} // namespace

Episode gen_episode(Task task, std::uint64_t seed, const EpisodeSizes& sizes) {
    Episode ep;
    ep.task = task;
    ep.seed = seed;
    Rng rng(seed);

    const Shape cls_shape = static_cast<Shape>(rng.uniform_index(3));
    const int cls_color = static_cast<int>(rng.uniform_index(kPalette.size()));

    switch (task) {
        case Task::fg_seg: {
            if (sizes.n_support != 5 || sizes.n_query < 1)
                throw std::invalid_argument("fg_seg episodes need 5 support and >=1 query");
            for (int i = 0; i < sizes.n_support; ++i) {
                Rng child = rng.child(100 + static_cast<std::uint64_t>(i));
                ep.support.push_back(class_scene(child, sizes, cls_shape, cls_color));
            }
            for (int i = 0; i < sizes.n_query; ++i) {
                Rng child = rng.child(200 + static_cast<std::uint64_t>(i));
                ep.query.push_back(class_scene(child, sizes, cls_shape, cls_color));
            }
            break;
        }
        case Task::co_seg: {
            if (sizes.n_support < 2)
                throw std::invalid_argument("co_seg episodes need >=2 scenes");
            for (int i = 0; i < sizes.n_support; ++i) {
                Rng child = rng.child(100 + static_cast<std::uint64_t>(i));
                ep.support.push_back(class_scene(child, sizes, cls_shape, cls_color));
            }
            break;
        }
        case Task::sem_seg:
        case Task::ref_seg: {
            if (sizes.n_query < 1) throw std::invalid_argument("segmentation episodes need >=1 query");
            for (int i = 0; i < sizes.n_query; ++i) {
                Rng child = rng.child(200 + static_cast<std::uint64_t>(i));
                ep.query.push_back(class_scene(child, sizes, cls_shape, cls_color));
            }
            if (task == Task::sem_seg) {
                ep.text = {tok::word_id(shape_word(cls_shape))};
            } else {
                ep.text = ep.query.front().referring_expressions.front().text;
            }
            break;
        }
        case Task::sem_corr: {
            Rng child = rng.child(100);
            SyntheticScene src = class_scene(child, sizes, cls_shape, cls_color);
            const auto base = placements_of(src);
            int dr = 0, dc = 0;
            for (int attempt = 0; attempt < 50; ++attempt) {
                const int tr = static_cast<int>(rng.uniform_index(3)) - 1;
                const int tc = static_cast<int>(rng.uniform_index(3)) - 1;
                if (all_fit(translate(base, tr, tc), sizes.grid_h, sizes.grid_w)) {
                    dr = tr;
                    dc = tc;
                    break;
                }
            }
            SceneSpec spec;
            spec.grid_h = sizes.grid_h;
            spec.grid_w = sizes.grid_w;
            spec.domain = sizes.domain;
            spec.patch_dim = sizes.patch_dim;
            spec.forced_objects = translate(base, dr, dc);
            SyntheticScene dst = gen_scene(rng.next_u64(), spec);
            for (auto [kr, kc] : src.primary().keypoints)
                ep.keypoints.push_back({kr, kc, kr + dr, kc + dc});
            ep.support.push_back(std::move(src));
            ep.query.push_back(std::move(dst));
            break;
        }
        case Task::temp_corr: {
            if (sizes.n_frames < 2)
                throw std::invalid_argument("temp_corr episodes need >=2 frames");
            Rng child = rng.child(100);
            SyntheticScene frame = class_scene(child, sizes, cls_shape, cls_color);
            auto placements = placements_of(frame);
            ep.frames.push_back(frame);
            for (int t = 1; t < sizes.n_frames; ++t) {
                int dr = 0, dc = 0;
                for (int attempt = 0; attempt < 50; ++attempt) {
                    const int tr = static_cast<int>(rng.uniform_index(3)) - 1;
                    const int tc = static_cast<int>(rng.uniform_index(3)) - 1;
                    if (all_fit(translate(placements, tr, tc), sizes.grid_h, sizes.grid_w)) {
                        dr = tr;
                        dc = tc;
                        break;
                    }
                }
                placements = translate(placements, dr, dc);
                SceneSpec spec;
                spec.grid_h = sizes.grid_h;
                spec.grid_w = sizes.grid_w;
                spec.domain = sizes.domain;
                spec.patch_dim = sizes.patch_dim;
                spec.forced_objects = placements;
                ep.frames.push_back(gen_scene(rng.next_u64(), spec));
            }
            break;
        }
        case Task::existence_qa: {
            Rng child = rng.child(100);
            SyntheticScene scene = class_scene(child, sizes, cls_shape, cls_color);
            std::vector<int> present, absent;
            for (int s = 0; s < 3; ++s) {
                bool found = false;
                for (const auto& obj : scene.objects) found |= static_cast<int>(obj.shape) == s;
                (found ? present : absent).push_back(s);
            }
            Shape asked;
            if (!absent.empty() && rng.uniform() < 0.5)
                asked = static_cast<Shape>(absent[rng.uniform_index(absent.size())]);
            else
                asked = static_cast<Shape>(present[rng.uniform_index(present.size())]);
            ep.gold_yes = 0;
            for (const auto& obj : scene.objects)
                if (obj.shape == asked) ep.gold_yes = 1;
            ep.text = {tok::word_id("is"), tok::word_id("there"), tok::word_id("a"),
                       tok::word_id(shape_word(asked)), tok::word_id("?")};
            ep.query.push_back(std::move(scene));
            break;
        }
    }
    return ep;
}

std::string mask_to_rle(const std::vector<std::uint8_t>& mask) {
    std::string out;
    std::size_t i = 0;
    while (i < mask.size()) {
        std::size_t j = i;
        while (j < mask.size() && mask[j] == mask[i]) ++j;
        if (!out.empty()) out.push_back(',');
        out += std::to_string(static_cast<int>(mask[i])) + ":" + std::to_string(j - i);
        i = j;
    }
    return out;
}

std::vector<std::uint8_t> rle_to_mask(const std::string& rle, std::size_t size) {
    std::vector<std::uint8_t> mask;
    mask.reserve(size);
    std::size_t pos = 0;
    while (pos < rle.size()) {
        const std::size_t colon = rle.find(':', pos);
        std::size_t comma = rle.find(',', pos);
        if (comma == std::string::npos) comma = rle.size();
        const int value = std::stoi(rle.substr(pos, colon - pos));
        const long run = std::stol(rle.substr(colon + 1, comma - colon - 1));
        mask.insert(mask.end(), static_cast<std::size_t>(run),
                    static_cast<std::uint8_t>(value));
        pos = comma + 1;
    }
    if (mask.size() != size) throw std::invalid_argument("rle_to_mask: size mismatch");
    return mask;
}

std::string scene_to_json(const SyntheticScene& scene) {
    nlohmann::json j;
    j["grid_h"] = scene.grid_h;
    j["grid_w"] = scene.grid_w;
    j["domain"] = scene.domain == Domain::day ? "day" : "night";
    j["seed"] = scene.seed;
    j["caption"] = scene.caption;
    j["objects"] = nlohmann::json::array();
    for (const auto& obj : scene.objects) {
        nlohmann::json o;
        o["shape"] = shape_word(obj.shape);
        o["color"] = color_word(obj.color);
        o["bbox"] = {obj.row, obj.col, obj.height, obj.width};
        o["mask_rle"] = mask_to_rle(obj.mask);
        o["primary"] = obj.primary;
        o["keypoints"] = nlohmann::json::array();
        for (auto [r, c] : obj.keypoints) o["keypoints"].push_back({r, c});
        j["objects"].push_back(std::move(o));
    }
    j["referring_expressions"] = nlohmann::json::array();
    for (const auto& ref : scene.referring_expressions)
        j["referring_expressions"].push_back({{"text", ref.text}, {"target", ref.target}});
    return j.dump(2);
}

} // namespace kvlens::synth
