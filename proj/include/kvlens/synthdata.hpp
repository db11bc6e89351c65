#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "kvlens/matrix.hpp"

// Deterministic patch-grid scenes with ground-truth masks, keypoints,
// captions and referring expressions, plus episode assembly for the probing
// tasks. All generation is a pure function of (seed, spec).
namespace kvlens::synth {

inline constexpr int kPatchPixels = 4;  // 4x4 pixels per patch
inline constexpr int kPixelChannels = 3;
inline constexpr int kRawPatchDim = kPatchPixels * kPatchPixels * kPixelChannels;
inline constexpr int kDefaultPatchDim = kRawPatchDim;

enum class Shape : int { square = 0, disc = 1, bar = 2 };
enum class Domain : int { day = 0, night = 1 };

const char* shape_word(Shape s);
const char* color_word(int color_id);
int num_colors();

struct SceneObject {
    Shape shape = Shape::square;
    int color = 0;
    int row = 0, col = 0, height = 0, width = 0;     // bbox in patch units
    std::vector<std::uint8_t> mask;                   // H*W, row-major
    std::vector<std::pair<int, int>> keypoints;       // (row, col), inside mask
    bool primary = false;
};

struct ReferringExpression {
    std::vector<int> text;
    std::size_t target = 0; // object index
};

struct SyntheticScene {
    int grid_h = 0, grid_w = 0;
    int patch_dim = 0;
    Domain domain = Domain::day;
    Matrix patches; // (grid_h*grid_w) x patch_dim, position p = r*grid_w + c
    std::vector<SceneObject> objects;
    std::vector<int> caption;
    std::vector<ReferringExpression> referring_expressions;
    std::uint64_t seed = 0;

    int n_patches() const { return grid_h * grid_w; }
    int position(int r, int c) const { return r * grid_w + c; }
    // Union mask of all objects (foreground).
    std::vector<std::uint8_t> foreground_mask() const;
    const SceneObject& primary() const;
};

struct ObjectPlacement {
    Shape shape;
    int color;
    int row, col; // anchor (top-left of bbox)
    int size;     // square side / disc radius / bar length
    bool vertical = false; // bars only
};

struct SceneSpec {
    int grid_h = 8;
    int grid_w = 8;
    int n_objects = 1;
    Domain domain = Domain::day;
    int patch_dim = kDefaultPatchDim;
    // When nonempty, places exactly these objects (first one is primary)
    // instead of sampling; used by fixtures and planted constructions.
    std::vector<ObjectPlacement> forced_objects;
};

// Deterministic given seed. Throws std::runtime_error if an object cannot be
// placed without overlap.
SyntheticScene gen_scene(std::uint64_t seed, const SceneSpec& spec);

enum class Task : int {
    fg_seg = 0,
    co_seg = 1,
    sem_seg = 2,
    ref_seg = 3,
    sem_corr = 4,
    temp_corr = 5,
    existence_qa = 6,
};

const char* task_name(Task t);

struct KeypointPair {
    int src_row, src_col;
    int dst_row, dst_col;
};

struct Episode {
    Task task;
    std::uint64_t seed = 0;
    std::vector<SyntheticScene> support;
    std::vector<SyntheticScene> query;
    std::vector<SyntheticScene> frames;   // temp_corr
    std::vector<KeypointPair> keypoints;  // sem_corr (support[0] -> query[0])
    std::vector<int> text;                // class name / referring expr / question
    int gold_yes = -1;                    // existence_qa
};

struct EpisodeSizes {
    int n_support = 5;
    int n_query = 1;
    int n_frames = 4;
    int grid_h = 8;
    int grid_w = 8;
    int n_objects = 2;
    Domain domain = Domain::day;
    int patch_dim = kDefaultPatchDim;
};

// Annotations are internally consistent per task (see module tests). Throws
// std::invalid_argument on sizes invalid for the task.
Episode gen_episode(Task task, std::uint64_t seed, const EpisodeSizes& sizes);

// JSON fixture form: grid dims, object list, masks as run-length strings.
std::string scene_to_json(const SyntheticScene& scene);

std::string mask_to_rle(const std::vector<std::uint8_t>& mask);
std::vector<std::uint8_t> rle_to_mask(const std::string& rle, std::size_t size);

// Raw pixel rendering of one patch (exposed for tests of the renderer).
std::vector<double> render_patch_pixels(const SyntheticScene& scene, int r, int c);

// Noise-free pixel prototypes and the fixed pixel->patch projection, exposed
// so planted weight constructions can compute exact content directions.
std::vector<double> object_pixels(int color_id, Shape shape);
std::vector<double> background_pixels();
std::vector<double> shape_texture_pixels(Shape shape);
std::vector<double> color_base_pixels(int color_id);
std::vector<double> project_pixels(std::span<const double> pixels, int patch_dim);

} // namespace kvlens::synth
