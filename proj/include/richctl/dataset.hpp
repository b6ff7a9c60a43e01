#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "richctl/image.hpp"

namespace richctl {

enum class ConditionKind { Edge, Silhouette, Mask };

const char* to_string(ConditionKind k);
ConditionKind condition_kind_from_string(const std::string& s);

// Procedural scene of 2-4 flat-shaded primitives on a gradient background.
struct Shape {
    enum Kind { Circle, Rect, Triangle } kind;
    int color = 0;           // palette index
    double cx = 0, cy = 0;   // center (pixels)
    double p0 = 0, p1 = 0;   // radius | half-extents
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // triangle vertices
};

struct Scene {
    int size = 32;
    std::vector<Shape> shapes;
    float bg_top[3] = {0, 0, 0};
    float bg_bottom[3] = {0, 0, 0};
};

struct SamplePair {
    Image natural;    // rendered scene, [0,1], c=3
    Image condition;  // grayscale rendering replicated to 3 channels
    std::string prompt;
    ConditionKind condition_kind = ConditionKind::Edge;
    int scene_id = 0;
};

Scene random_scene(int size, Rng& rng);
Image render_scene(const Scene& scene);
Image render_condition(const Scene& scene, ConditionKind kind);
std::string scene_prompt(const Scene& scene);

// n scenes, each emitted with every condition kind (3 pairs per scene).
// size < 16 is rejected (the attention grid degenerates below that).
std::vector<SamplePair> generate_dataset(int n, int size, uint64_t seed);

// Directory of PNM images plus a JSON index listing pairs, kinds, prompts.
void save_dataset(const std::vector<SamplePair>& ds, const std::filesystem::path& dir);
std::vector<SamplePair> load_dataset(const std::filesystem::path& dir);

}  // namespace richctl
