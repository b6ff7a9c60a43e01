#include "richctl/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

namespace richctl {

namespace {

struct PaletteEntry {
    const char* name;
    float rgb[3];
};

// clang-format off
const PaletteEntry kPalette[] = {
    {"red",    {0.85f, 0.15f, 0.15f}},
    {"green",  {0.15f, 0.70f, 0.20f}},
    {"blue",   {0.15f, 0.25f, 0.85f}},
    {"yellow", {0.90f, 0.85f, 0.15f}},
    {"purple", {0.60f, 0.20f, 0.75f}},
    {"orange", {0.95f, 0.55f, 0.10f}},
    {"cyan",   {0.15f, 0.75f, 0.80f}},
    {"white",  {0.95f, 0.95f, 0.95f}},
};
// clang-format on
constexpr int kPaletteSize = int(sizeof(kPalette) / sizeof(kPalette[0]));

const char* shape_name(Shape::Kind k) {
    switch (k) {
        case Shape::Circle: return "circle";
        case Shape::Rect: return "square";
        default: return "triangle";
    }
}

bool inside(const Shape& s, double x, double y) {
    switch (s.kind) {
        case Shape::Circle: {
            double dx = x - s.cx, dy = y - s.cy;
            return dx * dx + dy * dy <= s.p0 * s.p0;
        }
        case Shape::Rect:
            return std::abs(x - s.cx) <= s.p0 && std::abs(y - s.cy) <= s.p1;
        case Shape::Triangle: {
            auto side = [](double ax, double ay, double bx, double by, double px, double py) {
                return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
            };
            double d0 = side(s.x0, s.y0, s.x1, s.y1, x, y);
            double d1 = side(s.x1, s.y1, s.x2, s.y2, x, y);
            double d2 = side(s.x2, s.y2, s.x0, s.y0, x, y);
            bool neg = (d0 < 0) || (d1 < 0) || (d2 < 0);
            bool pos = (d0 > 0) || (d1 > 0) || (d2 > 0);
            return !(neg && pos);
        }
    }
    return false;
}

constexpr int kSub = 4;  // 4x4 supersampling per pixel

// Coverage of shape s within pixel (px, py) in [0,1].
double coverage(const Shape& s, int px, int py) {
    int hit = 0;
    for (int sy = 0; sy < kSub; ++sy)
        for (int sx = 0; sx < kSub; ++sx) {
            double x = px + (sx + 0.5) / kSub;
            double y = py + (sy + 0.5) / kSub;
            if (inside(s, x, y)) ++hit;
        }
    return double(hit) / (kSub * kSub);
}

}  // namespace

const char* to_string(ConditionKind k) {
    switch (k) {
        case ConditionKind::Edge: return "edge";
        case ConditionKind::Silhouette: return "silhouette";
        default: return "mask";
    }
}

ConditionKind condition_kind_from_string(const std::string& s) {
    if (s == "edge") return ConditionKind::Edge;
    if (s == "silhouette") return ConditionKind::Silhouette;
    if (s == "mask") return ConditionKind::Mask;
    throw std::invalid_argument("unknown condition kind: " + s);
}

Scene random_scene(int size, Rng& rng) {
    Scene scene;
    scene.size = size;
    // muted gradient background
    for (int i = 0; i < 3; ++i) {
        scene.bg_top[i] = 0.15f + 0.25f * rng.uniform();
        scene.bg_bottom[i] = 0.35f + 0.3f * rng.uniform();
    }
    int n_shapes = rng.uniform_int(2, 4);
    int prev_color = -1;
    for (int i = 0; i < n_shapes; ++i) {
        Shape s;
        s.kind = Shape::Kind(rng.uniform_int(0, 2));
        do {
            s.color = rng.uniform_int(0, kPaletteSize - 1);
        } while (s.color == prev_color);
        prev_color = s.color;
        double margin = size * 0.2;
        s.cx = margin + (size - 2 * margin) * rng.uniform();
        s.cy = margin + (size - 2 * margin) * rng.uniform();
        double rmin = size * 0.12, rmax = size * 0.28;
        s.p0 = rmin + (rmax - rmin) * rng.uniform();
        s.p1 = rmin + (rmax - rmin) * rng.uniform();
        if (s.kind == Shape::Triangle) {
            double r = s.p0;
            double a0 = 2 * M_PI * rng.uniform();
            s.x0 = s.cx + r * std::cos(a0);
            s.y0 = s.cy + r * std::sin(a0);
            s.x1 = s.cx + r * std::cos(a0 + 2.0);
            s.y1 = s.cy + r * std::sin(a0 + 2.0);
            s.x2 = s.cx + r * std::cos(a0 + 4.3);
            s.y2 = s.cy + r * std::sin(a0 + 4.3);
        }
        scene.shapes.push_back(s);
    }
    return scene;
}

Image render_scene(const Scene& scene) {
    const int n = scene.size;
    Image img(n, n, 3);
    for (int y = 0; y < n; ++y) {
        float fy = float(y) / float(n - 1);
        for (int x = 0; x < n; ++x)
            for (int ch = 0; ch < 3; ++ch)
                img.at(y, x, ch) =
                    scene.bg_top[ch] * (1.f - fy) + scene.bg_bottom[ch] * fy;
    }
    // painter's order, antialiased flat shading
    for (const Shape& s : scene.shapes) {
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                double cov = coverage(s, x, y);
                if (cov <= 0.0) continue;
                for (int ch = 0; ch < 3; ++ch)
                    img.at(y, x, ch) = float((1.0 - cov) * img.at(y, x, ch) +
                                             cov * kPalette[s.color].rgb[ch]);
            }
    }
    return img;
}

Image render_condition(const Scene& scene, ConditionKind kind) {
    const int n = scene.size;
    Image gray(n, n, 1);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double v = 0.0;
            for (const Shape& s : scene.shapes) {
                double cov = coverage(s, x, y);
                switch (kind) {
                    case ConditionKind::Edge:
                        // boundary band: partially covered pixels
                        if (cov > 0.03 && cov < 0.97) v = std::max(v, 1.0);
                        break;
                    case ConditionKind::Silhouette:
                        v = std::max(v, cov);
                        break;
                    case ConditionKind::Mask:
                        if (cov >= 0.5) v = 1.0;
                        break;
                }
            }
            gray.at(y, x, 0) = float(v);
        }
    Image out(n, n, 3);
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            for (int ch = 0; ch < 3; ++ch) out.at(y, x, ch) = gray.at(y, x, 0);
    return out;
}

std::string scene_prompt(const Scene& scene) {
    const Shape& a = scene.shapes[0];
    std::string p = std::string("a ") + kPalette[a.color].name + " " + shape_name(a.kind);
    if (scene.shapes.size() > 1) {
        const Shape& b = scene.shapes[1];
        const char* rel = a.cx < b.cx ? " left of " : " right of ";
        p += rel;
        p += std::string("a ") + kPalette[b.color].name + " " + shape_name(b.kind);
    }
    return p;
}

std::vector<SamplePair> generate_dataset(int n, int size, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
    if (size < 16) throw std::invalid_argument("generate_dataset: size must be >= 16");
    std::vector<SamplePair> out;
    out.reserve(size_t(n) * 3);
    for (int i = 0; i < n; ++i) {
        Rng rng(mix_seed(seed, uint64_t(i)));
        Scene scene = random_scene(size, rng);
        Image natural = render_scene(scene);
        std::string prompt = scene_prompt(scene);
        for (ConditionKind kind :
             {ConditionKind::Edge, ConditionKind::Silhouette, ConditionKind::Mask}) {
            SamplePair sp;
            sp.natural = natural;
            sp.condition = render_condition(scene, kind);
            sp.prompt = prompt;
            sp.condition_kind = kind;
            sp.scene_id = i;
            out.push_back(std::move(sp));
        }
    }
    return out;
}

void save_dataset(const std::vector<SamplePair>& ds, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json index = nlohmann::json::array();
    for (size_t i = 0; i < ds.size(); ++i) {
        const auto& sp = ds[i];
        std::string nat = "pair" + std::to_string(i) + "_natural.ppm";
        std::string cond = "pair" + std::to_string(i) + "_condition.ppm";
        write_pnm(sp.natural, dir / nat);
        write_pnm(sp.condition, dir / cond);
        index.push_back({{"natural", nat},
                         {"condition", cond},
                         {"prompt", sp.prompt},
                         {"kind", to_string(sp.condition_kind)},
                         {"scene_id", sp.scene_id}});
    }
    std::ofstream f(dir / "index.json");
    f << index.dump(2) << "\n";
}

std::vector<SamplePair> load_dataset(const std::filesystem::path& dir) {
    std::ifstream f(dir / "index.json");
    if (!f) throw std::invalid_argument("load_dataset: missing index.json in " + dir.string());
    nlohmann::json index;
    f >> index;
    std::vector<SamplePair> out;
    for (const auto& e : index) {
        SamplePair sp;
        sp.natural = read_pnm(dir / e.at("natural").get<std::string>());
        sp.condition = read_pnm(dir / e.at("condition").get<std::string>());
        sp.prompt = e.at("prompt").get<std::string>();
        sp.condition_kind = condition_kind_from_string(e.at("kind").get<std::string>());
        sp.scene_id = e.at("scene_id").get<int>();
        out.push_back(std::move(sp));
    }
    return out;
}

}  // namespace richctl
