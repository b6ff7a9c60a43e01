#pragma once

#include "richctl/image.hpp"

namespace richctl {

struct PrepConfig {
    double w_min = 25.0;  // stroke-width gate, px
    double w_max = 50.0;
    int kernel = 10;  // dilation/erosion radius, px
    double gamma = 50.0;
    double blur_radius = 3.0;
    double binarize_threshold = 0.5;  // fraction of max
    double width_percentile = 0.0;    // 0 = strict minimum over ridge widths

    void validate() const;
};

// Binary mask helpers operate on single-channel {0,1} images.
Image binarize(const Image& gray, double threshold_frac);
Image dilate_square(const Image& binary, int radius);
Image erode_square(const Image& binary, int radius);
Image gaussian_blur(const Image& img, double radius);

// Exact Euclidean distance transform to the nearest background pixel
// (a foreground pixel with no background anywhere maps to +inf).
std::vector<double> distance_transform(const Image& binary);

// Minimum stroke width: 2*d - 1 over distance-transform ridge maxima
// (local maxima of the DT along the medial axis). +inf on empty foreground.
// percentile > 0 takes that quantile of ridge widths instead of the minimum.
double min_line_width(const Image& binary, double percentile = 0.0);

// Result of preprocessing plus which morphology gate (if any) fired.
enum class MorphApplied { None, Dilate, Erode };
struct PrepResult {
    Image image;
    MorphApplied morph = MorphApplied::None;
    double measured_width = 0.0;
};

// Binarize -> width-gated dilation/erosion -> unsharp masking, clipped to [0,1].
PrepResult preprocess(const Image& cond, const PrepConfig& cfg);

// Collapse a condition image to one channel; throws when channels disagree.
Image to_grayscale(const Image& img);

}  // namespace richctl
