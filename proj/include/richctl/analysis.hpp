#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "richctl/dataset.hpp"
#include "richctl/denoiser.hpp"
#include "richctl/image.hpp"
#include "richctl/scheduler.hpp"

namespace richctl {

// First principal component of stacked per-image feature maps: center by the
// combined mean, take the leading covariance eigenvector (sign fixed so its
// largest-magnitude entry is positive), project each image to an HW-vector.
struct PcaProjection {
    Eigen::VectorXd component;             // F-dim direction
    std::vector<Eigen::VectorXd> projections;  // one (HW)-vector per input image
};
PcaProjection pca_first_component(const std::vector<nn::Mat>& features);

// KL(P||Q) between Gaussian-KDE densities (Scott's rule bandwidth) evaluated
// on a shared 1000-point grid spanning the union of both sample ranges,
// normalized to sum 1, q floored at 1e-12.
double kde_kl(const std::vector<double>& p_samples, const std::vector<double>& q_samples,
              int grid_points = 1000);

// Cosine-similarity Gram matrix of per-patch descriptors.
Eigen::MatrixXd self_similarity(const Eigen::MatrixXd& keys);

// Pluggable structural descriptor: image -> n x d per-patch descriptor matrix.
using DescriptorExtractor = std::function<Eigen::MatrixXd(const Image&)>;

// Default extractor: 8x8 patches -> luminance-gradient orientation histograms
// plus per-channel statistics.
Eigen::MatrixXd patch_descriptors(const Image& img, int patch = 8);

// Frobenius distance between the self-similarity matrices of two images.
double struct_distance(const Image& a, const Image& b, const DescriptorExtractor& extractor);
double struct_distance(const Image& a, const Image& b);  // default extractor

// Centered 2-D DFT magnitude spectrum of the luminance channel.
Eigen::MatrixXd dft_magnitude(const Image& img);
double dft_gap(const Image& a, const Image& b);  // L2 distance of spectra
// Spectral energy outside the centered circle of radius H/6, over total energy.
double hf_ratio(const Image& img);

double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct GapPoint {
    int timestep = 0;
    ConditionKind kind = ConditionKind::Edge;
    double kl = 0;
    double selfsim_l2 = 0;
    double dft_l2 = 0;
    double hf_ratio_natural = 0;
    double hf_ratio_condition = 0;
};

struct GapCurve {
    std::vector<GapPoint> points;  // per (timestep, kind)

    // mean over kinds for one metric, ordered by the timestep grid
    std::vector<double> mean_over_kinds(double GapPoint::* metric,
                                        const std::vector<int>& grid) const;
    std::vector<double> kind_curve(double GapPoint::* metric, ConditionKind kind,
                                   const std::vector<int>& grid) const;
};

struct GapCurveConfig {
    std::string tap_layer = "d1";
    uint64_t seed = 42;
};

// Domain-gap measurement across the timestep grid: per-kind KL between
// PCA-projected tap features of condition vs natural images, structural
// distance of the condition to its noisy clean-estimate, DFT spectrum gap and
// high-frequency ratios of the clean estimates.
GapCurve gap_curves(const std::vector<SamplePair>& dataset, const DenoiserModel& model,
                    const NoiseSchedule& sched, const std::vector<int>& timestep_grid,
                    const GapCurveConfig& cfg = {});

void write_gap_csv(const GapCurve& curve, const std::filesystem::path& path);
void write_gap_summary_json(const GapCurve& curve, const std::vector<int>& grid,
                            const std::filesystem::path& path);

}  // namespace richctl
