#pragma once

#include <filesystem>

#include "seavae/manifest.hpp"
#include "seavae/tensor.hpp"

namespace seavae {

/// Camera used for synthetic datasets (about 60 px per metre at 2 m altitude).
CameraGeometry survey_geometry();

struct SynthConfig {
    std::size_t height = 64;
    std::size_t width = 80;
    /// Inliers reserved for the test split; the remaining inliers split 70/30 into train/val.
    std::size_t test_inliers = 500;
    double val_fraction = 0.3;
    /// Survey camera at 2 m: 1 m line spacing with 25% cross-track overlap
    /// gives a 4/3 m by 16/15 m footprint on a 80 x 64 image.
    CameraGeometry geometry = survey_geometry();
    /// Physical side of the implanted object and its relative jitter.
    double object_side_m = 0.3;
    double object_jitter = 0.1;
    /// Scales per-image colour, substrate-mix and lighting variation; 1 is the widest.
    double variability = 1.0;
    /// Per-image gravel amplitude is log-uniform in [gravel_min, gravel_max].
    double gravel_min = 0.02;
    double gravel_max = 0.08;
    /// Per-image noise standard deviation lies in [0, noise_max], variance uniform.
    double noise_max = 0.2;
};

struct SynthImage {
    Tensor4 image;
    std::optional<BoundingBox> bbox;
};

/// Renders one seafloor-like texture; with `outlier` set, implants one
/// high-contrast quadrilateral sized from the camera geometry.
SynthImage render_synthetic(const SynthConfig& config, std::uint64_t seed, std::size_t index, bool outlier);

/// Writes images/<id>.png under `out_dir` plus manifest.ndjson and returns the manifest.
DatasetManifest synth_dataset(std::size_t n_inliers, std::size_t n_outliers, std::uint64_t seed,
                              const SynthConfig& config, const std::filesystem::path& out_dir);

}  // namespace seavae
