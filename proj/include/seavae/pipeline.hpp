#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "seavae/latent.hpp"
#include "seavae/manifest.hpp"
#include "seavae/metrics.hpp"
#include "seavae/roi.hpp"
#include "seavae/vae.hpp"

namespace seavae {

inline constexpr int kRecordsVersion = 1;

class PipelineError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct IngestOptions {
    std::size_t height = 64;
    std::size_t width = 80;
    CameraGeometry geometry;
    /// CSV with header `filename,label[,altitude_m]`; empty means none.
    std::filesystem::path sidecar;
    /// Share of inlier/unlabeled images held out for testing; the rest split train/val.
    double test_fraction = 0.2;
    double val_fraction = 0.3;
    std::uint64_t seed = 0;
    /// Defaults to <directory>/manifest.ndjson.
    std::filesystem::path manifest_path;
};

/// Scans `directory` (non-recursive) for .png/.jpg/.jpeg files, decodes each
/// one, and writes the manifest. Undecodable files are skipped with a warning.
/// Outliers from the sidecar always go to the test split.
DatasetManifest ingest(const std::filesystem::path& directory, const IngestOptions& options);

struct ImageBatch {
    std::vector<const ImageRecord*> records;
    Tensor4 images;
};

ImageBatch load_images(const DatasetManifest& manifest, const std::filesystem::path& manifest_dir,
                       std::vector<const ImageRecord*> records);
ImageBatch load_split(const DatasetManifest& manifest, const std::filesystem::path& manifest_dir, Split split);

/// Trains on the manifest's train split and validates on its val split.
Checkpoint train_from_manifest(const DatasetManifest& manifest, const std::filesystem::path& manifest_dir,
                               const VaeConfig& config, const TrainCallbacks& callbacks = {});

/// Mean squared error between every image and its reconstruction.
std::vector<double> l2_scores(const Vae& model, const Tensor4& images, std::size_t batch_size = 64);
double l2_score(const Vae& model, const Tensor4& image);

/// Percentile knobs. Density flags the low side: p keeps images whose density
/// is strictly below the (100 - p)-th percentile. ROI flags the high side:
/// roi_score strictly above the p-th percentile. A value of 0 disables that
/// gate (every image passes it).
struct Thresholds {
    double density_percentile = 80.0;
    double roi_percentile = 80.0;
    void validate() const;
};

/// Preset with the ROI gate at the 95th percentile.
Thresholds precision_preset();

struct DetectionRecord {
    std::string id;
    Label label = Label::Unlabeled;
    std::optional<Label> operator_label;
    double l2_score = 0.0;
    double density = 0.0;
    bool density_flag = false;
    double roi_score = 0.0;
    bool roi_flag = false;
    bool joint_flag = false;
    double x = 0.0;
    double y = 0.0;
    std::size_t roi_count = 0;
    std::optional<BoundingBox> roi_bbox;
    std::string model_id;
};

struct DetectionSet {
    int version = kRecordsVersion;
    std::string model_id;
    Thresholds thresholds;
    double density_threshold = 0.0;
    double roi_threshold = 0.0;
    double bandwidth = 0.0;
    /// Densities of pooled training images; when present the density
    /// percentile is taken over records and these together.
    std::vector<double> reference_density;
    std::vector<DetectionRecord> records;

    [[nodiscard]] const DetectionRecord* find(const std::string& id) const;
    DetectionRecord* find(const std::string& id);
};

struct DetectConfig {
    Thresholds thresholds;
    TsneOptions tsne;
    std::vector<double> bandwidth_grid = default_bandwidth_grid();
    std::size_t kde_folds = 20;
    /// Embed and score the train split with the test split so the density
    /// percentile is taken over both; off takes it over the test split alone.
    bool pool_train_density = false;
    RoiConfig roi;
    SizeBounds size;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const Thresholds& t);
void from_json(const nlohmann::json& j, Thresholds& t);

inline constexpr std::size_t kMinDetectImages = 10;

/// Stage 1 encodes the test split, reduces the posterior means with t-SNE and
/// scores each point under a cross-validated KDE. Stage 2 runs the ROI chain
/// on every reconstruction. Flags follow `config.thresholds`.
DetectionSet detect(const DatasetManifest& manifest, const std::filesystem::path& manifest_dir,
                    const Checkpoint& checkpoint, const DetectConfig& config);

/// Recomputes every flag from cached scores; no model inference.
void apply_thresholds(DetectionSet& set, const Thresholds& thresholds);

/// Record fields as flat JSON; shared by the records file and the review API.
void to_json(nlohmann::json& j, const DetectionRecord& r);
void from_json(const nlohmann::json& j, DetectionRecord& r);

std::string records_to_ndjson(const DetectionSet& set);
DetectionSet records_from_ndjson(const std::string& text);
void write_records(const DetectionSet& set, const std::filesystem::path& path);
DetectionSet read_records(const std::filesystem::path& path);
std::string records_to_csv(const DetectionSet& set);

enum class DetectorMode { Clustering, Roi, Joint };

std::string to_string(DetectorMode mode);

/// Ranking score used for precision-recall curves: -density for clustering,
/// roi_score for ROI, and roi_score within the density-flagged subset (others
/// rank below every flagged image) for joint.
double mode_score(const DetectionRecord& record, DetectorMode mode);
bool mode_flag(const DetectionRecord& record, DetectorMode mode);

struct EvalReport {
    DetectorMode mode = DetectorMode::Joint;
    Confusion counts;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    /// Empty when the evaluated records hold only one class.
    PrCurve pr;
    nlohmann::json config;
};

void to_json(nlohmann::json& j, const EvalReport& r);

enum class LabelSource { GroundTruth, Operator };

/// Uses records carrying a label from `source`; throws PipelineError when none do.
EvalReport evaluate(const DetectionSet& set, DetectorMode mode, LabelSource source = LabelSource::GroundTruth);

struct SweepRow {
    std::size_t latent_dim = 0;
    EvalReport report;
};

/// One model per latent size (shared seed), evaluated in all three modes.
std::vector<SweepRow> sweep_latent_dim(std::span<const std::size_t> dims, const DatasetManifest& manifest,
                                       const std::filesystem::path& manifest_dir, const VaeConfig& base,
                                       const DetectConfig& detect_config,
                                       const std::function<void(std::size_t, const Checkpoint&)>& on_model = {});

std::string sweep_to_csv(std::span<const SweepRow> rows);
std::string eval_to_csv(std::span<const EvalReport> reports);

}  // namespace seavae
