#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "seavae/pipeline.hpp"

namespace seavae {

/// Carries the HTTP status the error maps to.
class ReviewError : public std::runtime_error {
public:
    ReviewError(int status, const std::string& message) : std::runtime_error(message), status_(status) {}
    [[nodiscard]] int status() const { return status_; }

private:
    int status_;
};

enum class GalleryFilter { All, Flagged, Labeled };
GalleryFilter parse_filter(const std::string& text);

enum class ThumbnailView { Image, Reconstruction, Heatmap, Mask };
ThumbnailView parse_view(const std::string& text);

struct ReviewOptions {
    /// Where flags are rewritten after a threshold change; empty keeps them in memory.
    std::filesystem::path records_path;
    /// ROI settings for heatmap and mask thumbnails.
    RoiConfig roi;
    SizeBounds size;
};

/// Triage state behind the operator console. Reads work on immutable
/// snapshots; threshold and label updates go through a single writer and
/// publish a new snapshot, so a reader sees either the old flags or the new.
class ReviewService {
public:
    /// Operator labels already in the manifest are copied onto the records.
    /// Without a model, reconstruction and heatmap thumbnails are unavailable.
    ReviewService(DetectionSet records, DatasetManifest manifest, std::filesystem::path manifest_path,
                  std::optional<Checkpoint> model = std::nullopt, ReviewOptions options = {});

    [[nodiscard]] std::shared_ptr<const DetectionSet> snapshot() const;

    /// Records ordered by roi_score descending with id as tiebreak.
    [[nodiscard]] nlohmann::json images(std::size_t offset, std::size_t limit, GalleryFilter filter) const;
    [[nodiscard]] nlohmann::json image(const std::string& id) const;
    [[nodiscard]] std::vector<std::uint8_t> thumbnail(const std::string& id, ThumbnailView view) const;
    /// Points plus, when grid_size > 0, KDE values on a grid_size^2 lattice over the padded point extent.
    [[nodiscard]] nlohmann::json embedding(std::size_t grid_size = 0) const;
    [[nodiscard]] nlohmann::json thresholds() const;
    nlohmann::json set_thresholds(const nlohmann::json& body);
    /// Label "unlabeled" clears the operator label. The manifest is rewritten atomically.
    nlohmann::json set_label(const nlohmann::json& body);
    /// Evaluation over operator-labeled records in all three modes.
    [[nodiscard]] nlohmann::json metrics() const;
    [[nodiscard]] std::string export_csv() const;

private:
    void publish(std::shared_ptr<const DetectionSet> next);
    [[nodiscard]] const ImageRecord& source_record(const std::string& id) const;

    mutable std::mutex read_mutex_;  // guards the snapshot pointer only
    std::shared_ptr<const DetectionSet> current_;
    std::mutex write_mutex_;
    DatasetManifest manifest_;
    std::filesystem::path manifest_path_;
    std::optional<Checkpoint> model_;
    ReviewOptions options_;
};

}  // namespace seavae
