#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "seavae/roi.hpp"

namespace seavae {

inline constexpr int kManifestVersion = 1;

class ManifestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Label { Inlier, Outlier, Unlabeled };
enum class Split { Train, Val, Test };

std::string to_string(Label label);
std::string to_string(Split split);
Label parse_label(const std::string& text);
Split parse_split(const std::string& text);

struct ImageRecord {
    std::string id;
    /// Relative to the manifest's directory unless absolute.
    std::string path;
    Label label = Label::Unlabeled;
    double altitude_m = 2.0;
    Split split = Split::Train;
    std::optional<BoundingBox> bbox;
    /// Label assigned during review; kept apart from `label`.
    std::optional<Label> operator_label;
};

struct SkippedFile {
    std::string path;
    std::string reason;
};

struct DatasetManifest {
    int version = kManifestVersion;
    CameraGeometry geometry;
    std::uint64_t seed = 0;
    std::string source = "ingested";  // or "synthetic"
    std::size_t height = 64;
    std::size_t width = 80;
    std::vector<ImageRecord> images;
    std::vector<SkippedFile> skipped;

    /// Throws ManifestError on duplicate ids or outliers in train/val.
    void validate() const;
    [[nodiscard]] const ImageRecord* find(const std::string& id) const;
    ImageRecord* find(const std::string& id);
    [[nodiscard]] std::vector<const ImageRecord*> split(Split s) const;
};

/// Newline-delimited JSON: one dataset header line, then one line per image and per skipped file.
std::string manifest_to_ndjson(const DatasetManifest& manifest);
DatasetManifest manifest_from_ndjson(const std::string& text);

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Writes via a temporary file in the same directory and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_text_file(const std::filesystem::path& path);

std::filesystem::path resolve_image_path(const std::filesystem::path& manifest_dir, const ImageRecord& record);

}  // namespace seavae
