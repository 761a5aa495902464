#include "seavae/review.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "seavae/checkpoint.hpp"
#include "seavae/image_io.hpp"

namespace seavae {

GalleryFilter parse_filter(const std::string& text) {
    if (text.empty() || text == "all") return GalleryFilter::All;
    if (text == "flagged") return GalleryFilter::Flagged;
    if (text == "labeled") return GalleryFilter::Labeled;
    throw ReviewError(400, fmt::format("unknown filter '{}' (expected all, flagged or labeled)", text));
}

ThumbnailView parse_view(const std::string& text) {
    if (text.empty() || text == "image") return ThumbnailView::Image;
    if (text == "reconstruction") return ThumbnailView::Reconstruction;
    if (text == "heatmap") return ThumbnailView::Heatmap;
    if (text == "mask") return ThumbnailView::Mask;
    throw ReviewError(400, fmt::format("unknown view '{}' (expected image, reconstruction, heatmap or mask)", text));
}

namespace {

nlohmann::json set_header(const DetectionSet& set) {
    return {{"model_id", set.model_id},
            {"thresholds", set.thresholds},
            {"density_threshold", set.density_threshold},
            {"roi_threshold", set.roi_threshold},
            {"bandwidth", set.bandwidth}};
}

nlohmann::json flag_counts(const DetectionSet& set) {
    std::size_t d = 0, r = 0, j = 0;
    for (const auto& rec : set.records) {
        d += rec.density_flag ? 1 : 0;
        r += rec.roi_flag ? 1 : 0;
        j += rec.joint_flag ? 1 : 0;
    }
    return {{"clustering", d}, {"roi", r}, {"joint", j}, {"total", set.records.size()}};
}

}  // namespace

ReviewService::ReviewService(DetectionSet records, DatasetManifest manifest, std::filesystem::path manifest_path,
                             std::optional<Checkpoint> model, ReviewOptions options)
    : manifest_(std::move(manifest)),
      manifest_path_(std::move(manifest_path)),
      model_(std::move(model)),
      options_(std::move(options)) {
    if (records.records.empty()) {
        throw ReviewError(500, "no detection records to review");
    }
    for (auto& r : records.records) {
        const ImageRecord* src = manifest_.find(r.id);
        if (src == nullptr) {
            throw ReviewError(500, fmt::format("record '{}' is not in the manifest", r.id));
        }
        r.operator_label = src->operator_label;
    }
    if (model_ && checkpoint_id(*model_) != records.model_id) {
        spdlog::warn("model {} differs from the one that produced the records ({})", checkpoint_id(*model_),
                     records.model_id);
    }
    current_ = std::make_shared<const DetectionSet>(std::move(records));
}

std::shared_ptr<const DetectionSet> ReviewService::snapshot() const {
    std::lock_guard lock(read_mutex_);
    return current_;
}

void ReviewService::publish(std::shared_ptr<const DetectionSet> next) {
    std::lock_guard lock(read_mutex_);
    current_ = std::move(next);
}

const ImageRecord& ReviewService::source_record(const std::string& id) const {
    // ids and paths never change after construction, only operator labels do
    const ImageRecord* r = manifest_.find(id);
    if (r == nullptr) {
        throw ReviewError(404, fmt::format("unknown image id '{}'", id));
    }
    return *r;
}

nlohmann::json ReviewService::images(std::size_t offset, std::size_t limit, GalleryFilter filter) const {
    const auto set = snapshot();
    std::vector<const DetectionRecord*> rows;
    for (const auto& r : set->records) {
        if (filter == GalleryFilter::Flagged && !r.joint_flag) continue;
        if (filter == GalleryFilter::Labeled && !r.operator_label) continue;
        rows.push_back(&r);
    }
    std::sort(rows.begin(), rows.end(), [](const DetectionRecord* a, const DetectionRecord* b) {
        if (a->roi_score != b->roi_score) return a->roi_score > b->roi_score;
        return a->id < b->id;
    });
    nlohmann::json items = nlohmann::json::array();
    for (std::size_t i = offset; i < rows.size() && i - offset < limit; ++i) {
        items.push_back(*rows[i]);
    }
    nlohmann::json out = set_header(*set);
    out["total"] = rows.size();
    out["offset"] = offset;
    out["limit"] = limit;
    out["items"] = std::move(items);
    return out;
}

nlohmann::json ReviewService::image(const std::string& id) const {
    const auto set = snapshot();
    const DetectionRecord* r = set->find(id);
    if (r == nullptr) {
        throw ReviewError(404, fmt::format("unknown image id '{}'", id));
    }
    return *r;
}

std::vector<std::uint8_t> ReviewService::thumbnail(const std::string& id, ThumbnailView view) const {
    if (snapshot()->find(id) == nullptr) {
        throw ReviewError(404, fmt::format("unknown image id '{}'", id));
    }
    const ImageRecord& src = source_record(id);
    Tensor4 image;
    try {
        image = load_image(resolve_image_path(manifest_path_.parent_path(), src), manifest_.height, manifest_.width);
    } catch (const ImageError& e) {
        throw ReviewError(500, e.what());
    }
    if (view == ThumbnailView::Image) {
        return encode_png(image);
    }
    if (!model_) {
        throw ReviewError(409, "no model loaded; only the image view is available");
    }
    const Tensor4 recon = model_->model.reconstruct(image);
    if (view == ThumbnailView::Reconstruction) {
        return encode_png(recon);
    }
    if (view == ThumbnailView::Heatmap) {
        return encode_heatmap_png(heatmap(image, recon));
    }
    CameraGeometry g = manifest_.geometry;
    g.altitude_m = src.altitude_m;
    return encode_mask_png(roi_score(image, recon, g, options_.size, options_.roi).mask);
}

nlohmann::json ReviewService::embedding(std::size_t grid_size) const {
    const auto set = snapshot();
    nlohmann::json points = nlohmann::json::array();
    for (const auto& r : set->records) {
        points.push_back({{"id", r.id},
                          {"x", r.x},
                          {"y", r.y},
                          {"density", r.density},
                          {"density_flag", r.density_flag},
                          {"roi_flag", r.roi_flag},
                          {"joint_flag", r.joint_flag}});
    }
    nlohmann::json out = set_header(*set);
    out["points"] = std::move(points);
    if (grid_size == 0) {
        return out;
    }
    if (grid_size < 2 || grid_size > 256) {
        throw ReviewError(400, fmt::format("grid size {} outside [2, 256]", grid_size));
    }
    KdeModel kde;
    kde.bandwidth = set->bandwidth;
    kde.points = PointSet(set->records.size(), 2);
    double x0 = set->records[0].x, x1 = x0, y0 = set->records[0].y, y1 = y0;
    for (std::size_t i = 0; i < set->records.size(); ++i) {
        const auto& r = set->records[i];
        kde.points.at(i, 0) = r.x;
        kde.points.at(i, 1) = r.y;
        x0 = std::min(x0, r.x);
        x1 = std::max(x1, r.x);
        y0 = std::min(y0, r.y);
        y1 = std::max(y1, r.y);
    }
    const double pad_x = 0.1 * (x1 - x0) + kde.bandwidth;
    const double pad_y = 0.1 * (y1 - y0) + kde.bandwidth;
    x0 -= pad_x;
    x1 += pad_x;
    y0 -= pad_y;
    y1 += pad_y;
    PointSet lattice(grid_size * grid_size, 2);
    const auto step = static_cast<double>(grid_size - 1);
    for (std::size_t row = 0; row < grid_size; ++row) {
        for (std::size_t col = 0; col < grid_size; ++col) {
            lattice.at(row * grid_size + col, 0) = x0 + (x1 - x0) * static_cast<double>(col) / step;
            lattice.at(row * grid_size + col, 1) = y0 + (y1 - y0) * static_cast<double>(row) / step;
        }
    }
    out["grid"] = {{"size", grid_size},
                   {"x0", x0},
                   {"x1", x1},
                   {"y0", y0},
                   {"y1", y1},
                   {"values", kde_score(kde, lattice)}};
    return out;
}

nlohmann::json ReviewService::thresholds() const {
    const auto set = snapshot();
    nlohmann::json out = set_header(*set);
    out["flagged"] = flag_counts(*set);
    return out;
}

nlohmann::json ReviewService::set_thresholds(const nlohmann::json& body) {
    Thresholds t;
    try {
        t = body.get<Thresholds>();
    } catch (const nlohmann::json::exception& e) {
        throw ReviewError(400, fmt::format("malformed thresholds: {}", e.what()));
    } catch (const std::invalid_argument& e) {
        throw ReviewError(400, fmt::format("malformed thresholds: {}", e.what()));
    }
    std::lock_guard writer(write_mutex_);
    auto next = std::make_shared<DetectionSet>(*snapshot());
    apply_thresholds(*next, t);
    if (!options_.records_path.empty()) {
        write_records(*next, options_.records_path);
    }
    publish(next);
    return thresholds();
}

nlohmann::json ReviewService::set_label(const nlohmann::json& body) {
    std::string id;
    Label label = Label::Unlabeled;
    try {
        id = body.at("id").get<std::string>();
        label = parse_label(body.at("label").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw ReviewError(400, fmt::format("malformed label update: {}", e.what()));
    } catch (const ManifestError& e) {
        throw ReviewError(400, e.what());
    }
    std::lock_guard writer(write_mutex_);
    const auto current = snapshot();
    if (current->find(id) == nullptr) {
        throw ReviewError(404, fmt::format("unknown image id '{}'", id));
    }
    const std::optional<Label> value = label == Label::Unlabeled ? std::nullopt : std::optional<Label>(label);
    DatasetManifest updated = manifest_;
    updated.find(id)->operator_label = value;
    write_manifest(updated, manifest_path_);
    manifest_.find(id)->operator_label = value;

    auto next = std::make_shared<DetectionSet>(*current);
    next->find(id)->operator_label = value;
    if (!options_.records_path.empty()) {
        write_records(*next, options_.records_path);
    }
    publish(next);
    return *snapshot()->find(id);
}

nlohmann::json ReviewService::metrics() const {
    const auto set = snapshot();
    std::size_t labeled = 0, outliers = 0;
    for (const auto& r : set->records) {
        if (r.operator_label) {
            ++labeled;
            outliers += *r.operator_label == Label::Outlier ? 1 : 0;
        }
    }
    nlohmann::json out = set_header(*set);
    out["labeled"] = labeled;
    out["labeled_outliers"] = outliers;
    nlohmann::json reports = nlohmann::json::array();
    if (labeled > 0) {
        for (const DetectorMode mode : {DetectorMode::Clustering, DetectorMode::Roi, DetectorMode::Joint}) {
            reports.push_back(evaluate(*set, mode, LabelSource::Operator));
        }
    }
    out["reports"] = std::move(reports);
    return out;
}

std::string ReviewService::export_csv() const { return records_to_csv(*snapshot()); }

}  // namespace seavae
