#include "seavae/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "seavae/checkpoint.hpp"
#include "seavae/image_io.hpp"

namespace seavae {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        out.push_back(trim(cell));
    }
    return out;
}

struct SidecarEntry {
    Label label = Label::Unlabeled;
    std::optional<double> altitude_m;
};

std::map<std::string, SidecarEntry> read_sidecar(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw PipelineError(fmt::format("cannot open label file {}", path.string()));
    }
    std::map<std::string, SidecarEntry> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto cells = split_csv_line(line);
        if (line_no == 1 && !cells.empty() && lower(cells[0]) == "filename") continue;
        if (cells.size() < 2) {
            throw PipelineError(fmt::format("{}:{}: expected filename,label[,altitude_m]", path.string(), line_no));
        }
        SidecarEntry e;
        try {
            e.label = parse_label(lower(cells[1]));
            if (cells.size() > 2 && !cells[2].empty()) {
                e.altitude_m = std::stod(cells[2]);
            }
        } catch (const std::exception& ex) {
            throw PipelineError(fmt::format("{}:{}: {}", path.string(), line_no, ex.what()));
        }
        out[cells[0]] = e;
    }
    return out;
}

bool is_image_file(const std::filesystem::path& p) {
    const auto ext = lower(p.extension().string());
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

PercentileFlags gate(std::span<const double> scores, double p, FlagSide side) {
    if (p == 0.0) {
        const double t = side == FlagSide::Below ? *std::max_element(scores.begin(), scores.end())
                                                 : *std::min_element(scores.begin(), scores.end());
        return {std::vector<bool>(scores.size(), true), t};
    }
    const double q = side == FlagSide::Below ? 100.0 - p : p;
    if (q > 0.0 && q < 100.0) {
        return percentile_flag(scores, q, side);
    }
    // p == 100: threshold at the extreme order statistic, nothing lies strictly beyond it
    PercentileFlags out;
    out.threshold = percentile(scores, q);
    out.flags.resize(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out.flags[i] = side == FlagSide::Below ? scores[i] < out.threshold : scores[i] > out.threshold;
    }
    return out;
}

nlohmann::json bbox_json(const BoundingBox& b) { return {b.row0, b.col0, b.row1, b.col1}; }

BoundingBox bbox_from(const nlohmann::json& j) {
    return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(), j.at(3).get<int>()};
}

std::string csv_label(const std::optional<Label>& l) { return l ? to_string(*l) : ""; }

}  // namespace

DatasetManifest ingest(const std::filesystem::path& directory, const IngestOptions& options) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(directory)) {
        throw PipelineError(fmt::format("{} is not a directory", directory.string()));
    }
    if (!(options.test_fraction >= 0.0 && options.test_fraction < 1.0) ||
        !(options.val_fraction >= 0.0 && options.val_fraction < 1.0)) {
        throw PipelineError("test_fraction and val_fraction must lie in [0, 1)");
    }
    options.geometry.validate();
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(directory)) {
        if (entry.is_regular_file() && is_image_file(entry.path())) {
            files.push_back(entry.path());
        }
    }
    if (files.empty()) {
        throw PipelineError(fmt::format("no .png/.jpg/.jpeg images in {}", directory.string()));
    }
    std::sort(files.begin(), files.end());

    const fs::path manifest_path =
        options.manifest_path.empty() ? directory / "manifest.ndjson" : options.manifest_path;
    const fs::path manifest_dir = fs::absolute(manifest_path).parent_path();
    std::map<std::string, SidecarEntry> sidecar;
    if (!options.sidecar.empty()) {
        sidecar = read_sidecar(options.sidecar);
    }

    DatasetManifest m;
    m.geometry = options.geometry;
    m.geometry.width_px = options.width;
    m.geometry.height_px = options.height;
    m.seed = options.seed;
    m.source = "ingested";
    m.height = options.height;
    m.width = options.width;
    std::set<std::string> ids;
    for (const auto& f : files) {
        const std::string name = f.filename().string();
        try {
            (void)load_image(f, options.height, options.width);
        } catch (const std::exception& e) {
            spdlog::warn("skipping {}: {}", f.string(), e.what());
            m.skipped.push_back({name, e.what()});
            continue;
        }
        ImageRecord r;
        r.id = f.stem().string();
        if (!ids.insert(r.id).second) {
            r.id = name;
            ids.insert(r.id);
        }
        r.path = fs::relative(fs::absolute(f), manifest_dir).generic_string();
        r.altitude_m = options.geometry.altitude_m;
        if (const auto it = sidecar.find(name); it != sidecar.end()) {
            r.label = it->second.label;
            if (it->second.altitude_m) r.altitude_m = *it->second.altitude_m;
        }
        m.images.push_back(std::move(r));
    }
    if (m.images.empty()) {
        throw PipelineError(fmt::format("none of the {} images in {} could be decoded", files.size(), directory.string()));
    }

    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < m.images.size(); ++i) {
        if (m.images[i].label == Label::Outlier) {
            m.images[i].split = Split::Test;
        } else {
            pool.push_back(i);
        }
    }
    Rng rng(options.seed ^ 0x1a6e57ULL);
    std::shuffle(pool.begin(), pool.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(options.test_fraction * static_cast<double>(pool.size())));
    const std::size_t rest = pool.size() - n_test;
    const auto n_val = static_cast<std::size_t>(std::llround(options.val_fraction * static_cast<double>(rest)));
    for (std::size_t k = 0; k < pool.size(); ++k) {
        Split s = Split::Train;
        if (k < n_test) {
            s = Split::Test;
        } else if (k < n_test + n_val) {
            s = Split::Val;
        }
        m.images[pool[k]].split = s;
    }
    write_manifest(m, manifest_path);
    spdlog::info("ingested {} images ({} skipped) into {}", m.images.size(), m.skipped.size(), manifest_path.string());
    return m;
}

ImageBatch load_images(const DatasetManifest& manifest, const std::filesystem::path& manifest_dir,
                       std::vector<const ImageRecord*> records) {
    ImageBatch batch;
    batch.images = Tensor4({records.size(), 3, manifest.height, manifest.width});
    for (std::size_t i = 0; i < records.size(); ++i) {
        const Tensor4 img = load_image(resolve_image_path(manifest_dir, *records[i]), manifest.height, manifest.width);
        std::copy(img.storage().begin(), img.storage().end(), batch.images.item(i).begin());
    }
    batch.records = std::move(records);
    return batch;
}

ImageBatch load_split(const DatasetManifest& manifest, const std::filesystem::path& manifest_dir, Split split) {
    return load_images(manifest, manifest_dir, manifest.split(split));
}

Checkpoint train_from_manifest(const DatasetManifest& manifest, const std::filesystem::path& manifest_dir,
                               const VaeConfig& config, const TrainCallbacks& callbacks) {
    if (config.height != manifest.height || config.width != manifest.width) {
        throw PipelineError(fmt::format("model expects {}x{} images but the manifest holds {}x{}", config.height,
                                        config.width, manifest.height, manifest.width));
    }
    const ImageBatch train_set = load_split(manifest, manifest_dir, Split::Train);
    const ImageBatch val_set = load_split(manifest, manifest_dir, Split::Val);
    if (train_set.records.empty() || val_set.records.empty()) {
        throw PipelineError(fmt::format("training needs non-empty train and val splits (train={}, val={})",
                                        train_set.records.size(), val_set.records.size()));
    }
    spdlog::info("training on {} images, validating on {}", train_set.records.size(), val_set.records.size());
    return train(train_set.images, val_set.images, config, callbacks);
}

std::vector<double> l2_scores(const Vae& model, const Tensor4& images, std::size_t batch_size) {
    const std::size_t n = images.shape().n;
    const std::size_t per = images.shape().c * images.shape().h * images.shape().w;
    std::vector<double> out;
    out.reserve(n);
    for (std::size_t b = 0; b < n; b += std::max<std::size_t>(batch_size, 1)) {
        const std::size_t e = std::min(n, b + std::max<std::size_t>(batch_size, 1));
        const Tensor4 chunk = images.slice(b, e);
        const Tensor4 recon = model.reconstruct(chunk);
        for (std::size_t i = 0; i < e - b; ++i) {
            const auto x = chunk.item(i);
            const auto y = recon.item(i);
            double s = 0.0;
            for (std::size_t k = 0; k < per; ++k) {
                s += (x[k] - y[k]) * (x[k] - y[k]);
            }
            out.push_back(s / static_cast<double>(per));
        }
    }
    return out;
}

double l2_score(const Vae& model, const Tensor4& image) {
    if (image.shape().n != 1) {
        throw std::invalid_argument(fmt::format("l2_score takes one image, got a batch of {}", image.shape().n));
    }
    return l2_scores(model, image).front();
}

void Thresholds::validate() const {
    for (double p : {density_percentile, roi_percentile}) {
        if (!(p >= 0.0 && p <= 100.0)) {
            throw std::invalid_argument(fmt::format("percentile {} outside [0, 100]", p));
        }
    }
}

Thresholds precision_preset() { return {80.0, 95.0}; }

void to_json(nlohmann::json& j, const Thresholds& t) {
    j = {{"density_percentile", t.density_percentile}, {"roi_percentile", t.roi_percentile}};
}

void from_json(const nlohmann::json& j, Thresholds& t) {
    j.at("density_percentile").get_to(t.density_percentile);
    j.at("roi_percentile").get_to(t.roi_percentile);
    t.validate();
}

const DetectionRecord* DetectionSet::find(const std::string& id) const {
    for (const auto& r : records) {
        if (r.id == id) return &r;
    }
    return nullptr;
}

DetectionRecord* DetectionSet::find(const std::string& id) {
    for (auto& r : records) {
        if (r.id == id) return &r;
    }
    return nullptr;
}

DetectionSet detect(const DatasetManifest& manifest, const std::filesystem::path& manifest_dir,
                    const Checkpoint& checkpoint, const DetectConfig& config) {
    config.thresholds.validate();
    const Vae& model = checkpoint.model;
    const auto test = manifest.split(Split::Test);
    if (test.size() < kMinDetectImages) {
        throw PipelineError(
            fmt::format("detect needs at least {} test images, the manifest has {}", kMinDetectImages, test.size()));
    }
    if (model.config().height != manifest.height || model.config().width != manifest.width) {
        throw PipelineError(fmt::format("model expects {}x{} images but the manifest holds {}x{}",
                                        model.config().height, model.config().width, manifest.height, manifest.width));
    }
    const std::size_t n = test.size();
    const ImageBatch batch = load_images(manifest, manifest_dir, test);
    const std::size_t d = model.config().latent_dim;
    const std::size_t bs = std::max<std::size_t>(config.batch_size, 1);

    // stage 1 input and stage 2 heatmaps come from one encode/decode pass per batch
    PointSet mu(n, d);
    std::vector<double> l2(n, 0.0);
    std::vector<RoiResult> roi(n);
    for (std::size_t b = 0; b < n; b += bs) {
        const std::size_t e = std::min(n, b + bs);
        const Tensor4 chunk = batch.images.slice(b, e);
        const auto codes = model.encode(chunk);
        Tensor4 latents({e - b, d, 1, 1});
        for (std::size_t i = 0; i < e - b; ++i) {
            std::copy(codes[i].mu.begin(), codes[i].mu.end(), mu.row(b + i).begin());
            std::copy(codes[i].mu.begin(), codes[i].mu.end(), latents.item(i).begin());
        }
        const Tensor4 recon = model.decode(latents);
        const std::size_t workers = std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, e - b);
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < e - b; i += workers) {
                    const Tensor4 x = chunk.slice(i, i + 1);
                    const Tensor4 y = recon.slice(i, i + 1);
                    double s = 0.0;
                    for (std::size_t k = 0; k < x.size(); ++k) {
                        s += (x[k] - y[k]) * (x[k] - y[k]);
                    }
                    l2[b + i] = s / static_cast<double>(x.size());
                    CameraGeometry g = manifest.geometry;
                    g.altitude_m = test[b + i]->altitude_m;
                    roi[b + i] = roi_score(x, y, g, config.size, config.roi);
                }
            });
        }
    }

    // training means, when pooled, are appended after the test rows
    PointSet pooled = std::move(mu);
    if (config.pool_train_density) {
        const ImageBatch train = load_split(manifest, manifest_dir, Split::Train);
        const std::size_t m = train.records.size();
        PointSet all(n + m, d);
        std::copy(pooled.values.begin(), pooled.values.end(), all.values.begin());
        for (std::size_t b = 0; b < m; b += bs) {
            const std::size_t e = std::min(m, b + bs);
            const auto codes = model.encode(train.images.slice(b, e));
            for (std::size_t i = 0; i < e - b; ++i) {
                std::copy(codes[i].mu.begin(), codes[i].mu.end(), all.row(n + b + i).begin());
            }
        }
        pooled = std::move(all);
    }
    const std::size_t total = pooled.n;

    TsneOptions tsne = config.tsne;
    tsne.seed = config.seed;
    const double max_perplexity = static_cast<double>(total - 1) / 3.0;
    if (tsne.perplexity >= static_cast<double>(total) / 3.0) {
        spdlog::warn("perplexity {} too large for {} points; using {:.3f}", tsne.perplexity, total, max_perplexity);
        tsne.perplexity = max_perplexity;
    }
    const TsneResult reduced = tsne_reduce(pooled, tsne);
    const KdeFit kde =
        kde_fit(reduced.embedding, config.bandwidth_grid, std::min(config.kde_folds, total), config.seed);
    const std::vector<double> density = kde_score(kde.model, reduced.embedding);

    DetectionSet set;
    set.model_id = checkpoint_id(checkpoint);
    set.bandwidth = kde.model.bandwidth;
    set.reference_density.assign(density.begin() + static_cast<std::ptrdiff_t>(n), density.end());
    set.records.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        DetectionRecord& r = set.records[i];
        r.id = test[i]->id;
        r.label = test[i]->label;
        r.operator_label = test[i]->operator_label;
        r.l2_score = l2[i];
        r.density = density[i];
        r.roi_score = roi[i].score;
        r.x = reduced.embedding.at(i, 0);
        r.y = reduced.embedding.at(i, 1);
        r.roi_count = roi[i].rois.size();
        const auto best = std::max_element(roi[i].rois.begin(), roi[i].rois.end(),
                                           [](const Roi& a, const Roi& b) { return a.mean_error < b.mean_error; });
        if (best != roi[i].rois.end()) r.roi_bbox = best->bbox;
        r.model_id = set.model_id;
    }
    apply_thresholds(set, config.thresholds);
    spdlog::info("detect: {} images, KDE bandwidth {:.4g}", n, set.bandwidth);
    return set;
}

void apply_thresholds(DetectionSet& set, const Thresholds& thresholds) {
    thresholds.validate();
    if (set.records.empty()) {
        throw PipelineError("no detection records to threshold");
    }
    std::vector<double> density(set.records.size());
    std::vector<double> roi(set.records.size());
    for (std::size_t i = 0; i < set.records.size(); ++i) {
        density[i] = set.records[i].density;
        roi[i] = set.records[i].roi_score;
    }
    density.insert(density.end(), set.reference_density.begin(), set.reference_density.end());
    const auto dflags = gate(density, thresholds.density_percentile, FlagSide::Below);
    const auto rflags = gate(roi, thresholds.roi_percentile, FlagSide::Above);
    for (std::size_t i = 0; i < set.records.size(); ++i) {
        auto& r = set.records[i];
        r.density_flag = dflags.flags[i];
        r.roi_flag = rflags.flags[i];
        r.joint_flag = r.density_flag && r.roi_flag;
    }
    set.thresholds = thresholds;
    set.density_threshold = dflags.threshold;
    set.roi_threshold = rflags.threshold;
}

void to_json(nlohmann::json& j, const DetectionRecord& r) {
    j = {{"id", r.id},
         {"label", to_string(r.label)},
         {"l2_score", r.l2_score},
         {"density", r.density},
         {"density_flag", r.density_flag},
         {"roi_score", r.roi_score},
         {"roi_flag", r.roi_flag},
         {"joint_flag", r.joint_flag},
         {"x", r.x},
         {"y", r.y},
         {"roi_count", r.roi_count},
         {"model_id", r.model_id}};
    if (r.operator_label) j["operator_label"] = to_string(*r.operator_label);
    if (r.roi_bbox) j["roi_bbox"] = bbox_json(*r.roi_bbox);
}

void from_json(const nlohmann::json& j, DetectionRecord& r) {
    r.id = j.at("id").get<std::string>();
    r.label = parse_label(j.at("label").get<std::string>());
    r.l2_score = j.at("l2_score").get<double>();
    r.density = j.at("density").get<double>();
    r.density_flag = j.at("density_flag").get<bool>();
    r.roi_score = j.at("roi_score").get<double>();
    r.roi_flag = j.at("roi_flag").get<bool>();
    r.joint_flag = j.at("joint_flag").get<bool>();
    r.x = j.at("x").get<double>();
    r.y = j.at("y").get<double>();
    r.roi_count = j.at("roi_count").get<std::size_t>();
    r.model_id = j.at("model_id").get<std::string>();
    r.operator_label.reset();
    if (j.contains("operator_label")) r.operator_label = parse_label(j.at("operator_label").get<std::string>());
    r.roi_bbox.reset();
    if (j.contains("roi_bbox")) r.roi_bbox = bbox_from(j.at("roi_bbox"));
}

std::string records_to_ndjson(const DetectionSet& set) {
    std::string out;
    nlohmann::json header{{"kind", "detection"},
                                {"version", set.version},
                                {"model_id", set.model_id},
                                {"thresholds", set.thresholds},
                                {"density_threshold", set.density_threshold},
                                {"roi_threshold", set.roi_threshold},
                                {"bandwidth", set.bandwidth}};
    if (!set.reference_density.empty()) header["reference_density"] = set.reference_density;
    out += header.dump() + "\n";
    for (const auto& r : set.records) {
        nlohmann::json j = r;
        j["kind"] = "record";
        out += j.dump() + "\n";
    }
    return out;
}

DetectionSet records_from_ndjson(const std::string& text) {
    DetectionSet set;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            const auto kind = j.at("kind").get<std::string>();
            if (kind == "detection") {
                set.version = j.at("version").get<int>();
                if (set.version != kRecordsVersion) {
                    throw PipelineError(fmt::format("unsupported records version {}", set.version));
                }
                set.model_id = j.at("model_id").get<std::string>();
                set.thresholds = j.at("thresholds").get<Thresholds>();
                set.density_threshold = j.at("density_threshold").get<double>();
                set.roi_threshold = j.at("roi_threshold").get<double>();
                set.bandwidth = j.at("bandwidth").get<double>();
                if (j.contains("reference_density")) {
                    set.reference_density = j.at("reference_density").get<std::vector<double>>();
                }
                have_header = true;
            } else if (kind == "record") {
                DetectionRecord r = j.get<DetectionRecord>();
                set.records.push_back(std::move(r));
            } else {
                throw PipelineError(fmt::format("unknown record kind '{}'", kind));
            }
        } catch (const nlohmann::json::exception& e) {
            throw PipelineError(fmt::format("records line {}: {}", line_no, e.what()));
        } catch (const ManifestError& e) {
            throw PipelineError(fmt::format("records line {}: {}", line_no, e.what()));
        }
    }
    if (!have_header) {
        throw PipelineError("records file has no detection header line");
    }
    return set;
}

void write_records(const DetectionSet& set, const std::filesystem::path& path) {
    write_file_atomic(path, records_to_ndjson(set));
}

DetectionSet read_records(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const std::runtime_error& e) {
        throw PipelineError(e.what());
    }
    return records_from_ndjson(text);
}

std::string records_to_csv(const DetectionSet& set) {
    std::string out =
        "id,label,operator_label,l2_score,density,density_flag,roi_score,roi_flag,joint_flag,x,y,roi_count,model_id\n";
    for (const auto& r : set.records) {
        out += fmt::format("{},{},{},{},{},{:d},{},{:d},{:d},{},{},{},{}\n", r.id, to_string(r.label),
                           csv_label(r.operator_label), r.l2_score, r.density, r.density_flag, r.roi_score,
                           r.roi_flag, r.joint_flag, r.x, r.y, r.roi_count, r.model_id);
    }
    return out;
}

std::string to_string(DetectorMode mode) {
    switch (mode) {
        case DetectorMode::Clustering: return "clustering";
        case DetectorMode::Roi: return "roi";
        case DetectorMode::Joint: return "joint";
    }
    return "joint";
}

double mode_score(const DetectionRecord& r, DetectorMode mode) {
    switch (mode) {
        case DetectorMode::Clustering: return -r.density;
        case DetectorMode::Roi: return r.roi_score;
        case DetectorMode::Joint: return r.density_flag ? r.roi_score : -1.0;
    }
    return 0.0;
}

bool mode_flag(const DetectionRecord& r, DetectorMode mode) {
    switch (mode) {
        case DetectorMode::Clustering: return r.density_flag;
        case DetectorMode::Roi: return r.roi_flag;
        case DetectorMode::Joint: return r.joint_flag;
    }
    return false;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& p : r.pr.points) {
        curve.push_back({{"threshold", p.threshold}, {"recall", p.recall}, {"precision", p.precision}});
    }
    j = {{"mode", to_string(r.mode)},
         {"precision", r.precision},
         {"recall", r.recall},
         {"f1", r.f1},
         {"tp", r.counts.tp},
         {"fp", r.counts.fp},
         {"tn", r.counts.tn},
         {"fn", r.counts.fn},
         {"pr_curve", curve},
         {"average_precision", r.pr.points.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.pr.average_precision)},
         {"config", r.config}};
}

EvalReport evaluate(const DetectionSet& set, DetectorMode mode, LabelSource source) {
    std::vector<bool> predicted;
    std::vector<bool> truth;
    std::vector<double> scores;
    for (const auto& r : set.records) {
        const Label l = source == LabelSource::Operator ? r.operator_label.value_or(Label::Unlabeled) : r.label;
        if (l == Label::Unlabeled) continue;
        predicted.push_back(mode_flag(r, mode));
        truth.push_back(l == Label::Outlier);
        scores.push_back(mode_score(r, mode));
    }
    if (truth.empty()) {
        throw PipelineError(source == LabelSource::Operator ? "no operator-labeled records to evaluate"
                                                            : "no labeled records to evaluate");
    }
    EvalReport report;
    report.mode = mode;
    report.counts = confusion(predicted, truth);
    report.precision = precision(report.counts);
    report.recall = recall(report.counts);
    report.f1 = f1_score(report.counts);
    const auto positives = std::count(truth.begin(), truth.end(), true);
    if (positives > 0 && static_cast<std::size_t>(positives) < truth.size()) {
        report.pr = pr_curve(scores, truth);
    }
    report.config = {{"thresholds", set.thresholds},
                     {"model_id", set.model_id},
                     {"labels", source == LabelSource::Operator ? "operator" : "ground_truth"},
                     {"bandwidth", set.bandwidth}};
    return report;
}

std::vector<SweepRow> sweep_latent_dim(std::span<const std::size_t> dims, const DatasetManifest& manifest,
                                       const std::filesystem::path& manifest_dir, const VaeConfig& base,
                                       const DetectConfig& detect_config,
                                       const std::function<void(std::size_t, const Checkpoint&)>& on_model) {
    if (dims.empty()) {
        throw PipelineError("latent-size sweep needs at least one dimension");
    }
    std::vector<SweepRow> rows;
    for (std::size_t d : dims) {
        VaeConfig cfg = base;
        cfg.latent_dim = d;
        spdlog::info("sweep: training d={}", d);
        const Checkpoint ckpt = train_from_manifest(manifest, manifest_dir, cfg);
        if (on_model) on_model(d, ckpt);
        const DetectionSet set = detect(manifest, manifest_dir, ckpt, detect_config);
        for (auto mode : {DetectorMode::Clustering, DetectorMode::Roi, DetectorMode::Joint}) {
            SweepRow row{d, evaluate(set, mode)};
            row.report.config["latent_dim"] = d;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

std::string eval_to_csv(std::span<const EvalReport> reports) {
    std::string out = "mode,precision,recall,f1,tp,fp,tn,fn,average_precision\n";
    for (const auto& r : reports) {
        out += fmt::format("{},{},{},{},{},{},{},{},{}\n", to_string(r.mode), r.precision, r.recall, r.f1, r.counts.tp,
                           r.counts.fp, r.counts.tn, r.counts.fn,
                           r.pr.points.empty() ? std::string{} : fmt::format("{}", r.pr.average_precision));
    }
    return out;
}

std::string sweep_to_csv(std::span<const SweepRow> rows) {
    std::string out = "latent_dim,mode,precision,recall,f1,tp,fp,tn,fn,average_precision\n";
    for (const auto& row : rows) {
        const auto& r = row.report;
        out += fmt::format("{},{},{},{},{},{},{},{},{},{}\n", row.latent_dim, to_string(r.mode), r.precision, r.recall,
                           r.f1, r.counts.tp, r.counts.fp, r.counts.tn, r.counts.fn,
                           r.pr.points.empty() ? std::string{} : fmt::format("{}", r.pr.average_precision));
    }
    return out;
}

}  // namespace seavae
