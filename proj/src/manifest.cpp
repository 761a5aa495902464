#include "seavae/manifest.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

namespace seavae {

std::string to_string(Label label) {
    switch (label) {
        case Label::Inlier: return "inlier";
        case Label::Outlier: return "outlier";
        case Label::Unlabeled: return "unlabeled";
    }
    return "unlabeled";
}

std::string to_string(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Label parse_label(const std::string& text) {
    if (text == "inlier") return Label::Inlier;
    if (text == "outlier") return Label::Outlier;
    if (text == "unlabeled" || text.empty()) return Label::Unlabeled;
    throw ManifestError(fmt::format("unknown label '{}' (expected inlier, outlier or unlabeled)", text));
}

Split parse_split(const std::string& text) {
    if (text == "train") return Split::Train;
    if (text == "val") return Split::Val;
    if (text == "test") return Split::Test;
    throw ManifestError(fmt::format("unknown split '{}' (expected train, val or test)", text));
}

void DatasetManifest::validate() const {
    std::set<std::string> ids;
    for (const auto& r : images) {
        if (r.id.empty()) {
            throw ManifestError("image record with empty id");
        }
        if (!ids.insert(r.id).second) {
            throw ManifestError(fmt::format("duplicate image id '{}'", r.id));
        }
        if (r.label == Label::Outlier && r.split != Split::Test) {
            throw ManifestError(fmt::format("outlier '{}' placed in the {} split", r.id, to_string(r.split)));
        }
        if (!(r.altitude_m > 0.0)) {
            throw ManifestError(fmt::format("image '{}' has non-positive altitude {}", r.id, r.altitude_m));
        }
    }
}

const ImageRecord* DatasetManifest::find(const std::string& id) const {
    for (const auto& r : images) {
        if (r.id == id) return &r;
    }
    return nullptr;
}

ImageRecord* DatasetManifest::find(const std::string& id) {
    for (auto& r : images) {
        if (r.id == id) return &r;
    }
    return nullptr;
}

std::vector<const ImageRecord*> DatasetManifest::split(Split s) const {
    std::vector<const ImageRecord*> out;
    for (const auto& r : images) {
        if (r.split == s) out.push_back(&r);
    }
    return out;
}

namespace {

nlohmann::json geometry_json(const CameraGeometry& g) {
    return {{"fov_h_deg", g.fov_h_deg},
            {"fov_v_deg", g.fov_v_deg},
            {"altitude_m", g.altitude_m},
            {"width_px", g.width_px},
            {"height_px", g.height_px}};
}

CameraGeometry geometry_from(const nlohmann::json& j) {
    CameraGeometry g;
    j.at("fov_h_deg").get_to(g.fov_h_deg);
    j.at("fov_v_deg").get_to(g.fov_v_deg);
    j.at("altitude_m").get_to(g.altitude_m);
    j.at("width_px").get_to(g.width_px);
    j.at("height_px").get_to(g.height_px);
    return g;
}

}  // namespace

std::string manifest_to_ndjson(const DatasetManifest& m) {
    std::string out;
    const nlohmann::json header{{"kind", "dataset"},   {"version", m.version}, {"geometry", geometry_json(m.geometry)},
                                {"seed", m.seed},      {"source", m.source},   {"height", m.height},
                                {"width", m.width}};
    out += header.dump() + "\n";
    for (const auto& r : m.images) {
        nlohmann::json j{{"kind", "image"},
                         {"id", r.id},
                         {"path", r.path},
                         {"label", to_string(r.label)},
                         {"altitude_m", r.altitude_m},
                         {"split", to_string(r.split)}};
        if (r.bbox) {
            j["bbox"] = {r.bbox->row0, r.bbox->col0, r.bbox->row1, r.bbox->col1};
        }
        if (r.operator_label) {
            j["operator_label"] = to_string(*r.operator_label);
        }
        out += j.dump() + "\n";
    }
    for (const auto& s : m.skipped) {
        out += nlohmann::json{{"kind", "skip"}, {"path", s.path}, {"reason", s.reason}}.dump() + "\n";
    }
    return out;
}

DatasetManifest manifest_from_ndjson(const std::string& text) {
    DatasetManifest m;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            const std::string kind = j.at("kind").get<std::string>();
            if (kind == "dataset") {
                m.version = j.at("version").get<int>();
                if (m.version != kManifestVersion) {
                    throw ManifestError(fmt::format("unsupported manifest version {}", m.version));
                }
                m.geometry = geometry_from(j.at("geometry"));
                m.seed = j.at("seed").get<std::uint64_t>();
                m.source = j.at("source").get<std::string>();
                m.height = j.at("height").get<std::size_t>();
                m.width = j.at("width").get<std::size_t>();
                have_header = true;
            } else if (kind == "image") {
                ImageRecord r;
                r.id = j.at("id").get<std::string>();
                r.path = j.at("path").get<std::string>();
                r.label = parse_label(j.at("label").get<std::string>());
                r.altitude_m = j.at("altitude_m").get<double>();
                r.split = parse_split(j.at("split").get<std::string>());
                if (j.contains("bbox")) {
                    const auto& b = j.at("bbox");
                    r.bbox = BoundingBox{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
                }
                if (j.contains("operator_label")) {
                    r.operator_label = parse_label(j.at("operator_label").get<std::string>());
                }
                m.images.push_back(std::move(r));
            } else if (kind == "skip") {
                m.skipped.push_back({j.at("path").get<std::string>(), j.at("reason").get<std::string>()});
            } else {
                throw ManifestError(fmt::format("unknown record kind '{}'", kind));
            }
        } catch (const nlohmann::json::exception& e) {
            throw ManifestError(fmt::format("manifest line {}: {}", line_no, e.what()));
        }
    }
    if (!have_header) {
        throw ManifestError("manifest has no dataset header line");
    }
    m.validate();
    return m;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error(fmt::format("cannot write {}", tmp.string()));
        }
        out << contents;
        if (!out.flush()) {
            throw std::runtime_error(fmt::format("failed writing {}", tmp.string()));
        }
    }
    std::filesystem::rename(tmp, path);
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error(fmt::format("cannot open {}", path.string()));
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    manifest.validate();
    write_file_atomic(path, manifest_to_ndjson(manifest));
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const std::runtime_error& e) {
        throw ManifestError(e.what());
    }
    return manifest_from_ndjson(text);
}

std::filesystem::path resolve_image_path(const std::filesystem::path& manifest_dir, const ImageRecord& record) {
    const std::filesystem::path p(record.path);
    return p.is_absolute() ? p : manifest_dir / p;
}

}  // namespace seavae
