#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "seavae/checkpoint.hpp"
#include "seavae/latent.hpp"
#include "seavae/metrics.hpp"
#include "seavae/pipeline.hpp"
#include "seavae/roi.hpp"
#include "seavae/synth.hpp"
#include "seavae/vae.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace seavae;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

PointSet to_points(const Array& a) {
    if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array of points");
    const auto n = static_cast<std::size_t>(a.shape(0));
    const auto d = static_cast<std::size_t>(a.shape(1));
    return PointSet(n, d, std::vector<double>(a.data(), a.data() + n * d));
}

Array to_array(const PointSet& p) {
    Array out({p.n, p.dim});
    std::copy(p.values.begin(), p.values.end(), out.mutable_data());
    return out;
}

std::vector<double> to_vector(const Array& a) { return {a.data(), a.data() + a.size()}; }

DetectorMode parse_mode(const std::string& name) {
    for (auto m : {DetectorMode::Clustering, DetectorMode::Roi, DetectorMode::Joint}) {
        if (to_string(m) == name) return m;
    }
    throw std::invalid_argument("unknown detector mode '" + name + "'");
}

py::dict report_dict(const EvalReport& r) {
    nlohmann::json j = r;
    return py::module_::import("json").attr("loads")(j.dump());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Seafloor image anomaly detection core";

    m.def(
        "kl_closed_form",
        [](const std::vector<double>& mu, const std::vector<double>& sigma) { return kl_closed_form(mu, sigma); },
        py::arg("mu"), py::arg("sigma"));

    m.def(
        "percentile", [](const Array& scores, double p) { return percentile(to_vector(scores), p); },
        py::arg("scores"), py::arg("p"));

    m.def(
        "overlap_coefficient",
        [](const Array& a, const Array& b, std::size_t bins) {
            return overlap_coefficient(to_vector(a), to_vector(b), bins);
        },
        py::arg("a"), py::arg("b"), py::arg("bins") = 0);

    m.def(
        "tsne",
        [](const Array& points, double perplexity, std::size_t iterations, std::uint64_t seed) {
            TsneOptions o;
            o.perplexity = perplexity;
            o.iterations = iterations;
            o.seed = seed;
            const PointSet p = to_points(points);
            TsneResult result;
            {
                py::gil_scoped_release release;
                result = tsne_reduce(p, o);
            }
            return to_array(result.embedding);
        },
        py::arg("points"), py::arg("perplexity") = 30.0, py::arg("iterations") = 1000, py::arg("seed") = 0);

    m.def(
        "kde_fit",
        [](const Array& points, std::optional<std::vector<double>> grid, std::size_t folds, std::uint64_t seed) {
            const auto g = grid.value_or(default_bandwidth_grid());
            const KdeFit fit = kde_fit(to_points(points), g, folds, seed);
            return py::make_tuple(fit.model.bandwidth, fit.cv_log_likelihood);
        },
        py::arg("points"), py::arg("grid") = py::none(), py::arg("folds") = 20, py::arg("seed") = 0,
        "Returns (bandwidth, cross-validated log-likelihood per grid entry).");

    m.def(
        "kde_score",
        [](const Array& train, double bandwidth, const Array& queries) {
            return kde_score(KdeModel{to_points(train), bandwidth}, to_points(queries));
        },
        py::arg("train"), py::arg("bandwidth"), py::arg("queries"));

    m.def(
        "dbscan",
        [](const Array& points, double epsilon, std::size_t min_pts) {
            const auto a = dbscan(to_points(points), {epsilon, min_pts});
            std::vector<std::string> roles;
            for (auto r : a.roles) roles.push_back(to_string(r));
            return py::make_tuple(a.labels, roles);
        },
        py::arg("points"), py::arg("epsilon"), py::arg("min_pts") = 4,
        "Returns (labels with -1 for noise, role names).");

    m.def(
        "pixel_bounds",
        [](double fov_h, double fov_v, double altitude, std::size_t width, std::size_t height, double side_m,
           double margin) {
            const auto b = pixel_bounds(CameraGeometry{fov_h, fov_v, altitude, width, height},
                                        SizeBounds{side_m, side_m, margin});
            return py::make_tuple(b.min_px, b.max_px);
        },
        py::arg("fov_h_deg") = 60.0, py::arg("fov_v_deg") = 48.0, py::arg("altitude_m") = 2.0,
        py::arg("width_px") = 80, py::arg("height_px") = 64, py::arg("side_m") = 0.3, py::arg("margin") = 2.0);

    m.def(
        "synth",
        [](const fs::path& out, std::size_t inliers, std::size_t outliers, std::size_t test_inliers,
           std::uint64_t seed) {
            SynthConfig c;
            c.test_inliers = test_inliers;
            return synth_dataset(inliers, outliers, seed, c, out).images.size();
        },
        py::arg("out_dir"), py::arg("inliers") = 1400, py::arg("outliers") = 12, py::arg("test_inliers") = 500,
        py::arg("seed") = 0, "Writes images and manifest.ndjson under out_dir; returns the image count.");

    m.def(
        "train",
        [](const fs::path& manifest, const fs::path& checkpoint, std::size_t latent_dim, std::size_t max_epochs,
           std::uint64_t seed, std::optional<std::vector<std::size_t>> widths) {
            VaeConfig c;
            c.latent_dim = latent_dim;
            c.max_epochs = max_epochs;
            c.seed = seed;
            if (widths) {
                if (widths->size() != c.widths.size()) throw std::invalid_argument("widths needs five entries");
                std::copy(widths->begin(), widths->end(), c.widths.begin());
            }
            const DatasetManifest man = read_manifest(manifest);
            py::gil_scoped_release release;
            const Checkpoint ck = train_from_manifest(man, manifest.parent_path(), c);
            save_checkpoint(ck, checkpoint);
            return checkpoint_id(ck);
        },
        py::arg("manifest"), py::arg("checkpoint"), py::arg("latent_dim") = 64, py::arg("max_epochs") = 200,
        py::arg("seed") = 0, py::arg("widths") = py::none(), "Trains and saves a checkpoint; returns its model id.");

    m.def(
        "detect",
        [](const fs::path& manifest, const fs::path& checkpoint, const fs::path& records, double density_percentile,
           double roi_percentile, std::uint64_t seed) {
            DetectConfig c;
            c.thresholds = {density_percentile, roi_percentile};
            c.thresholds.validate();
            c.seed = seed;
            const DatasetManifest man = read_manifest(manifest);
            const Checkpoint ck = load_checkpoint(checkpoint);
            py::gil_scoped_release release;
            const DetectionSet set = detect(man, manifest.parent_path(), ck, c);
            write_records(set, records);
            return set.records.size();
        },
        py::arg("manifest"), py::arg("checkpoint"), py::arg("records"), py::arg("density_percentile") = 80.0,
        py::arg("roi_percentile") = 80.0, py::arg("seed") = 0, "Writes records.ndjson; returns the record count.");

    m.def(
        "rethreshold",
        [](const fs::path& records, double density_percentile, double roi_percentile) {
            DetectionSet set = read_records(records);
            apply_thresholds(set, {density_percentile, roi_percentile});
            write_records(set, records);
        },
        py::arg("records"), py::arg("density_percentile"), py::arg("roi_percentile"));

    m.def(
        "evaluate",
        [](const fs::path& records, const std::string& mode) {
            return report_dict(evaluate(read_records(records), parse_mode(mode)));
        },
        py::arg("records"), py::arg("mode") = "joint");
}
