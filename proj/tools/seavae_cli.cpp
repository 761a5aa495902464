// seavae: synth, ingest, train, detect, eval, sweep and serve from the command line.
#include <csignal>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "seavae/checkpoint.hpp"
#include "seavae/pipeline.hpp"
#include "seavae/review_http.hpp"
#include "seavae/synth.hpp"

namespace fs = std::filesystem;
using namespace seavae;

namespace {

struct Globals {
    std::uint64_t seed = 0;
    fs::path out = ".";
    std::string log_level = "info";
};

struct DetectFlags {
    double density_percentile = 80.0;
    double roi_percentile = 80.0;
    bool precision_preset = false;
    double perplexity = 30.0;
    std::size_t tsne_iterations = 1000;
    bool pool_train = false;
    double object_min_m = 0.3;
    double object_max_m = 0.3;
    double size_margin = 2.0;
    double sigmas = 3.0;
    double floor = 0.05;
    std::size_t batch_size = 64;

    void add(CLI::App* cmd) {
        cmd->add_option("--density-percentile", density_percentile, "flag density below the (100 - p)-th percentile")
            ->check(CLI::Range(0.0, 100.0))
            ->capture_default_str();
        cmd->add_option("--roi-percentile", roi_percentile, "flag roi_score above the p-th percentile")
            ->check(CLI::Range(0.0, 100.0))
            ->capture_default_str();
        cmd->add_flag("--precision-preset", precision_preset, "density 80, roi 95");
        cmd->add_option("--perplexity", perplexity)->capture_default_str();
        cmd->add_option("--tsne-iterations", tsne_iterations)->capture_default_str();
        cmd->add_flag("--pool-train", pool_train, "take the density percentile over train and test together");
        cmd->add_option("--object-min-m", object_min_m, "smallest object side in metres")->capture_default_str();
        cmd->add_option("--object-max-m", object_max_m, "largest object side in metres")->capture_default_str();
        cmd->add_option("--size-margin", size_margin, "area bounds widen by this factor")->capture_default_str();
        cmd->add_option("--roi-sigmas", sigmas, "binarize at mean + k * std of the blurred heatmap")
            ->capture_default_str();
        cmd->add_option("--roi-floor", floor, "lowest binarization threshold")->capture_default_str();
        cmd->add_option("--batch-size", batch_size)->capture_default_str();
    }

    [[nodiscard]] DetectConfig config(std::uint64_t seed) const {
        DetectConfig c;
        c.thresholds = precision_preset ? seavae::precision_preset() : Thresholds{density_percentile, roi_percentile};
        c.thresholds.validate();
        c.tsne.perplexity = perplexity;
        c.tsne.iterations = tsne_iterations;
        c.pool_train_density = pool_train;
        c.size = {object_min_m, object_max_m, size_margin};
        c.size.validate();
        c.roi.threshold_sigmas = sigmas;
        c.roi.threshold_floor = floor;
        c.roi.validate();
        c.batch_size = batch_size;
        c.seed = seed;
        return c;
    }
};

struct TrainFlags {
    std::size_t latent_dim = 64;
    std::size_t epochs = 200;
    std::size_t patience = 3;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;

    void add(CLI::App* cmd) {
        cmd->add_option("--latent-dim,-d", latent_dim)->capture_default_str();
        cmd->add_option("--epochs", epochs, "upper bound; early stopping usually ends sooner")->capture_default_str();
        cmd->add_option("--patience", patience)->capture_default_str();
        cmd->add_option("--train-batch-size", batch_size)->capture_default_str();
        cmd->add_option("--lr", learning_rate)->capture_default_str();
    }

    [[nodiscard]] VaeConfig config(const DatasetManifest& m, std::uint64_t seed) const {
        VaeConfig c;
        c.latent_dim = latent_dim;
        c.height = m.height;
        c.width = m.width;
        c.max_epochs = epochs;
        c.patience = patience;
        c.batch_size = batch_size;
        c.learning_rate = learning_rate;
        c.seed = seed;
        c.validate();
        return c;
    }
};

void log_epoch(const EpochRecord& e) {
    spdlog::info("epoch {:3d}  train {:.4f} (rec {:.4f} kl {:.4f})  val {:.4f}", e.epoch, e.train_loss,
                 e.train_reconstruction, e.train_kl, e.val_loss);
}

std::string history_csv(const TrainingHistory& h) {
    std::string out = "epoch,train_loss,train_reconstruction,train_kl,val_loss,val_reconstruction,val_kl\n";
    for (const auto& e : h.epochs) {
        out += fmt::format("{},{},{},{},{},{},{}\n", e.epoch, e.train_loss, e.train_reconstruction, e.train_kl,
                           e.val_loss, e.val_reconstruction, e.val_kl);
    }
    return out;
}

std::string pr_csv(const std::vector<EvalReport>& reports) {
    std::string out = "mode,threshold,recall,precision\n";
    for (const auto& r : reports) {
        for (const auto& p : r.pr.points) {
            out += fmt::format("{},{},{},{}\n", to_string(r.mode), p.threshold, p.recall, p.precision);
        }
    }
    return out;
}

httplib::Server* g_server = nullptr;

void stop_server(int) {
    if (g_server != nullptr) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Semi-supervised anomaly detection for seafloor survey imagery"};
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML file with option values (sections per subcommand)");
    Globals g;
    app.add_option("--seed", g.seed, "seed for data generation, training and embedding")->capture_default_str();
    app.add_option("--out", g.out, "output directory")->capture_default_str();
    app.add_option("--log-level", g.log_level)
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}))
        ->capture_default_str();

    // synth
    auto* synth = app.add_subcommand("synth", "render a synthetic seafloor dataset into --out");
    std::size_t n_inliers = 1400, n_outliers = 12;
    SynthConfig sc;
    synth->add_option("--inliers", n_inliers, "inlier images, test plus train/val")->capture_default_str();
    synth->add_option("--outliers", n_outliers)->capture_default_str();
    synth->add_option("--test-inliers", sc.test_inliers)->capture_default_str();
    synth->add_option("--val-fraction", sc.val_fraction)->capture_default_str();
    synth->add_option("--object-side-m", sc.object_side_m)->capture_default_str();
    synth->add_option("--object-jitter", sc.object_jitter)->capture_default_str();
    synth->add_option("--variability", sc.variability)->capture_default_str();
    synth->add_option("--noise-max", sc.noise_max)->capture_default_str();

    // ingest
    auto* ingest_cmd = app.add_subcommand("ingest", "scan a directory of 8-bit images into --out/manifest.ndjson");
    fs::path ingest_dir;
    IngestOptions io;
    io.geometry = survey_geometry();
    ingest_cmd->add_option("directory", ingest_dir)->required()->check(CLI::ExistingDirectory);
    ingest_cmd->add_option("--sidecar", io.sidecar, "CSV: filename,label[,altitude_m]")->check(CLI::ExistingFile);
    ingest_cmd->add_option("--height", io.height)->capture_default_str();
    ingest_cmd->add_option("--width", io.width)->capture_default_str();
    ingest_cmd->add_option("--fov-h", io.geometry.fov_h_deg, "horizontal field of view, degrees")->capture_default_str();
    ingest_cmd->add_option("--fov-v", io.geometry.fov_v_deg, "vertical field of view, degrees")->capture_default_str();
    ingest_cmd->add_option("--altitude", io.geometry.altitude_m, "default altitude in metres")->capture_default_str();
    ingest_cmd->add_option("--test-fraction", io.test_fraction)->capture_default_str();
    ingest_cmd->add_option("--val-fraction", io.val_fraction)->capture_default_str();

    // train
    auto* train = app.add_subcommand("train", "fit the VAE on the train split; writes --out/model.vaeckpt");
    fs::path manifest_path;
    TrainFlags tf;
    train->add_option("--manifest,-m", manifest_path)->required()->check(CLI::ExistingFile);
    tf.add(train);

    // detect
    auto* detect_cmd = app.add_subcommand("detect", "score the test split; writes --out/records.ndjson and .csv");
    fs::path model_path;
    DetectFlags df;
    detect_cmd->add_option("--manifest,-m", manifest_path)->required()->check(CLI::ExistingFile);
    detect_cmd->add_option("--model", model_path)->required()->check(CLI::ExistingFile);
    df.add(detect_cmd);

    // eval
    auto* eval = app.add_subcommand("eval", "precision, recall, F1 and PR curves; writes --out/metrics.csv");
    fs::path records_path;
    std::string label_source = "ground_truth";
    bool rethreshold = false;
    eval->add_option("--records,-r", records_path)->required()->check(CLI::ExistingFile);
    eval->add_option("--labels", label_source)
        ->check(CLI::IsMember({"ground_truth", "operator"}))
        ->capture_default_str();
    auto* eval_d = eval->add_option("--density-percentile", df.density_percentile)->check(CLI::Range(0.0, 100.0));
    auto* eval_r = eval->add_option("--roi-percentile", df.roi_percentile)->check(CLI::Range(0.0, 100.0));
    eval->add_flag("--precision-preset", df.precision_preset);

    // sweep
    auto* sweep = app.add_subcommand("sweep", "train and evaluate one model per latent size; writes --out/sweep.csv");
    std::vector<std::size_t> dims{8, 64};
    sweep->add_option("--manifest,-m", manifest_path)->required()->check(CLI::ExistingFile);
    sweep->add_option("--dims", dims, "latent sizes")->delimiter(',')->capture_default_str();
    bool keep_models = false;
    sweep->add_flag("--keep-models", keep_models, "save model_d<d>.vaeckpt per size");
    TrainFlags sweep_tf;
    DetectFlags sweep_df;
    sweep_tf.add(sweep);
    sweep_df.add(sweep);

    // serve
    auto* serve = app.add_subcommand("serve", "HTTP JSON API for the operator console");
    std::string host = "127.0.0.1";
    int port = 8080;
    serve->add_option("--manifest,-m", manifest_path)->required()->check(CLI::ExistingFile);
    serve->add_option("--records,-r", records_path)->required()->check(CLI::ExistingFile);
    serve->add_option("--model", model_path, "enables reconstruction, heatmap and mask thumbnails")
        ->check(CLI::ExistingFile);
    serve->add_option("--host", host)->capture_default_str();
    serve->add_option("--port", port)->check(CLI::Range(0, 65535))->capture_default_str();
    DetectFlags serve_df;
    serve->add_option("--object-min-m", serve_df.object_min_m)->capture_default_str();
    serve->add_option("--object-max-m", serve_df.object_max_m)->capture_default_str();

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(spdlog::level::from_str(g.log_level));

    try {
        fs::create_directories(g.out);
        if (synth->parsed()) {
            const DatasetManifest m = synth_dataset(n_inliers, n_outliers, g.seed, sc, g.out);
            fmt::print("wrote {} images to {}\n", m.images.size(), (g.out / "manifest.ndjson").string());
        } else if (ingest_cmd->parsed()) {
            io.seed = g.seed;
            io.manifest_path = g.out / "manifest.ndjson";
            const DatasetManifest m = ingest(ingest_dir, io);
            fmt::print("ingested {} images, skipped {}; manifest {}\n", m.images.size(), m.skipped.size(),
                       io.manifest_path.string());
        } else if (train->parsed()) {
            const DatasetManifest m = read_manifest(manifest_path);
            const Checkpoint ckpt =
                train_from_manifest(m, manifest_path.parent_path(), tf.config(m, g.seed), {log_epoch});
            save_checkpoint(ckpt, g.out / "model.vaeckpt");
            write_file_atomic(g.out / "history.csv", history_csv(ckpt.history));
            fmt::print("best epoch {} of {}{}; model {} ({})\n", ckpt.history.best_epoch, ckpt.history.epochs.size(),
                       ckpt.history.early_stopped ? " (early stop)" : "", (g.out / "model.vaeckpt").string(),
                       checkpoint_id(ckpt));
        } else if (detect_cmd->parsed()) {
            const DatasetManifest m = read_manifest(manifest_path);
            const Checkpoint ckpt = load_checkpoint(model_path);
            const DetectionSet set = detect(m, manifest_path.parent_path(), ckpt, df.config(g.seed));
            write_records(set, g.out / "records.ndjson");
            write_file_atomic(g.out / "records.csv", records_to_csv(set));
            std::size_t joint = 0;
            for (const auto& r : set.records) joint += r.joint_flag ? 1 : 0;
            fmt::print("{} images scored, {} jointly flagged; records {}\n", set.records.size(), joint,
                       (g.out / "records.ndjson").string());
        } else if (eval->parsed()) {
            DetectionSet set = read_records(records_path);
            if (df.precision_preset || eval_d->count() > 0 || eval_r->count() > 0) {
                rethreshold = true;
                apply_thresholds(set, df.precision_preset ? precision_preset()
                                                          : Thresholds{eval_d->count() > 0
                                                                           ? df.density_percentile
                                                                           : set.thresholds.density_percentile,
                                                                       eval_r->count() > 0
                                                                           ? df.roi_percentile
                                                                           : set.thresholds.roi_percentile});
            }
            const LabelSource source = label_source == "operator" ? LabelSource::Operator : LabelSource::GroundTruth;
            std::vector<EvalReport> reports;
            nlohmann::json all = nlohmann::json::array();
            for (const DetectorMode mode : {DetectorMode::Clustering, DetectorMode::Roi, DetectorMode::Joint}) {
                reports.push_back(evaluate(set, mode, source));
                all.push_back(reports.back());
                fmt::print("{:<10} precision {:.3f} recall {:.3f} f1 {:.3f} AP {:.3f}  (tp {} fp {} fn {})\n",
                           to_string(mode), reports.back().precision, reports.back().recall, reports.back().f1,
                           reports.back().pr.average_precision, reports.back().counts.tp, reports.back().counts.fp,
                           reports.back().counts.fn);
            }
            if (rethreshold) {
                fmt::print("thresholds: density {} roi {}\n", set.thresholds.density_percentile,
                           set.thresholds.roi_percentile);
            }
            write_file_atomic(g.out / "metrics.csv", eval_to_csv(reports));
            write_file_atomic(g.out / "pr_curves.csv", pr_csv(reports));
            write_file_atomic(g.out / "metrics.json", all.dump(2) + "\n");
        } else if (sweep->parsed()) {
            const DatasetManifest m = read_manifest(manifest_path);
            const auto rows = sweep_latent_dim(dims, m, manifest_path.parent_path(), sweep_tf.config(m, g.seed),
                                               sweep_df.config(g.seed), [&](std::size_t d, const Checkpoint& c) {
                                                   if (keep_models) {
                                                       save_checkpoint(c, g.out / fmt::format("model_d{}.vaeckpt", d));
                                                   }
                                               });
            write_file_atomic(g.out / "sweep.csv", sweep_to_csv(rows));
            for (const auto& row : rows) {
                fmt::print("d={:<5} {:<10} precision {:.3f} recall {:.3f} f1 {:.3f}\n", row.latent_dim,
                           to_string(row.report.mode), row.report.precision, row.report.recall, row.report.f1);
            }
        } else if (serve->parsed()) {
            DatasetManifest m = read_manifest(manifest_path);
            DetectionSet set = read_records(records_path);
            std::optional<Checkpoint> ckpt;
            if (!model_path.empty()) ckpt = load_checkpoint(model_path);
            ReviewOptions opts;
            opts.records_path = records_path;
            opts.size = {serve_df.object_min_m, serve_df.object_max_m, serve_df.size_margin};
            ReviewService service(std::move(set), std::move(m), manifest_path, std::move(ckpt), opts);
            httplib::Server server;
            install_routes(server, service);
            g_server = &server;
            std::signal(SIGINT, stop_server);
            std::signal(SIGTERM, stop_server);
            spdlog::info("serving on http://{}:{}", host, port);
            if (!server.listen(host, port)) {
                spdlog::error("cannot listen on {}:{}", host, port);
                return 1;
            }
        }
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
