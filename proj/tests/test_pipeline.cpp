#include <doctest.h>
#include <fmt/format.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>

#include "seavae/checkpoint.hpp"
#include "seavae/metrics.hpp"
#include "seavae/pipeline.hpp"
#include "seavae/synth.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace seavae;
namespace fs = std::filesystem;
using seavae::oracle::brute_force_ap;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / fmt::format("seavae_{}_{}", tag, std::random_device{}());
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

// Scores drawn from a small integer range so ties are common.
void random_scored_set(Rng& rng, std::vector<double>& scores, std::vector<bool>& labels) {
    std::uniform_int_distribution<std::size_t> size(2, 60);
    std::uniform_int_distribution<int> level(0, 9);
    std::bernoulli_distribution coin(0.3);
    const std::size_t n = size(rng);
    scores.assign(n, 0.0);
    labels.assign(n, false);
    for (std::size_t i = 0; i < n; ++i) {
        scores[i] = level(rng) * 0.5;
        labels[i] = coin(rng);
    }
    labels[0] = true;
    labels[1] = false;
}

DetectionSet ladder_set(std::size_t n) {
    DetectionSet set;
    set.model_id = "0badf00d";
    for (std::size_t i = 0; i < n; ++i) {
        DetectionRecord r;
        r.id = fmt::format("r{:03d}", i);
        r.density = static_cast<double>(i + 1);
        r.roi_score = static_cast<double>(n - i);
        r.model_id = set.model_id;
        set.records.push_back(r);
    }
    return set;
}

DetectionSet random_set(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::bernoulli_distribution coin(0.2);
    DetectionSet set;
    set.model_id = "cafe1234";
    set.bandwidth = 0.37;
    for (std::size_t i = 0; i < n; ++i) {
        DetectionRecord r;
        r.id = fmt::format("img_{:05d}", i);
        r.label = coin(rng) ? Label::Outlier : Label::Inlier;
        if (i % 3 == 0) r.operator_label = coin(rng) ? Label::Outlier : Label::Inlier;
        r.l2_score = u(rng);
        r.density = u(rng);
        r.roi_score = coin(rng) ? 0.0 : u(rng);
        r.x = 10.0 * u(rng) - 5.0;
        r.y = 10.0 * u(rng) - 5.0;
        r.roi_count = i % 4;
        if (r.roi_count > 0) r.roi_bbox = BoundingBox{1, 2, 11, 13};
        r.model_id = set.model_id;
        set.records.push_back(r);
    }
    apply_thresholds(set, Thresholds{});
    return set;
}

std::vector<bool> flags_of(const DetectionSet& set, bool DetectionRecord::*field) {
    std::vector<bool> out;
    for (const auto& r : set.records) out.push_back(r.*field);
    return out;
}

bool subset(const std::vector<bool>& a, const std::vector<bool>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] && !b[i]) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("precision, recall and F1 unit cases") {
    const Confusion c{.tp = 10, .fp = 10, .tn = 80, .fn = 0};
    CHECK(precision(c) == 0.5);
    CHECK(recall(c) == 1.0);
    CHECK(f1_score(c) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

    const Confusion d{.tp = 3, .fp = 1, .tn = 10, .fn = 6};
    CHECK(precision(d) == 0.75);
    CHECK(recall(d) == 3.0 / 9.0);
    CHECK(f1_score(d) == doctest::Approx(2.0 * 3.0 / (2.0 * 3.0 + 1.0 + 6.0)).epsilon(1e-15));

    const Confusion empty{.tp = 0, .fp = 0, .tn = 5, .fn = 0};
    CHECK(precision(empty) == 0.0);
    CHECK(recall(empty) == 0.0);
    CHECK(f1_score(empty) == 0.0);
}

TEST_CASE("confusion counts against truth") {
    const std::vector<bool> pred{true, true, false, false, true};
    const std::vector<bool> truth{true, false, true, false, true};
    const Confusion c = confusion(pred, truth);
    CHECK(c.tp == 2);
    CHECK(c.fp == 1);
    CHECK(c.fn == 1);
    CHECK(c.tn == 1);
    CHECK(c.total() == 5);
    CHECK_THROWS(confusion({true}, {true, false}));
}

TEST_CASE("F1 lies between min and max of precision and recall") {
    Rng rng(404);
    std::uniform_int_distribution<std::size_t> k(0, 30);
    for (int trial = 0; trial < 500; ++trial) {
        const Confusion c{.tp = k(rng) + 1, .fp = k(rng), .tn = k(rng), .fn = k(rng)};
        const double p = precision(c), r = recall(c), f = f1_score(c);
        CHECK(f >= std::min(p, r) - 1e-12);
        CHECK(f <= std::max(p, r) + 1e-12);
        CHECK(f == doctest::Approx(2.0 * p * r / (p + r)).epsilon(1e-12));
    }
}

TEST_CASE("average precision matches brute-force enumeration on 100 random sets") {
    Rng rng(2024);
    std::vector<double> scores;
    std::vector<bool> labels;
    for (int trial = 0; trial < 100; ++trial) {
        random_scored_set(rng, scores, labels);
        const PrCurve pr = pr_curve(scores, labels);
        CHECK(pr.average_precision == doctest::Approx(brute_force_ap(scores, labels)).epsilon(1e-12));

        // one point per distinct score, thresholds descending, recall non-decreasing
        std::vector<double> distinct = scores;
        std::sort(distinct.begin(), distinct.end());
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
        REQUIRE(pr.points.size() == distinct.size());
        for (std::size_t i = 1; i < pr.points.size(); ++i) {
            CHECK(pr.points[i].threshold < pr.points[i - 1].threshold);
            CHECK(pr.points[i].recall >= pr.points[i - 1].recall);
        }
        CHECK(pr.points.back().recall == 1.0);
    }
}

TEST_CASE("perfect scorer has AP exactly one") {
    std::vector<double> scores;
    std::vector<bool> labels;
    for (int i = 0; i < 50; ++i) {
        labels.push_back(i % 7 == 0);
        scores.push_back(labels.back() ? 10.0 + i : static_cast<double>(i) / 100.0);
    }
    CHECK(pr_curve(scores, labels).average_precision == 1.0);
}

TEST_CASE("random scorer AP is close to prevalence") {
    Rng rng(17);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::bernoulli_distribution coin(0.1);
    std::vector<double> scores(20000);
    std::vector<bool> labels(20000);
    double positives = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        scores[i] = u(rng);
        labels[i] = coin(rng);
        positives += labels[i] ? 1.0 : 0.0;
    }
    CHECK(pr_curve(scores, labels).average_precision ==
          doctest::Approx(positives / static_cast<double>(scores.size())).epsilon(0.15));
}

TEST_CASE("pr_curve rejects single-class labels") {
    const std::vector<double> s{0.1, 0.2};
    CHECK_THROWS(pr_curve(s, {true, true}));
    CHECK_THROWS(pr_curve(s, {false, false}));
    CHECK_THROWS(pr_curve(s, {true}));
}

TEST_CASE("Sturges bin count") {
    CHECK(sturges_bins(1) == 1);
    CHECK(sturges_bins(2) == 2);
    CHECK(sturges_bins(12) == 5);
    CHECK(sturges_bins(16) == 5);
    CHECK(sturges_bins(17) == 6);
    CHECK(sturges_bins(1000) == 11);
    CHECK_THROWS(sturges_bins(0));
}

TEST_CASE("overlap coefficient") {
    const std::vector<double> a{0.0, 1.0, 2.0, 3.0};
    const std::vector<double> far{10.0, 11.0};
    CHECK(overlap_coefficient(a, a) == doctest::Approx(1.0));
    CHECK(overlap_coefficient(a, far, 20) == 0.0);
    const std::vector<double> same{4.0, 4.0};
    CHECK(overlap_coefficient(same, same) == 1.0);

    // explicit two-bin oracle over [0, 4]: a = {0, 1 | 2, 3}, b = {0.5 | 3.5, 4, 3}
    const std::vector<double> b{0.5, 3.5, 4.0, 3.0};
    CHECK(overlap_coefficient(a, b, 2) == doctest::Approx(std::min(0.5, 0.25) + std::min(0.5, 0.75)));

    // symmetric, and in [0, 1]
    Rng rng(8);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int t = 0; t < 50; ++t) {
        std::vector<double> x(5 + t), y(12);
        for (double& v : x) v = g(rng);
        for (double& v : y) v = g(rng) + 0.1 * t;
        const double o = overlap_coefficient(x, y);
        CHECK(o == doctest::Approx(overlap_coefficient(y, x)));
        CHECK(o >= 0.0);
        CHECK(o <= 1.0 + 1e-12);
    }
    CHECK_THROWS(overlap_coefficient({}, a));
}

TEST_CASE("threshold gates follow the percentile conventions") {
    DetectionSet set = ladder_set(100);  // density 1..100, roi 100..1
    apply_thresholds(set, Thresholds{});
    // density: strictly below the 20th percentile (20.8); roi: strictly above the 80th (80.2)
    CHECK(set.density_threshold == doctest::Approx(20.8));
    CHECK(set.roi_threshold == doctest::Approx(80.2));
    for (const auto& r : set.records) {
        CHECK(r.density_flag == (r.density <= 20.0));
        CHECK(r.roi_flag == (r.roi_score >= 81.0));
        CHECK(r.joint_flag == (r.density_flag && r.roi_flag));
    }
    // low density and high roi coincide on this ladder
    CHECK(std::count_if(set.records.begin(), set.records.end(), [](const auto& r) { return r.joint_flag; }) == 20);

    apply_thresholds(set, precision_preset());
    CHECK(std::count_if(set.records.begin(), set.records.end(), [](const auto& r) { return r.roi_flag; }) == 5);

    SUBCASE("zero disables a gate") {
        apply_thresholds(set, {0.0, 0.0});
        for (const auto& r : set.records) CHECK(r.joint_flag);
        apply_thresholds(set, {80.0, 0.0});
        for (const auto& r : set.records) CHECK(r.joint_flag == r.density_flag);
    }
    SUBCASE("one hundred flags nothing") {
        apply_thresholds(set, {100.0, 0.0});
        for (const auto& r : set.records) CHECK_FALSE(r.density_flag);
        apply_thresholds(set, {0.0, 100.0});
        for (const auto& r : set.records) CHECK_FALSE(r.roi_flag);
    }
    SUBCASE("ties") {
        for (auto& r : set.records) r.density = 1.0;
        apply_thresholds(set, Thresholds{});
        for (const auto& r : set.records) CHECK_FALSE(r.density_flag);
    }
}

TEST_CASE("threshold validation") {
    CHECK_THROWS(Thresholds{-1.0, 50.0}.validate());
    CHECK_THROWS(Thresholds{50.0, 100.5}.validate());
    CHECK_THROWS(Thresholds{std::nan(""), 50.0}.validate());
    CHECK_NOTHROW(Thresholds{0.0, 100.0}.validate());
    const nlohmann::json j = Thresholds{12.5, 90.0};
    CHECK(j.at("density_percentile") == 12.5);
    CHECK(j.get<Thresholds>().roi_percentile == 90.0);
    CHECK_THROWS(nlohmann::json::parse(R"({"density_percentile": 120, "roi_percentile": 5})").get<Thresholds>());
}

TEST_CASE("tightening either percentile never grows the flagged set") {
    Rng rng(99);
    std::uniform_real_distribution<double> pct(0.0, 100.0);
    for (int trial = 0; trial < 60; ++trial) {
        DetectionSet set = random_set(40 + static_cast<std::size_t>(trial), 1000 + trial);
        double d1 = pct(rng), d2 = pct(rng), r1 = pct(rng), r2 = pct(rng);
        if (d1 > d2) std::swap(d1, d2);
        if (r1 > r2) std::swap(r1, r2);
        apply_thresholds(set, {d1, r1});
        const auto loose_d = flags_of(set, &DetectionRecord::density_flag);
        const auto loose_r = flags_of(set, &DetectionRecord::roi_flag);
        const auto loose_j = flags_of(set, &DetectionRecord::joint_flag);
        apply_thresholds(set, {d2, r2});
        CHECK(subset(flags_of(set, &DetectionRecord::density_flag), loose_d));
        CHECK(subset(flags_of(set, &DetectionRecord::roi_flag), loose_r));
        CHECK(subset(flags_of(set, &DetectionRecord::joint_flag), loose_j));
        // dropping stage 2 keeps every jointly flagged image
        const auto joint = flags_of(set, &DetectionRecord::joint_flag);
        apply_thresholds(set, {d2, 0.0});
        CHECK(subset(joint, flags_of(set, &DetectionRecord::joint_flag)));
    }
}

TEST_CASE("detection records round trip through ndjson and files") {
    const DetectionSet set = random_set(25, 5);
    const std::string text = records_to_ndjson(set);
    const DetectionSet back = records_from_ndjson(text);
    CHECK(records_to_ndjson(back) == text);
    REQUIRE(back.records.size() == 25);
    CHECK(back.bandwidth == set.bandwidth);
    CHECK(back.records[3].operator_label == set.records[3].operator_label);
    CHECK(back.records[1].roi_bbox.has_value());
    CHECK_FALSE(back.records[0].roi_bbox.has_value());
    CHECK(back.find("img_00007") != nullptr);
    CHECK(back.find("nope") == nullptr);

    TempDir dir("records");
    write_records(set, dir.path / "r.ndjson");
    CHECK(records_to_ndjson(read_records(dir.path / "r.ndjson")) == text);

    const std::string csv = records_to_csv(set);
    CHECK(csv.rfind("id,label,operator_label,l2_score,density,density_flag,roi_score,roi_flag,joint_flag,x,y,roi_count,"
                    "model_id\n",
                    0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 26);

    CHECK_THROWS(records_from_ndjson(R"({"kind":"record","id":"x"})"));
    CHECK_THROWS(read_records(dir.path / "missing.ndjson"));
}

TEST_CASE("mode scores and flags") {
    DetectionRecord r;
    r.density = 0.3;
    r.roi_score = 0.7;
    r.density_flag = true;
    r.roi_flag = false;
    r.joint_flag = false;
    CHECK(mode_score(r, DetectorMode::Clustering) == -0.3);
    CHECK(mode_score(r, DetectorMode::Roi) == 0.7);
    CHECK(mode_score(r, DetectorMode::Joint) == 0.7);
    CHECK(mode_flag(r, DetectorMode::Clustering));
    CHECK_FALSE(mode_flag(r, DetectorMode::Roi));
    r.density_flag = false;
    CHECK(mode_score(r, DetectorMode::Joint) < 0.0);
    CHECK(to_string(DetectorMode::Joint) == "joint");
}

TEST_CASE("evaluate against an enumerated oracle") {
    const DetectionSet set = random_set(200, 31);
    for (const DetectorMode mode : {DetectorMode::Clustering, DetectorMode::Roi, DetectorMode::Joint}) {
        const EvalReport rep = evaluate(set, mode);
        Confusion c;
        std::vector<double> scores;
        std::vector<bool> labels;
        for (const auto& r : set.records) {
            const bool t = r.label == Label::Outlier;
            const bool p = mode_flag(r, mode);
            c.tp += t && p;
            c.fp += !t && p;
            c.fn += t && !p;
            c.tn += !t && !p;
            scores.push_back(mode_score(r, mode));
            labels.push_back(t);
        }
        CHECK(rep.counts.tp == c.tp);
        CHECK(rep.counts.fp == c.fp);
        CHECK(rep.counts.fn == c.fn);
        CHECK(rep.counts.tn == c.tn);
        CHECK(rep.pr.average_precision == doctest::Approx(brute_force_ap(scores, labels)).epsilon(1e-12));
        const nlohmann::json j = rep;
        CHECK(j.at("mode") == to_string(mode));
    }
    const EvalReport op = evaluate(set, DetectorMode::Joint, LabelSource::Operator);
    CHECK(op.counts.total() == 67);  // every third record carries an operator label

    DetectionSet unlabeled = set;
    for (auto& r : unlabeled.records) {
        r.label = Label::Unlabeled;
        r.operator_label.reset();
    }
    CHECK_THROWS_AS(evaluate(unlabeled, DetectorMode::Joint), PipelineError);
    CHECK_THROWS_AS(evaluate(unlabeled, DetectorMode::Joint, LabelSource::Operator), PipelineError);

    const std::array<EvalReport, 1> reports{evaluate(set, DetectorMode::Roi)};
    CHECK(eval_to_csv(reports).rfind("mode,precision,recall,f1,tp,fp,tn,fn,average_precision\nroi,", 0) == 0);
}

namespace {

VaeConfig tiny_vae() {
    VaeConfig c;
    c.latent_dim = 3;
    c.height = 32;
    c.width = 32;
    c.widths = {4, 4, 6, 6, 8};
    c.batch_size = 8;
    c.max_epochs = 1;
    c.seed = 5;
    return c;
}

SynthConfig tiny_synth(std::size_t test_inliers) {
    SynthConfig s;
    s.height = 32;
    s.width = 32;
    s.geometry.width_px = 32;
    s.geometry.height_px = 32;
    s.test_inliers = test_inliers;
    return s;
}

DetectConfig quick_detect() {
    DetectConfig d;
    d.tsne.iterations = 400;
    d.seed = 4;
    return d;
}

}  // namespace

TEST_CASE("detect end to end on a tiny model") {
    TempDir dir("detect");
    const DatasetManifest m = synth_dataset(30, 3, 12, tiny_synth(9), dir.path);
    const Checkpoint ckpt = train_from_manifest(m, dir.path, tiny_vae());
    const DetectConfig cfg = quick_detect();
    const DetectionSet a = detect(m, dir.path, ckpt, cfg);
    REQUIRE(a.records.size() == 12);
    CHECK(a.model_id == checkpoint_id(ckpt));
    CHECK(a.bandwidth > 0.0);
    std::size_t outliers = 0;
    for (const auto& r : a.records) {
        const ImageRecord* src = m.find(r.id);
        REQUIRE(src != nullptr);
        CHECK(src->split == Split::Test);
        CHECK(r.label == src->label);
        CHECK(r.density > 0.0);
        CHECK(r.l2_score > 0.0);
        CHECK(r.roi_score >= 0.0);
        CHECK(r.model_id == a.model_id);
        CHECK(r.joint_flag == (r.density_flag && r.roi_flag));
        outliers += r.label == Label::Outlier ? 1 : 0;
    }
    CHECK(outliers == 3);

    // same inputs, same records
    CHECK(records_to_ndjson(detect(m, dir.path, ckpt, cfg)) == records_to_ndjson(a));

    // a reloaded checkpoint scores identically
    save_checkpoint(ckpt, dir.path / "m.vaeckpt");
    CHECK(records_to_ndjson(detect(m, dir.path, load_checkpoint(dir.path / "m.vaeckpt"), cfg)) ==
          records_to_ndjson(a));

    // l2 scores agree with the standalone scorer
    const ImageBatch test = load_split(m, dir.path, Split::Test);
    const auto l2 = l2_scores(ckpt.model, test.images, 5);
    for (std::size_t i = 0; i < l2.size(); ++i) {
        CHECK(l2[i] == doctest::Approx(a.find(test.records[i]->id)->l2_score).epsilon(1e-9));
    }
    CHECK(l2_score(ckpt.model, test.images.slice(0, 1)) == doctest::Approx(l2[0]).epsilon(1e-12));

    SUBCASE("rethresholding cached scores matches a fresh detect") {
        DetectConfig tight = cfg;
        tight.thresholds = precision_preset();
        DetectionSet cached = a;
        apply_thresholds(cached, tight.thresholds);
        CHECK(records_to_ndjson(cached) == records_to_ndjson(detect(m, dir.path, ckpt, tight)));
    }
}

TEST_CASE("pooled density takes the percentile over train and test") {
    TempDir dir("pooled");
    const DatasetManifest m = synth_dataset(30, 3, 13, tiny_synth(9), dir.path);
    const Checkpoint ckpt = train_from_manifest(m, dir.path, tiny_vae());
    DetectConfig cfg = quick_detect();
    cfg.pool_train_density = true;
    const DetectionSet set = detect(m, dir.path, ckpt, cfg);
    CHECK(set.records.size() == 12);
    CHECK(set.reference_density.size() == m.split(Split::Train).size());

    std::vector<double> all;
    for (const auto& r : set.records) all.push_back(r.density);
    all.insert(all.end(), set.reference_density.begin(), set.reference_density.end());
    std::sort(all.begin(), all.end());
    // linear-interpolation 20th percentile, computed by hand
    const double rank = 0.2 * static_cast<double>(all.size() - 1);
    const auto lo = static_cast<std::size_t>(rank);
    const double expected = all[lo] + (rank - static_cast<double>(lo)) * (all[lo + 1] - all[lo]);
    CHECK(set.density_threshold == doctest::Approx(expected).epsilon(1e-12));
    for (const auto& r : set.records) {
        CHECK(r.density_flag == (r.density < expected));
    }
    const DetectionSet back = records_from_ndjson(records_to_ndjson(set));
    CHECK(back.reference_density == set.reference_density);
}

TEST_CASE("detect rejects small or mismatched inputs") {
    TempDir dir("detect_small");
    const DatasetManifest m = synth_dataset(20, 0, 2, tiny_synth(9), dir.path);
    const Checkpoint ckpt{Vae(tiny_vae()), {}};
    CHECK_THROWS_AS(detect(m, dir.path, ckpt, quick_detect()), PipelineError);

    TempDir other("detect_shape");
    const DatasetManifest big = synth_dataset(20, 2, 2, tiny_synth(10), other.path);
    VaeConfig wide = tiny_vae();
    wide.width = 64;
    const Checkpoint mismatched{Vae(wide), {}};
    CHECK_THROWS_AS(detect(big, other.path, mismatched, quick_detect()), PipelineError);
}

TEST_CASE("train_from_manifest needs train and val images") {
    TempDir dir("train_empty");
    DatasetManifest m = synth_dataset(12, 0, 3, tiny_synth(12), dir.path);
    CHECK_THROWS_AS(train_from_manifest(m, dir.path, tiny_vae()), PipelineError);
}

TEST_CASE("latent sweep trains one model per size") {
    TempDir dir("sweep");
    const DatasetManifest m = synth_dataset(30, 3, 21, tiny_synth(9), dir.path);
    const std::array<std::size_t, 2> dims{2, 4};
    std::vector<std::size_t> seen;
    const auto rows = sweep_latent_dim(dims, m, dir.path, tiny_vae(), quick_detect(),
                                       [&](std::size_t d, const Checkpoint& c) {
                                           CHECK(c.model.config().latent_dim == d);
                                           seen.push_back(d);
                                       });
    CHECK(seen == std::vector<std::size_t>{2, 4});
    CHECK(rows.size() == 6);
    const std::string csv = sweep_to_csv(rows);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
    CHECK(csv.find("\n4,joint,") != std::string::npos);
    CHECK_THROWS_AS(sweep_latent_dim({}, m, dir.path, tiny_vae(), quick_detect()), PipelineError);
}
