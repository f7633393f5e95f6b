#include <doctest.h>

#include <fstream>
#include <sstream>

#include "nirpf/error.hpp"
#include "nirpf/harness.hpp"
#include "test_support.hpp"

using namespace nirpf;
using nirpf::testing::TempDir;

namespace {

class FixedScorer final : public Scorer {
public:
    explicit FixedScorer(ScoreVector sv) : sv_(std::move(sv)) {}
    ScoreVector score(const NirImage&) override { return sv_; }
    std::vector<std::string> labels() const override { return {"A", "B"}; }

private:
    ScoreVector sv_;
};

class BrokenScorer final : public Scorer {
public:
    ScoreVector score(const NirImage&) override { throw Error(ErrorCode::ScorerFailure, "down"); }
    std::vector<std::string> labels() const override { return {"A", "B"}; }
};

AttackConfig quick_config(int w, int h) {
    AttackConfig cfg;
    cfg.true_label = "placeholder";
    cfg.m = 2;
    cfg.bounds = GenomeBounds::for_image(w, h, 2.0, 10.0);
    cfg.population = 8;
    cfg.max_iters = 6;
    cfg.seed = 1;
    return cfg;
}

std::vector<AttackCase> fixed_cases(int count) {
    std::vector<AttackCase> cases;
    for (int k = 0; k < count; ++k) {
        cases.push_back({"case_" + std::to_string(k), NirImage(16, 16, 0.5), BinaryMask(16, 16, true), "A", {}});
    }
    return cases;
}

}  // namespace

TEST_CASE("report accounting") {
    SUBCASE("empty dataset has no ASR") {
        Oracle oracle(std::make_shared<FixedScorer>(ScoreVector({{"A", 0.9}, {"B", 0.1}})));
        const auto report = evaluate_asr({}, oracle, quick_config(16, 16));
        CHECK(report.total() == 0);
        CHECK_FALSE(report.asr().has_value());
    }
    SUBCASE("pre-successes are excluded from the denominator") {
        Oracle oracle(std::make_shared<FixedScorer>(ScoreVector({{"A", 0.1}, {"B", 0.9}})));
        const auto report = evaluate_asr(fixed_cases(3), oracle, quick_config(16, 16));
        CHECK(report.total() == 3);
        CHECK(report.pre_success_count() == 3);
        CHECK(report.eligible() == 0);
        CHECK_FALSE(report.asr().has_value());
        for (const auto& r : report.records) CHECK(r.stop_generation == -1);
    }
    SUBCASE("oracle failures are recorded and count as misses") {
        Oracle oracle(std::make_shared<BrokenScorer>());
        const auto report = evaluate_asr(fixed_cases(2), oracle, quick_config(16, 16));
        CHECK(report.failed_count() == 2);
        REQUIRE(report.asr().has_value());
        CHECK(*report.asr() == 0.0);
        CHECK(report.records[0].error == "down");
    }
    SUBCASE("records are sorted by case id") {
        Oracle oracle(std::make_shared<FixedScorer>(ScoreVector({{"A", 0.1}, {"B", 0.9}})));
        auto cases = fixed_cases(3);
        std::swap(cases[0], cases[2]);
        const auto report = evaluate_asr(cases, oracle, quick_config(16, 16));
        CHECK(report.records[0].case_id == "case_0");
        CHECK(report.records[2].case_id == "case_2");
    }
}

TEST_CASE("toy dataset") {
    const ToyDataset a = make_toy_dataset(4, 48, 40, 9);
    const ToyDataset b = make_toy_dataset(4, 48, 40, 9);
    REQUIRE(a.cases.size() == 4);
    CHECK(a.gallery.labels() == std::vector<std::string>{"id_00", "id_01", "id_02", "id_03"});
    BuiltinScorer scorer(a.gallery);
    for (std::size_t k = 0; k < a.cases.size(); ++k) {
        const auto& c = a.cases[k];
        CHECK(c.probe == b.cases[k].probe);
        CHECK(c.id == "case_0" + std::to_string(k));
        CHECK(c.probe.width() == 48);
        CHECK(c.probe.height() == 40);
        CHECK(c.face_mask.count() >= static_cast<std::size_t>(0.2 * 48 * 40));
        CHECK(top1(scorer.score(c.probe)) == c.true_label);
        for (double v : c.probe.data()) CHECK((v >= 0.0 && v <= 1.0));
    }
    CHECK(make_toy_dataset(4, 48, 40, 10).cases[0].probe != a.cases[0].probe);
    CHECK_THROWS_AS(make_toy_dataset(1, 48, 40, 9), Error);
}

TEST_CASE("dataset round trip on disk") {
    TempDir dir("harness");
    const ToyDataset ds = make_toy_dataset(3, 32, 32, 4);
    save_dataset(ds, dir.path());
    const ToyDataset back = load_dataset(dir.path());
    CHECK(back.gallery.labels() == ds.gallery.labels());
    REQUIRE(back.cases.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(back.cases[k].id == ds.cases[k].id);
        CHECK(back.cases[k].face_mask == ds.cases[k].face_mask);
        CHECK(back.cases[k].true_label == ds.cases[k].true_label);
        for (std::size_t i = 0; i < ds.cases[k].probe.size(); ++i) {
            CHECK(std::abs(back.cases[k].probe.data()[i] - ds.cases[k].probe.data()[i]) <= 0.5 / 255.0 + 1e-12);
        }
    }
}

TEST_CASE("rotation") {
    RngStream rng(3, 0);
    const NirImage img = nirpf::testing::random_image(21, 17, rng);
    CHECK(rotate_image(img, 0.0) == img);

    BinaryMask mask(21, 17);
    for (int y = 5; y < 12; ++y) {
        for (int x = 6; x < 15; ++x) mask.set(x, y);
    }
    CHECK(rotate_mask(mask, 0.0) == mask);
    CHECK(rotate_mask(rotate_mask(mask, 90.0), -90.0) == mask);
    for (double angle : {10.0, 20.0, 30.0}) {
        const BinaryMask back = rotate_mask(rotate_mask(mask, angle), -angle);
        std::size_t differ = 0;
        for (int y = 0; y < 17; ++y) {
            for (int x = 0; x < 21; ++x) differ += back.test(x, y) != mask.test(x, y);
        }
        // Nearest-neighbour resampling only disturbs the boundary.
        CHECK(differ <= 12);
    }

    SUBCASE("positive angles turn counter-clockwise on screen") {
        NirImage dot(11, 11);
        dot.at(8, 5) = 1.0;  // right of center
        const NirImage turned = rotate_image(dot, 90.0);
        CHECK(turned.at(5, 2) == doctest::Approx(1.0));  // now above center
    }
}

TEST_CASE("posture sweep") {
    const ToyDataset ds = make_toy_dataset(3, 48, 48, 5);
    const auto& c = ds.cases[0];
    AttackConfig cfg = quick_config(48, 48);
    cfg.true_label = c.true_label;
    cfg.bounds.l_max = 16.0;
    cfg.max_iters = 30;
    cfg.seed = 2;
    Oracle oracle(std::make_shared<BuiltinScorer>(ds.gallery));
    const AttackResult r = run_attack(c.probe, c.face_mask, oracle, cfg);
    const PostureReport report = posture_sweep(r.best_genome, c.probe, c.face_mask, oracle, cfg, kDefaultPostureAngles);
    REQUIRE(report.samples.size() == kDefaultPostureAngles.size());
    const PostureSample& upright = report.samples[3];
    CHECK(upright.angle_deg == 0.0);
    CHECK(upright.scores == r.final_scores);
    CHECK(upright.success == r.success);
    CHECK(report.retention() >= 0.0);
    CHECK(report.retention() <= 1.0);
    CHECK(PostureReport{}.retention() == 0.0);
}

TEST_CASE("ablations") {
    const ToyDataset ds = make_toy_dataset(3, 40, 40, 6);
    Oracle oracle(std::make_shared<BuiltinScorer>(ds.gallery));
    AttackConfig cfg = quick_config(40, 40);

    SUBCASE("total absorption makes both ink models identical") {
        cfg.reflectance.ink_absorption = 1.0;
        const LrmAblation ab = ablation_lrm(ds.cases, oracle, cfg);
        REQUIRE(ab.with_lrm.total() == ab.zeroing.total());
        for (std::size_t k = 0; k < ab.with_lrm.total(); ++k) {
            CHECK(ab.with_lrm.records[k].genome == ab.zeroing.records[k].genome);
            CHECK(ab.with_lrm.records[k].success == ab.zeroing.records[k].success);
            CHECK(ab.with_lrm.records[k].final_fitness == ab.zeroing.records[k].final_fitness);
        }
        CHECK(ab.with_lrm.name == "ablation-lrm/with_lrm");
    }
    SUBCASE("fixed radii and frozen centers leave nothing to evolve") {
        cfg.bounds.l_min = cfg.bounds.l_max = 6.0;
        cfg.early_stop = false;
        const AttackCase& c = ds.cases[1];
        AttackConfig one = cfg;
        one.true_label = c.true_label;
        one.search = SearchSpace::ShapeOnly;
        const AttackResult r = run_attack(c.probe, c.face_mask, oracle, one);
        for (double f : r.fitness_trace) CHECK(f == r.fitness_trace.front());
        const ExperimentReport report = ablation_shapes(ds.cases, oracle, cfg, SearchSpace::ShapeOnly);
        CHECK(report.name == "ablation-shape-only");
        CHECK(report.total() == 3);
    }
    SUBCASE("position-only genomes are circles") {
        const ExperimentReport report = ablation_shapes(ds.cases, oracle, cfg, SearchSpace::PositionOnly);
        for (const auto& rec : report.records) {
            if (rec.pre_success) continue;
            for (int i = 0; i < rec.genome.patches(); ++i) {
                for (int j = 0; j < rec.genome.vertices(); ++j) CHECK(rec.genome.radius(i, j) == 6.0);
            }
        }
    }
}

TEST_CASE("report csv") {
    TempDir dir("harness");
    ExperimentReport report;
    ExperimentRecord rec;
    rec.case_id = "case_00";
    rec.success = true;
    rec.queries = 81;
    rec.stop_generation = 1;
    rec.clean_true_prob = 0.5;
    rec.final_true_prob = 0.25;
    rec.final_fitness = 0.25;
    report.records.push_back(rec);
    write_report_csv(report, dir / "report.csv");
    std::ifstream in(dir / "report.csv");
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(ss.str() ==
          "case_id,mode,success,pre_success,failed,queries,stop_generation,clean_true_prob,final_true_prob,"
          "final_fitness\n"
          "case_00,dodging,1,0,0,81,1,0.5,0.25,0.25\n");
}
