#include <doctest.h>

#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>

#include "nirpf/error.hpp"
#include "nirpf/harness.hpp"
#include "nirpf/optimizer.hpp"
#include "test_support.hpp"

using namespace nirpf;
using nirpf::testing::TempDir;

namespace {

ErrorCode code_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an nirpf::Error");
    return ErrorCode::ParseError;
}

class FixedScorer final : public Scorer {
public:
    explicit FixedScorer(ScoreVector sv) : sv_(std::move(sv)) {}
    ScoreVector score(const NirImage&) override { return sv_; }
    std::vector<std::string> labels() const override {
        std::vector<std::string> out;
        for (const auto& kv : sv_.probs()) out.push_back(kv.first);
        return out;
    }

private:
    ScoreVector sv_;
};

// Wraps a scorer and fails every call after the first `allowed`.
class FlakyScorer final : public Scorer {
public:
    FlakyScorer(std::shared_ptr<Scorer> inner, int allowed) : inner_(std::move(inner)), allowed_(allowed) {}
    ScoreVector score(const NirImage& probe) override {
        if (calls_.fetch_add(1) >= allowed_) throw Error(ErrorCode::ScorerFailure, "scorer went away");
        return inner_->score(probe);
    }
    std::vector<std::string> labels() const override { return inner_->labels(); }

private:
    std::shared_ptr<Scorer> inner_;
    int allowed_;
    std::atomic<int> calls_{0};
};

AttackConfig small_config(int w, int h) {
    AttackConfig cfg;
    cfg.true_label = "A";
    cfg.m = 2;
    cfg.n = 5;
    cfg.bounds = GenomeBounds::for_image(w, h, 2.0, 10.0);
    cfg.population = 8;
    cfg.max_iters = 5;
    cfg.seed = 11;
    return cfg;
}

PatchGenome filled(int m, int n, double v) {
    return PatchGenome(m, n, std::vector<double>(PatchGenome::param_count(m, n), v));
}

const ToyDataset& toy() {
    static const ToyDataset data = make_toy_dataset(4, 48, 48, 3);
    return data;
}

AttackConfig toy_config(const AttackCase& c, std::uint64_t seed) {
    AttackConfig cfg;
    cfg.true_label = c.true_label;
    cfg.m = 2;
    cfg.bounds = GenomeBounds::for_image(c.probe.width(), c.probe.height(), 2.0, 8.0);
    cfg.population = 10;
    cfg.max_iters = 15;
    cfg.early_stop = false;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("init_population") {
    AttackConfig cfg = small_config(32, 32);
    cfg.population = 4;
    const SearchBox box = make_search_box(cfg);
    auto streams = make_streams(cfg);
    const auto pop = init_population(cfg, box, streams);
    REQUIRE(pop.size() == 4);
    for (const auto& g : pop) {
        CHECK(g.patches() == 2);
        CHECK(g.vertices() == 5);
        CHECK(box.contains(g.params()));
        CHECK(apply_constraints(g, cfg.bounds) == g);
    }
    auto again = make_streams(cfg);
    CHECK(init_population(cfg, box, again) == pop);

    SUBCASE("degenerate radius interval") {
        cfg.bounds.l_min = cfg.bounds.l_max = 5.0;
        const SearchBox fixed = make_search_box(cfg);
        auto s = make_streams(cfg);
        for (const auto& g : init_population(cfg, fixed, s)) {
            for (int i = 0; i < 2; ++i) {
                for (int j = 0; j < 5; ++j) CHECK(g.radius(i, j) == 5.0);
            }
        }
    }
    SUBCASE("stream count must match") {
        std::vector<RngStream> few(2);
        CHECK(code_of([&] { init_population(cfg, box, few); }) == ErrorCode::InvalidConfig);
    }
}

TEST_CASE("search box for the ablation spaces") {
    AttackConfig cfg = small_config(32, 32);
    cfg.search = SearchSpace::PositionOnly;
    const SearchBox pos = make_search_box(cfg);
    for (std::size_t k = 4; k < pos.size(); ++k) {
        CHECK(pos.lower[k] == 6.0);
        CHECK(pos.upper[k] == 6.0);
    }
    CHECK(pos.lower[0] == 0.0);
    CHECK(pos.upper[0] == 31.0);

    cfg.search = SearchSpace::ShapeOnly;
    const SearchBox shape = make_search_box(cfg);
    for (std::size_t k = 0; k < 4; ++k) {
        CHECK(shape.lower[k] == shape.upper[k]);
        CHECK(shape.lower[k] >= 0.0);
        CHECK(shape.lower[k] <= 31.0);
    }
    CHECK(shape.lower[4] == 2.0);
    CHECK(shape.upper[4] == 10.0);
    CHECK(make_search_box(cfg).lower == shape.lower);
}

TEST_CASE("mutate") {
    // Individuals 0..2 hold 10, 6 and 2 in every parameter; 3 is the target.
    std::vector<PatchGenome> pop{filled(1, 3, 10.0), filled(1, 3, 6.0), filled(1, 3, 2.0), filled(1, 3, 99.0)};
    const std::set<double> permutations{12.0, 8.0, 10.0, 2.0, 4.0, 0.0};

    SUBCASE("donor is g_a + F (g_b - g_c) over distinct partners") {
        std::set<double> seen;
        for (std::uint64_t s = 0; s < 200; ++s) {
            RngStream rng(s, 0);
            const PatchGenome donor = mutate(pop, 3, 0.5, rng);
            const double v = donor.params()[0];
            for (double p : donor.params()) CHECK(p == v);
            CHECK(permutations.count(v) == 1);
            seen.insert(v);
        }
        CHECK(seen == permutations);
    }
    SUBCASE("F = 0 returns g_a") {
        RngStream rng(1, 0);
        const double v = mutate(pop, 3, 0.0, rng).params()[0];
        CHECK((v == 10.0 || v == 6.0 || v == 2.0));
    }
    SUBCASE("b == c returns g_a") {
        std::vector<PatchGenome> same(5, filled(1, 3, 4.0));
        same[0] = filled(1, 3, 7.0);
        RngStream rng(2, 0);
        const PatchGenome donor = mutate(same, 0, 0.8, rng);
        for (double p : donor.params()) CHECK(p == 4.0);
    }
    SUBCASE("index is never a partner") {
        std::vector<PatchGenome> mixed{filled(1, 3, 0.0), filled(1, 3, 0.0), filled(1, 3, 0.0), filled(1, 3, 0.0),
                                       filled(1, 3, 1000.0)};
        for (std::uint64_t s = 0; s < 50; ++s) {
            RngStream rng(s, 4);
            CHECK(mutate(mixed, 4, 0.5, rng).params()[0] == 0.0);
        }
    }
    SUBCASE("too small") {
        RngStream rng(0, 0);
        std::vector<PatchGenome> three(pop.begin(), pop.begin() + 3);
        CHECK(code_of([&] { mutate(three, 0, 0.5, rng); }) == ErrorCode::PopulationTooSmall);
        CHECK(code_of([&] { mutate(pop, 4, 0.5, rng); }) == ErrorCode::IndexOutOfRange);
    }
}

TEST_CASE("crossover") {
    PatchGenome target = filled(2, 4, 1.0);
    PatchGenome donor = filled(2, 4, 2.0);
    for (std::uint64_t s = 0; s < 50; ++s) {
        RngStream rng(s, 0);
        CHECK(crossover(target, donor, 1.0, rng) == donor);
        const PatchGenome one = crossover(target, donor, 0.0, rng);
        int changed = 0;
        for (double p : one.params()) changed += (p == 2.0);
        CHECK(changed == 1);
        CHECK(crossover(target, target, 0.5, rng) == target);
        const PatchGenome mixed = crossover(target, donor, 0.5, rng);
        for (double p : mixed.params()) CHECK((p == 1.0 || p == 2.0));
    }
    RngStream rng(0, 0);
    CHECK(code_of([&] { crossover(target, filled(2, 5, 1.0), 0.5, rng); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("select keeps the parent on ties") {
    CHECK(select(0.5, 0.4) == Choice::Child);
    CHECK(select(0.5, 0.5) == Choice::Parent);
    CHECK(select(0.5, 0.6) == Choice::Parent);
}

TEST_CASE("fitness through a stub scorer") {
    const NirImage probe(16, 16, 0.5);
    const BinaryMask face(16, 16, true);
    Oracle oracle(std::make_shared<FixedScorer>(ScoreVector({{"A", 0.43}, {"B", 0.52}, {"C", 0.05}})));
    AttackConfig cfg = small_config(16, 16);
    const PatchGenome g = filled(2, 5, 3.0);
    CHECK(fitness(g, {probe, face, oracle, cfg}) == doctest::Approx(0.43));
    cfg.mode = AttackMode::Impersonation;
    cfg.target_label = "B";
    CHECK(fitness(g, {probe, face, oracle, cfg}) == doctest::Approx(0.48));
    CHECK(attack_succeeded(oracle.query(probe), cfg));
    CHECK(oracle.query_count() == 3);
}

TEST_CASE("empty face mask leaves the probe clean") {
    const auto& c = toy().cases[0];
    BuiltinScorer scorer(toy().gallery);
    Oracle oracle(std::shared_ptr<Scorer>(&scorer, [](Scorer*) {}));
    const BinaryMask none(c.probe.width(), c.probe.height(), false);
    AttackConfig cfg = toy_config(c, 1);
    auto streams = make_streams(cfg);
    const SearchBox box = make_search_box(cfg);
    for (const auto& g : init_population(cfg, box, streams)) {
        CHECK(adversarial_image(c.probe, none, g, cfg) == c.probe);
        CHECK(fitness(g, {c.probe, none, oracle, cfg}) == scorer.score(c.probe).at(c.true_label));
    }
}

TEST_CASE("run_attack") {
    const auto& c = toy().cases[1];

    SUBCASE("pre-success stops before evolving") {
        Oracle oracle(std::make_shared<FixedScorer>(ScoreVector({{"A", 0.2}, {"B", 0.8}})));
        AttackConfig cfg = small_config(16, 16);
        const AttackResult r = run_attack(NirImage(16, 16), BinaryMask(16, 16, true), oracle, cfg);
        CHECK(r.pre_success);
        CHECK(r.success);
        CHECK(r.stop_generation == -1);
        CHECK(r.query_count == 1);
        CHECK(r.fitness_trace.empty());
    }

    SUBCASE("zero generations evaluates only the initial population") {
        AttackConfig cfg = toy_config(c, 2);
        cfg.max_iters = 0;
        Oracle oracle(std::make_shared<BuiltinScorer>(toy().gallery));
        const AttackResult r = run_attack(c.probe, c.face_mask, oracle, cfg);
        CHECK(r.fitness_trace.size() == 1);
        CHECK(r.query_count == 1 + static_cast<std::uint64_t>(cfg.population));
    }

    SUBCASE("trace, feasibility and query budget") {
        AttackConfig cfg = toy_config(c, 7);
        Oracle oracle(std::make_shared<BuiltinScorer>(toy().gallery));
        const SearchBox box = make_search_box(cfg);
        std::mutex mu;
        int evaluated = 0;
        bool all_feasible = true;
        RunHooks hooks;
        hooks.on_evaluate = [&](const PatchGenome& g) {
            std::lock_guard lock(mu);
            ++evaluated;
            all_feasible = all_feasible && box.contains(g.params()) && apply_constraints(g, cfg.bounds) == g;
        };
        const AttackResult r = run_attack(c.probe, c.face_mask, oracle, cfg, hooks);
        CHECK(all_feasible);
        REQUIRE(r.fitness_trace.size() == static_cast<std::size_t>(cfg.max_iters + 1));
        for (std::size_t k = 1; k < r.fitness_trace.size(); ++k) CHECK(r.fitness_trace[k] <= r.fitness_trace[k - 1]);
        const auto q = static_cast<std::uint64_t>(cfg.population);
        const auto t = static_cast<std::uint64_t>(cfg.max_iters);
        CHECK(r.query_count == 1 + q + t * q);
        CHECK(r.query_count <= q * (t + 2));
        CHECK(evaluated == static_cast<int>(q + t * q));
        CHECK(r.best_fitness == r.fitness_trace.back());
        CHECK(r.best_fitness == r.final_scores.at(c.true_label));
        CHECK(box.contains(r.best_genome.params()));
    }

    SUBCASE("deterministic for a fixed seed, independent of workers") {
        AttackConfig cfg = toy_config(c, 5);
        const AttackResult a = run_attack(c.probe, c.face_mask, toy().gallery, cfg);
        const AttackResult b = run_attack(c.probe, c.face_mask, toy().gallery, cfg);
        cfg.workers = 4;
        const AttackResult p = run_attack(c.probe, c.face_mask, toy().gallery, cfg);
        CHECK(a.best_genome == b.best_genome);
        CHECK(a.fitness_trace == b.fitness_trace);
        CHECK(a.best_genome == p.best_genome);
        CHECK(a.fitness_trace == p.fitness_trace);
        cfg.seed = 6;
        CHECK(run_attack(c.probe, c.face_mask, toy().gallery, cfg).best_genome != a.best_genome);
    }

    SUBCASE("early stop ends at the first successful generation") {
        AttackConfig cfg = toy_config(c, 3);
        cfg.early_stop = true;
        cfg.bounds.l_max = 20.0;
        cfg.max_iters = 50;
        const AttackResult r = run_attack(c.probe, c.face_mask, toy().gallery, cfg);
        if (r.success) {
            CHECK(r.generations.back().success);
            for (std::size_t k = 0; k + 1 < r.generations.size(); ++k) CHECK_FALSE(r.generations[k].success);
            CHECK(r.stop_generation == static_cast<int>(r.generations.size()) - 1);
        } else {
            CHECK(r.stop_generation == cfg.max_iters);
        }
    }

    SUBCASE("labels are checked against the gallery") {
        AttackConfig cfg = toy_config(c, 1);
        cfg.true_label = "nobody";
        CHECK(code_of([&] { run_attack(c.probe, c.face_mask, toy().gallery, cfg); }) == ErrorCode::InvalidLabel);
        cfg = toy_config(c, 1);
        cfg.mode = AttackMode::Impersonation;
        cfg.target_label = "nobody";
        CHECK(code_of([&] { run_attack(c.probe, c.face_mask, toy().gallery, cfg); }) == ErrorCode::InvalidLabel);
        cfg.target_label.reset();
        CHECK(code_of([&] { run_attack(c.probe, c.face_mask, toy().gallery, cfg); }) == ErrorCode::InvalidConfig);
    }

    SUBCASE("oracle failure mid-run keeps the partial trace") {
        AttackConfig cfg = toy_config(c, 4);
        const int allowed = 1 + cfg.population + 2 * cfg.population;
        Oracle oracle(std::make_shared<FlakyScorer>(std::make_shared<BuiltinScorer>(toy().gallery), allowed));
        try {
            run_attack(c.probe, c.face_mask, oracle, cfg);
            FAIL("expected AttackAborted");
        } catch (const AttackAborted& e) {
            CHECK(e.code() == ErrorCode::ScorerFailure);
            CHECK(e.partial().fitness_trace.size() == 3);
            CHECK(e.partial().query_count >= static_cast<std::uint64_t>(allowed));
        }
    }

    SUBCASE("mismatched mask") {
        AttackConfig cfg = toy_config(c, 1);
        CHECK(code_of([&] { run_attack(c.probe, BinaryMask(3, 3), toy().gallery, cfg); }) ==
              ErrorCode::DimensionMismatch);
    }
}

TEST_CASE("impersonation raises the target probability") {
    const auto& c = toy().cases[2];
    AttackConfig cfg = toy_config(c, 9);
    cfg.mode = AttackMode::Impersonation;
    cfg.target_label = toy().cases[3].true_label;
    cfg.bounds.l_max = 14.0;
    const AttackResult r = run_attack(c.probe, c.face_mask, toy().gallery, cfg);
    CHECK(r.final_scores.at(*cfg.target_label) >= r.clean_scores.at(*cfg.target_label));
    CHECK(r.best_fitness == doctest::Approx(1.0 - r.final_scores.at(*cfg.target_label)));
}

TEST_CASE("trace csv") {
    TempDir dir("opt");
    const std::vector<GenerationStats> trace{{0, 0.5, 0.7, 41, false}, {1, 0.25, 0.6, 81, true}};
    write_trace_csv(trace, dir / "trace.csv");
    std::ifstream in(dir / "trace.csv");
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(ss.str() ==
          "generation,best_fitness,mean_fitness,query_count,success_flag\n"
          "0,0.5,0.69999999999999996,41,0\n"
          "1,0.25,0.59999999999999998,81,1\n");
}
