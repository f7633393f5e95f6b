#include "nirpf/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <thread>

#include "nirpf/error.hpp"

namespace nirpf {
namespace {

// Runs fn(i) for i in [0, count). With workers > 1 indices are striped over
// threads; the first exception is rethrown after all threads finish.
template <typename Fn>
void parallel_for(int count, int workers, Fn&& fn) {
    if (workers <= 1 || count <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    const int threads = std::min(workers, count);
    std::exception_ptr failure;
    std::mutex failure_mutex;
    {
        std::vector<std::jthread> pool;
        pool.reserve(static_cast<std::size_t>(threads));
        for (int t = 0; t < threads; ++t) {
            pool.emplace_back([&, t] {
                for (int i = t; i < count; i += threads) {
                    try {
                        fn(i);
                    } catch (...) {
                        std::lock_guard lock(failure_mutex);
                        if (!failure) failure = std::current_exception();
                        return;
                    }
                }
            });
        }
    }
    if (failure) std::rethrow_exception(failure);
}

PatchGenome clamp_to_box(PatchGenome genome, const SearchBox& box) {
    box.clamp(genome.params());
    return genome;
}

int best_index(const std::vector<Evaluation>& evals) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(evals.size()); ++i) {
        if (evals[static_cast<std::size_t>(i)].fitness < evals[static_cast<std::size_t>(best)].fitness) best = i;
    }
    return best;
}

}  // namespace

void AttackConfig::validate() const {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
    if (m < 1) fail("m must be >= 1");
    if (n < 3) fail("n must be >= 3");
    if (population < 4) fail("population must be >= 4 (DE/rand/1 needs three distinct partners)");
    if (max_iters < 0) fail("max_iters must be >= 0");
    if (!(std::isfinite(mutation_f) && mutation_f >= 0.0)) fail("mutation_f must be finite and >= 0");
    if (!(crossover_cr >= 0.0 && crossover_cr <= 1.0)) fail("crossover_cr must lie in [0, 1]");
    if (workers < 1) fail("workers must be >= 1");
    if (samples_per_segment < 2) fail("samples_per_segment must be >= 2");
    if (true_label.empty()) fail("true_label is required");
    if (mode == AttackMode::Impersonation) {
        if (!target_label || target_label->empty()) fail("target_label is required in impersonation mode");
        if (*target_label == true_label) fail("target_label must differ from true_label");
    }
    try {
        bounds.validate();
        reflectance.validate();
    } catch (const Error& e) {
        fail(e.what());
    }
}

bool SearchBox::contains(std::span<const double> params) const {
    if (params.size() != lower.size()) return false;
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (!(params[k] >= lower[k] && params[k] <= upper[k])) return false;
    }
    return true;
}

void SearchBox::clamp(std::span<double> params) const {
    for (std::size_t k = 0; k < params.size(); ++k) {
        params[k] = std::isnan(params[k]) ? lower[k] : std::clamp(params[k], lower[k], upper[k]);
    }
}

SearchBox make_search_box(const AttackConfig& cfg) {
    const auto size = PatchGenome::param_count(cfg.m, cfg.n);
    SearchBox box{std::vector<double>(size), std::vector<double>(size)};
    const auto& b = cfg.bounds;
    RngStream frozen(cfg.seed, kRunStreamId);
    for (int i = 0; i < cfg.m; ++i) {
        const auto xi = static_cast<std::size_t>(2 * i);
        if (cfg.search == SearchSpace::ShapeOnly) {
            const double x = frozen.uniform(b.x_l, b.x_r);
            const double y = frozen.uniform(b.y_d, b.y_u);
            box.lower[xi] = box.upper[xi] = x;
            box.lower[xi + 1] = box.upper[xi + 1] = y;
        } else {
            box.lower[xi] = b.x_l;
            box.upper[xi] = b.x_r;
            box.lower[xi + 1] = b.y_d;
            box.upper[xi + 1] = b.y_u;
        }
    }
    const double circle = (b.l_min + b.l_max) / 2.0;
    for (std::size_t k = static_cast<std::size_t>(2 * cfg.m); k < size; ++k) {
        if (cfg.search == SearchSpace::PositionOnly) {
            box.lower[k] = box.upper[k] = circle;
        } else {
            box.lower[k] = b.l_min;
            box.upper[k] = b.l_max;
        }
    }
    return box;
}

std::vector<RngStream> make_streams(const AttackConfig& cfg) {
    std::vector<RngStream> streams;
    streams.reserve(static_cast<std::size_t>(cfg.population));
    for (int i = 0; i < cfg.population; ++i) streams.emplace_back(cfg.seed, static_cast<std::uint64_t>(i));
    return streams;
}

std::vector<PatchGenome> init_population(const AttackConfig& cfg, const SearchBox& box, std::span<RngStream> streams) {
    if (streams.size() != static_cast<std::size_t>(cfg.population)) {
        throw Error(ErrorCode::InvalidConfig, "need one random stream per individual");
    }
    std::vector<PatchGenome> population;
    population.reserve(streams.size());
    for (auto& rng : streams) {
        std::vector<double> params(box.size());
        for (std::size_t k = 0; k < params.size(); ++k) params[k] = rng.uniform(box.lower[k], box.upper[k]);
        population.emplace_back(cfg.m, cfg.n, std::move(params));
    }
    return population;
}

PatchGenome mutate(std::span<const PatchGenome> population, int index, double f, RngStream& rng) {
    const auto size = population.size();
    if (size < 4) throw Error(ErrorCode::PopulationTooSmall, "DE/rand/1 needs a population of at least 4");
    if (index < 0 || static_cast<std::size_t>(index) >= size) throw Error(ErrorCode::IndexOutOfRange, "mutate index");

    std::size_t picks[3];
    for (int p = 0; p < 3; ++p) {
        for (;;) {
            const auto candidate = static_cast<std::size_t>(rng.below(size));
            if (candidate == static_cast<std::size_t>(index)) continue;
            if (std::find(picks, picks + p, candidate) != picks + p) continue;
            picks[p] = candidate;
            break;
        }
    }
    const auto a = population[picks[0]].params();
    const auto b = population[picks[1]].params();
    const auto c = population[picks[2]].params();
    if (a.size() != b.size() || a.size() != c.size()) throw Error(ErrorCode::ShapeMismatch, "population shapes differ");

    PatchGenome donor = population[picks[0]];
    auto out = donor.params();
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = a[k] + f * (b[k] - c[k]);
    return donor;
}

PatchGenome crossover(const PatchGenome& target, const PatchGenome& donor, double cr, RngStream& rng) {
    if (target.patches() != donor.patches() || target.vertices() != donor.vertices()) {
        throw Error(ErrorCode::ShapeMismatch, "crossover of genomes with different m, n");
    }
    PatchGenome trial = target;
    auto out = trial.params();
    const auto from = donor.params();
    const auto forced = static_cast<std::size_t>(rng.below(out.size()));
    for (std::size_t k = 0; k < out.size(); ++k) {
        const bool take = rng.next_unit() < cr;
        if (take || k == forced) out[k] = from[k];
    }
    return trial;
}

Choice select(double parent_fitness, double child_fitness) {
    return child_fitness < parent_fitness ? Choice::Child : Choice::Parent;
}

double objective(const ScoreVector& scores, const AttackConfig& cfg) {
    if (cfg.mode == AttackMode::Dodging) return scores.at(cfg.true_label);
    return 1.0 - scores.at(cfg.target_label.value());
}

bool attack_succeeded(const ScoreVector& scores, const AttackConfig& cfg) {
    const std::string winner = top1(scores);
    if (cfg.mode == AttackMode::Dodging) return winner != cfg.true_label;
    return winner == cfg.target_label.value();
}

NirImage adversarial_image(const NirImage& probe, const BinaryMask& face_mask, const PatchGenome& genome,
                           const AttackConfig& cfg) {
    const BinaryMask region = compose_mask(genome, face_mask, probe.width(), probe.height(), cfg.samples_per_segment);
    return apply_ink_model(probe, region, cfg.reflectance, cfg.ink_model);
}

Evaluation evaluate(const PatchGenome& genome, const FitnessContext& ctx) {
    ScoreVector scores = ctx.oracle.query(adversarial_image(ctx.probe, ctx.face_mask, genome, ctx.cfg));
    const double value = objective(scores, ctx.cfg);
    return {value, std::move(scores)};
}

double fitness(const PatchGenome& genome, const FitnessContext& ctx) { return evaluate(genome, ctx).fitness; }

AttackResult run_attack(const NirImage& probe, const BinaryMask& face_mask, Oracle& oracle, const AttackConfig& cfg,
                        const RunHooks& hooks) {
    cfg.validate();
    if (!face_mask.same_shape(probe.width(), probe.height())) {
        throw Error(ErrorCode::DimensionMismatch, "face mask and probe sizes differ");
    }
    const auto labels = oracle.labels();
    auto known = [&](const std::string& l) { return std::find(labels.begin(), labels.end(), l) != labels.end(); };
    if (!known(cfg.true_label)) throw Error(ErrorCode::InvalidLabel, "true label '" + cfg.true_label + "' not in gallery");
    if (cfg.mode == AttackMode::Impersonation && !known(*cfg.target_label)) {
        throw Error(ErrorCode::InvalidLabel, "target label '" + *cfg.target_label + "' not in gallery");
    }

    const std::uint64_t queries_before = oracle.query_count();
    AttackResult result;
    const FitnessContext ctx{probe, face_mask, oracle, cfg};

    try {
        result.clean_scores = oracle.query(probe);
        if (attack_succeeded(result.clean_scores, cfg)) {
            result.pre_success = true;
            result.success = true;
            result.stop_generation = -1;
            result.final_scores = result.clean_scores;
            result.best_fitness = objective(result.clean_scores, cfg);
            result.query_count = oracle.query_count() - queries_before;
            return result;
        }

        const SearchBox box = make_search_box(cfg);
        auto streams = make_streams(cfg);
        std::vector<PatchGenome> population = init_population(cfg, box, streams);
        std::vector<Evaluation> evals(population.size());
        const int q = cfg.population;

        parallel_for(q, cfg.workers, [&](int i) {
            evals[static_cast<std::size_t>(i)] = evaluate(population[static_cast<std::size_t>(i)], ctx);
        });
        if (hooks.on_evaluate) {
            for (const auto& g : population) hooks.on_evaluate(g);
        }

        std::vector<PatchGenome> trials(population.size());
        std::vector<Evaluation> trial_evals(population.size());
        for (int generation = 0;; ++generation) {
            const int best = best_index(evals);
            const Evaluation& top = evals[static_cast<std::size_t>(best)];
            double mean = 0.0;
            for (const auto& e : evals) mean += e.fitness;
            mean /= static_cast<double>(evals.size());

            GenerationStats stats{generation, top.fitness, mean, oracle.query_count() - queries_before,
                                  attack_succeeded(top.scores, cfg)};
            result.generations.push_back(stats);
            result.fitness_trace.push_back(top.fitness);
            result.best_genome = population[static_cast<std::size_t>(best)];
            result.best_fitness = top.fitness;
            result.final_scores = top.scores;
            result.success = stats.success;
            result.stop_generation = generation;
            result.query_count = stats.query_count;
            if (hooks.on_generation) hooks.on_generation(stats);

            if ((stats.success && cfg.early_stop) || generation >= cfg.max_iters) break;

            parallel_for(q, cfg.workers, [&](int i) {
                const auto idx = static_cast<std::size_t>(i);
                RngStream& rng = streams[idx];
                PatchGenome donor = mutate(population, i, cfg.mutation_f, rng);
                trials[idx] = clamp_to_box(crossover(population[idx], donor, cfg.crossover_cr, rng), box);
                trial_evals[idx] = evaluate(trials[idx], ctx);
            });
            if (hooks.on_evaluate) {
                for (const auto& g : trials) hooks.on_evaluate(g);
            }
            for (std::size_t i = 0; i < population.size(); ++i) {
                if (select(evals[i].fitness, trial_evals[i].fitness) == Choice::Child) {
                    population[i] = std::move(trials[i]);
                    evals[i] = std::move(trial_evals[i]);
                }
            }
        }
    } catch (const Error& e) {
        result.query_count = oracle.query_count() - queries_before;
        throw AttackAborted(e, std::move(result));
    }
    return result;
}

AttackResult run_attack(const NirImage& probe, const BinaryMask& face_mask, const Gallery& gallery,
                        const AttackConfig& cfg) {
    Oracle oracle(std::make_shared<BuiltinScorer>(gallery));
    return run_attack(probe, face_mask, oracle, cfg);
}

void write_trace_csv(const std::vector<GenerationStats>& trace, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    out << "generation,best_fitness,mean_fitness,query_count,success_flag\n";
    out << std::setprecision(17);
    for (const auto& g : trace) {
        out << g.generation << ',' << g.best_fitness << ',' << g.mean_fitness << ',' << g.query_count << ','
            << (g.success ? 1 : 0) << '\n';
    }
    if (!out) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
}

}  // namespace nirpf
