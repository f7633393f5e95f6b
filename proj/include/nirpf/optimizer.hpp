#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nirpf/error.hpp"
#include "nirpf/geometry.hpp"
#include "nirpf/image.hpp"
#include "nirpf/oracle.hpp"
#include "nirpf/reflectance.hpp"
#include "nirpf/rng.hpp"

namespace nirpf {

enum class AttackMode { Dodging, Impersonation };

/// Which genome parameters evolve. Frozen parameters get a degenerate
/// interval in the search box, so mutation and clamping keep them fixed.
enum class SearchSpace {
    Full,          // centers and radii
    PositionOnly,  // radii fixed at (l_min + l_max) / 2 (circles)
    ShapeOnly,     // centers frozen at random feasible draws
};

struct AttackConfig {
    AttackMode mode = AttackMode::Dodging;
    std::string true_label;
    std::optional<std::string> target_label;

    int m = 4;
    int n = 8;
    GenomeBounds bounds;
    int population = 40;
    int max_iters = 200;
    double mutation_f = 0.5;
    double crossover_cr = 0.9;
    std::uint64_t seed = 0;

    ReflectanceParams reflectance;
    InkModel ink_model = InkModel::Reflectance;
    SearchSpace search = SearchSpace::Full;
    /// Stop as soon as the best individual succeeds.
    bool early_stop = true;
    /// Threads used for trial evaluation. Results do not depend on it.
    int workers = 1;
    int samples_per_segment = kDefaultSamplesPerSegment;

    /// Throws InvalidConfig on any violated invariant.
    void validate() const;
};

/// Per-parameter feasible interval over the flat genome layout.
struct SearchBox {
    std::vector<double> lower;
    std::vector<double> upper;

    std::size_t size() const noexcept { return lower.size(); }
    bool contains(std::span<const double> params) const;
    void clamp(std::span<double> params) const;
};

/// Stream id used for run-level draws (e.g. frozen centers); individual i uses stream i.
inline constexpr std::uint64_t kRunStreamId = 0xFFFF'FFFF'0000'0001ULL;

SearchBox make_search_box(const AttackConfig& cfg);

std::vector<PatchGenome> init_population(const AttackConfig& cfg, const SearchBox& box,
                                         std::span<RngStream> streams);
/// One stream per individual derived from cfg.seed.
std::vector<RngStream> make_streams(const AttackConfig& cfg);

/// DE/rand/1 donor g_a + F (g_b - g_c), with a, b, c distinct and != index.
PatchGenome mutate(std::span<const PatchGenome> population, int index, double f, RngStream& rng);

/// Binomial crossover with one forced donor position.
PatchGenome crossover(const PatchGenome& target, const PatchGenome& donor, double cr, RngStream& rng);

enum class Choice { Parent, Child };

/// Child survives only when strictly better (lower).
Choice select(double parent_fitness, double child_fitness);

struct Evaluation {
    double fitness = 0.0;
    ScoreVector scores;
};

struct FitnessContext {
    const NirImage& probe;
    const BinaryMask& face_mask;
    Oracle& oracle;
    const AttackConfig& cfg;
};

/// Loss of a scored probe: p(true) for dodging, 1 - p(target) for impersonation.
double objective(const ScoreVector& scores, const AttackConfig& cfg);
bool attack_succeeded(const ScoreVector& scores, const AttackConfig& cfg);

NirImage adversarial_image(const NirImage& probe, const BinaryMask& face_mask, const PatchGenome& genome,
                           const AttackConfig& cfg);

Evaluation evaluate(const PatchGenome& genome, const FitnessContext& ctx);
double fitness(const PatchGenome& genome, const FitnessContext& ctx);

struct GenerationStats {
    int generation = 0;
    double best_fitness = 0.0;
    double mean_fitness = 0.0;
    std::uint64_t query_count = 0;
    bool success = false;
};

struct AttackResult {
    PatchGenome best_genome;
    /// Best fitness per generation; nonincreasing.
    std::vector<double> fitness_trace;
    std::vector<GenerationStats> generations;
    bool success = false;
    /// Set when the clean probe already satisfied the success predicate.
    bool pre_success = false;
    /// Generation where the loop stopped; -1 for a pre-success.
    int stop_generation = 0;
    std::uint64_t query_count = 0;
    ScoreVector clean_scores;
    ScoreVector final_scores;
    double best_fitness = 0.0;
};

/// Raised when the oracle fails mid-run; carries what was computed so far.
class AttackAborted : public Error {
public:
    AttackAborted(const Error& cause, AttackResult partial)
        : Error(cause.code(), cause.message()), partial_(std::move(partial)) {}
    const AttackResult& partial() const noexcept { return partial_; }

private:
    AttackResult partial_;
};

struct RunHooks {
    /// Called for every genome passed to the oracle, in evaluation order.
    std::function<void(const PatchGenome&)> on_evaluate;
    std::function<void(const GenerationStats&)> on_generation;
};

AttackResult run_attack(const NirImage& probe, const BinaryMask& face_mask, Oracle& oracle,
                        const AttackConfig& cfg, const RunHooks& hooks = {});
/// Builtin scorer over `gallery`.
AttackResult run_attack(const NirImage& probe, const BinaryMask& face_mask, const Gallery& gallery,
                        const AttackConfig& cfg);

/// generation,best_fitness,mean_fitness,query_count,success_flag
void write_trace_csv(const std::vector<GenerationStats>& trace, const std::filesystem::path& path);

}  // namespace nirpf
