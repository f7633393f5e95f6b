#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nirpf/image.hpp"
#include "nirpf/optimizer.hpp"
#include "nirpf/oracle.hpp"

namespace nirpf {

struct AttackCase {
    std::string id;
    NirImage probe;
    BinaryMask face_mask;
    std::string true_label;
    std::optional<std::string> target_label;
};

struct ExperimentRecord {
    std::string case_id;
    AttackMode mode = AttackMode::Dodging;
    bool success = false;
    bool pre_success = false;
    bool failed = false;  // oracle error; the message is kept in `error`
    std::uint64_t queries = 0;
    int stop_generation = 0;
    double clean_true_prob = 0.0;
    double final_true_prob = 0.0;
    double final_fitness = 0.0;
    std::string error;
    PatchGenome genome;
};

struct ExperimentReport {
    std::string name;
    std::vector<ExperimentRecord> records;  // sorted by case_id
    std::uint64_t seed = 0;
    std::string config_hash;

    std::size_t total() const noexcept { return records.size(); }
    std::size_t pre_success_count() const;
    std::size_t failed_count() const;
    /// Cases that count toward ASR: clean probe correctly handled and no oracle failure.
    std::size_t eligible() const;
    std::size_t successes() const;
    /// successes / eligible; empty when nothing is eligible.
    std::optional<double> asr() const;
    double mean_final_fitness() const;
};

/// Runs one attack per case. Oracle failures mark the case failed and continue.
ExperimentReport evaluate_asr(const std::vector<AttackCase>& cases, Oracle& oracle, const AttackConfig& cfg);

/// Same battery restricted to a search space (positions or shapes frozen).
ExperimentReport ablation_shapes(const std::vector<AttackCase>& cases, Oracle& oracle, const AttackConfig& cfg,
                                 SearchSpace space);

struct LrmAblation {
    ExperimentReport with_lrm;  // trained with the reflectance model
    ExperimentReport zeroing;   // trained with masked pixels set to zero
};

/// Trains each case under both ink models; success is always judged on the
/// reflectance-model rendering of the evolved genome.
LrmAblation ablation_lrm(const std::vector<AttackCase>& cases, Oracle& oracle, const AttackConfig& cfg);

/// Rotation about the image center, (w-1)/2, (h-1)/2. Positive angles turn
/// the content counter-clockwise on screen. Samples outside the source read 0.
NirImage rotate_image(const NirImage& img, double degrees);
BinaryMask rotate_mask(const BinaryMask& mask, double degrees);

struct PostureSample {
    double angle_deg = 0.0;
    bool success = false;
    ScoreVector scores;
};

struct PostureReport {
    std::vector<PostureSample> samples;
    double retention() const;
};

/// The ink is on the skin, so the patch raster turns with the face: the
/// perturbation mask is composed on the upright face and rotated alongside
/// the probe before the ink is applied.
PostureReport posture_sweep(const PatchGenome& genome, const NirImage& probe, const BinaryMask& face_mask,
                            Oracle& oracle, const AttackConfig& cfg, const std::vector<double>& angles_deg);

inline const std::vector<double> kDefaultPostureAngles{-30, -20, -10, 0, 10, 20, 30};

struct ToyDataset {
    Gallery gallery;
    std::vector<AttackCase> cases;
};

/// Synthetic identities (sinusoids plus blobs), elliptical face masks and
/// noisy probes that the builtin scorer identifies correctly.
ToyDataset make_toy_dataset(int count, int width, int height, std::uint64_t seed);

void save_dataset(const ToyDataset& dataset, const std::filesystem::path& dir);
ToyDataset load_dataset(const std::filesystem::path& dir);

/// case_id,mode,success,pre_success,failed,queries,stop_generation,clean_true_prob,final_true_prob,final_fitness
void write_report_csv(const ExperimentReport& report, const std::filesystem::path& path);

}  // namespace nirpf
