#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nirpf/geometry.hpp"
#include "nirpf/optimizer.hpp"
#include "nirpf/reflectance.hpp"

namespace nirpf {

using Json = nlohmann::json;

// Genome document: {"m": 4, "n": 8, "centers": [[x, y], ...], "radii": [[l, ...], ...]}
Json genome_to_json(const PatchGenome& genome);
/// Throws ParseError on schema violations (including m < 1 or n < 3).
PatchGenome genome_from_json(const Json& doc);
PatchGenome load_genome(const std::filesystem::path& path);
void save_genome(const PatchGenome& genome, const std::filesystem::path& path);

Json reflectance_to_json(const ReflectanceParams& params);
/// Missing fields keep the values already in `base`.
ReflectanceParams reflectance_from_json(const Json& doc, ReflectanceParams base = {});

std::string to_string(AttackMode mode);
std::string to_string(InkModel model);
std::string to_string(SearchSpace space);
AttackMode parse_attack_mode(const std::string& text);
InkModel parse_ink_model(const std::string& text);
SearchSpace parse_search_space(const std::string& text);

Json attack_config_to_json(const AttackConfig& cfg);
AttackConfig attack_config_from_json(const Json& doc, AttackConfig base = {});

/// Short stable digest (FNV-1a, hex) of the canonical JSON dump.
std::string config_hash(const AttackConfig& cfg);

/// Everything a CLI run needs. Paths are resolved relative to the config
/// document's directory.
struct RunConfig {
    AttackConfig attack;
    /// "builtin", "exec:<command>" or "tcp:<host>:<port>".
    std::string oracle = "builtin";
    std::string gallery_ref;
    double temperature = 0.05;
    int timeout_ms = 10'000;
    bool deterministic = true;
    /// Set when the bounds block gives explicit center limits; otherwise the
    /// probe's pixel grid is used.
    bool explicit_center_bounds = false;

    std::filesystem::path probe;
    std::filesystem::path face_mask;
    std::filesystem::path gallery_dir;
    std::filesystem::path out_dir;
    std::filesystem::path genome;
    std::filesystem::path dataset_dir;

    std::string suite = "asr";
    std::vector<double> angles;

    Json raw;  // the document as read, before defaults
};

RunConfig run_config_from_json(const Json& doc, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
/// Effective configuration with defaults merged; feeding it back reproduces the run.
Json run_config_to_json(const RunConfig& cfg);

Json load_json(const std::filesystem::path& path);
void save_json(const Json& doc, const std::filesystem::path& path);

}  // namespace nirpf
