#include "nirpf/config.hpp"

#include <cstdio>
#include <fstream>

#include "nirpf/error.hpp"

namespace nirpf {
namespace {

[[noreturn]] void parse_fail(const std::string& msg) { throw Error(ErrorCode::ParseError, msg); }

template <typename T>
T field_or(const Json& doc, const char* key, T fallback) {
    const auto it = doc.find(key);
    if (it == doc.end() || it->is_null()) return fallback;
    try {
        return it->get<T>();
    } catch (const Json::exception&) {
        parse_fail(std::string("field \"") + key + "\" has the wrong type");
    }
}

std::filesystem::path path_field(const Json& doc, const char* key, const std::filesystem::path& base) {
    const auto it = doc.find(key);
    if (it == doc.end() || it->is_null()) return {};
    if (!it->is_string()) parse_fail(std::string("field \"") + key + "\" must be a path string");
    std::filesystem::path p = it->get<std::string>();
    if (p.is_relative() && !base.empty()) p = base / p;
    return p;
}

}  // namespace

Json genome_to_json(const PatchGenome& genome) {
    Json centers = Json::array();
    Json radii = Json::array();
    for (int i = 0; i < genome.patches(); ++i) {
        const Point c = genome.center(i);
        centers.push_back({c.x, c.y});
        Json row = Json::array();
        for (int j = 0; j < genome.vertices(); ++j) row.push_back(genome.radius(i, j));
        radii.push_back(std::move(row));
    }
    return Json{{"m", genome.patches()}, {"n", genome.vertices()}, {"centers", centers}, {"radii", radii}};
}

PatchGenome genome_from_json(const Json& doc) {
    if (!doc.is_object()) parse_fail("genome document must be an object");
    const int m = field_or<int>(doc, "m", 0);
    const int n = field_or<int>(doc, "n", 0);
    if (m < 1) parse_fail("genome field \"m\" must be >= 1");
    if (n < 3) parse_fail("genome field \"n\" must be >= 3");
    const auto centers = doc.find("centers");
    const auto radii = doc.find("radii");
    if (centers == doc.end() || !centers->is_array() || centers->size() != static_cast<std::size_t>(m)) {
        parse_fail("genome \"centers\" must hold m [x, y] pairs");
    }
    if (radii == doc.end() || !radii->is_array() || radii->size() != static_cast<std::size_t>(m)) {
        parse_fail("genome \"radii\" must hold m rows");
    }
    PatchGenome g(m, n);
    try {
        for (int i = 0; i < m; ++i) {
            const auto& c = (*centers)[static_cast<std::size_t>(i)];
            if (!c.is_array() || c.size() != 2) parse_fail("each center must be [x, y]");
            g.set_center(i, {c[0].get<double>(), c[1].get<double>()});
            const auto& row = (*radii)[static_cast<std::size_t>(i)];
            if (!row.is_array() || row.size() != static_cast<std::size_t>(n)) parse_fail("each radii row must hold n values");
            for (int j = 0; j < n; ++j) g.set_radius(i, j, row[static_cast<std::size_t>(j)].get<double>());
        }
    } catch (const Json::exception& e) {
        parse_fail(std::string("genome: ") + e.what());
    }
    return g;
}

PatchGenome load_genome(const std::filesystem::path& path) { return genome_from_json(load_json(path)); }

void save_genome(const PatchGenome& genome, const std::filesystem::path& path) {
    save_json(genome_to_json(genome), path);
}

Json reflectance_to_json(const ReflectanceParams& p) {
    return Json{{"intensity", p.intensity}, {"roughness", p.roughness}, {"f0", p.f0},
                {"diffuse", p.diffuse},     {"theta_l", p.theta_l},     {"theta_v", p.theta_v},
                {"ink_absorption", p.ink_absorption}};
}

ReflectanceParams reflectance_from_json(const Json& doc, ReflectanceParams p) {
    if (doc.is_null()) return p;
    if (!doc.is_object()) parse_fail("\"reflectance\" must be an object");
    p.intensity = field_or(doc, "intensity", p.intensity);
    p.roughness = field_or(doc, "roughness", p.roughness);
    p.f0 = field_or(doc, "f0", p.f0);
    p.diffuse = field_or(doc, "diffuse", p.diffuse);
    p.theta_l = field_or(doc, "theta_l", p.theta_l);
    p.theta_v = field_or(doc, "theta_v", p.theta_v);
    p.ink_absorption = field_or(doc, "ink_absorption", p.ink_absorption);
    return p;
}

std::string to_string(AttackMode mode) { return mode == AttackMode::Dodging ? "dodging" : "impersonation"; }
std::string to_string(InkModel model) { return model == InkModel::Reflectance ? "reflectance" : "zeroing"; }

std::string to_string(SearchSpace space) {
    switch (space) {
        case SearchSpace::Full: return "full";
        case SearchSpace::PositionOnly: return "position-only";
        case SearchSpace::ShapeOnly: return "shape-only";
    }
    return "full";
}

AttackMode parse_attack_mode(const std::string& text) {
    if (text == "dodging") return AttackMode::Dodging;
    if (text == "impersonation") return AttackMode::Impersonation;
    parse_fail("mode must be \"dodging\" or \"impersonation\", got \"" + text + "\"");
}

InkModel parse_ink_model(const std::string& text) {
    if (text == "reflectance") return InkModel::Reflectance;
    if (text == "zeroing") return InkModel::Zeroing;
    parse_fail("ink_model must be \"reflectance\" or \"zeroing\", got \"" + text + "\"");
}

SearchSpace parse_search_space(const std::string& text) {
    if (text == "full") return SearchSpace::Full;
    if (text == "position-only") return SearchSpace::PositionOnly;
    if (text == "shape-only") return SearchSpace::ShapeOnly;
    parse_fail("search must be full, position-only or shape-only, got \"" + text + "\"");
}

Json attack_config_to_json(const AttackConfig& cfg) {
    Json doc{{"mode", to_string(cfg.mode)},
             {"true_label", cfg.true_label},
             {"m", cfg.m},
             {"n", cfg.n},
             {"bounds",
              {{"l_min", cfg.bounds.l_min},
               {"l_max", cfg.bounds.l_max},
               {"x_l", cfg.bounds.x_l},
               {"x_r", cfg.bounds.x_r},
               {"y_d", cfg.bounds.y_d},
               {"y_u", cfg.bounds.y_u}}},
             {"population", cfg.population},
             {"max_iters", cfg.max_iters},
             {"mutation_f", cfg.mutation_f},
             {"crossover_cr", cfg.crossover_cr},
             {"seed", cfg.seed},
             {"reflectance", reflectance_to_json(cfg.reflectance)},
             {"ink_model", to_string(cfg.ink_model)},
             {"search", to_string(cfg.search)},
             {"early_stop", cfg.early_stop},
             {"workers", cfg.workers},
             {"samples_per_segment", cfg.samples_per_segment}};
    if (cfg.target_label) doc["target_label"] = *cfg.target_label;
    return doc;
}

AttackConfig attack_config_from_json(const Json& doc, AttackConfig cfg) {
    if (!doc.is_object()) parse_fail("configuration must be an object");
    cfg.mode = parse_attack_mode(field_or<std::string>(doc, "mode", to_string(cfg.mode)));
    cfg.true_label = field_or(doc, "true_label", cfg.true_label);
    if (doc.contains("target_label") && !doc["target_label"].is_null()) {
        cfg.target_label = field_or<std::string>(doc, "target_label", "");
    }
    cfg.m = field_or(doc, "m", cfg.m);
    cfg.n = field_or(doc, "n", cfg.n);
    if (const auto it = doc.find("bounds"); it != doc.end()) {
        if (!it->is_object()) parse_fail("\"bounds\" must be an object");
        cfg.bounds.l_min = field_or(*it, "l_min", cfg.bounds.l_min);
        cfg.bounds.l_max = field_or(*it, "l_max", cfg.bounds.l_max);
        cfg.bounds.x_l = field_or(*it, "x_l", cfg.bounds.x_l);
        cfg.bounds.x_r = field_or(*it, "x_r", cfg.bounds.x_r);
        cfg.bounds.y_d = field_or(*it, "y_d", cfg.bounds.y_d);
        cfg.bounds.y_u = field_or(*it, "y_u", cfg.bounds.y_u);
    }
    cfg.population = field_or(doc, "population", cfg.population);
    cfg.max_iters = field_or(doc, "max_iters", cfg.max_iters);
    cfg.mutation_f = field_or(doc, "mutation_f", cfg.mutation_f);
    cfg.crossover_cr = field_or(doc, "crossover_cr", cfg.crossover_cr);
    cfg.seed = field_or(doc, "seed", cfg.seed);
    if (const auto it = doc.find("reflectance"); it != doc.end()) cfg.reflectance = reflectance_from_json(*it, cfg.reflectance);
    cfg.ink_model = parse_ink_model(field_or<std::string>(doc, "ink_model", to_string(cfg.ink_model)));
    cfg.search = parse_search_space(field_or<std::string>(doc, "search", to_string(cfg.search)));
    cfg.early_stop = field_or(doc, "early_stop", cfg.early_stop);
    cfg.workers = field_or(doc, "workers", cfg.workers);
    cfg.samples_per_segment = field_or(doc, "samples_per_segment", cfg.samples_per_segment);
    return cfg;
}

std::string config_hash(const AttackConfig& cfg) {
    const std::string text = attack_config_to_json(cfg).dump();
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001B3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

RunConfig run_config_from_json(const Json& doc, const std::filesystem::path& base_dir) {
    if (!doc.is_object()) parse_fail("configuration must be an object");
    RunConfig rc;
    rc.raw = doc;
    rc.attack = attack_config_from_json(doc);
    if (const auto b = doc.find("bounds"); b != doc.end() && b->is_object()) {
        rc.explicit_center_bounds = b->contains("x_l") || b->contains("x_r") || b->contains("y_d") || b->contains("y_u");
    }
    rc.oracle = field_or(doc, "oracle", rc.oracle);
    rc.gallery_ref = field_or(doc, "gallery_ref", rc.gallery_ref);
    rc.temperature = field_or(doc, "temperature", rc.temperature);
    rc.timeout_ms = field_or(doc, "timeout_ms", rc.timeout_ms);
    rc.deterministic = field_or(doc, "deterministic", rc.deterministic);
    rc.probe = path_field(doc, "probe", base_dir);
    rc.face_mask = path_field(doc, "face_mask", base_dir);
    rc.gallery_dir = path_field(doc, "gallery_dir", base_dir);
    rc.out_dir = path_field(doc, "out_dir", base_dir);
    rc.genome = path_field(doc, "genome", base_dir);
    rc.dataset_dir = path_field(doc, "dataset_dir", base_dir);
    rc.suite = field_or(doc, "suite", rc.suite);
    rc.angles = field_or(doc, "angles", rc.angles);
    return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    return run_config_from_json(load_json(path), path.parent_path());
}

Json run_config_to_json(const RunConfig& rc) {
    Json doc = attack_config_to_json(rc.attack);
    doc["oracle"] = rc.oracle;
    doc["gallery_ref"] = rc.gallery_ref;
    doc["temperature"] = rc.temperature;
    doc["timeout_ms"] = rc.timeout_ms;
    doc["deterministic"] = rc.deterministic;
    doc["suite"] = rc.suite;
    doc["angles"] = rc.angles;
    auto put_path = [&](const char* key, const std::filesystem::path& p) {
        if (!p.empty()) doc[key] = std::filesystem::absolute(p).lexically_normal().string();
    };
    put_path("probe", rc.probe);
    put_path("face_mask", rc.face_mask);
    put_path("gallery_dir", rc.gallery_dir);
    put_path("out_dir", rc.out_dir);
    put_path("genome", rc.genome);
    put_path("dataset_dir", rc.dataset_dir);
    return doc;
}

Json load_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    Json doc = Json::parse(in, nullptr, false);
    if (doc.is_discarded()) parse_fail("malformed JSON in " + path.string());
    return doc;
}

void save_json(const Json& doc, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    out << doc.dump(2) << '\n';
    if (!out) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
}

}  // namespace nirpf
