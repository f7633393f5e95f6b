// nirpf command-line driver.
//
// Precedence for every setting: command-line flag, then the --config
// document, then the built-in default.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "nirpf/config.hpp"
#include "nirpf/error.hpp"
#include "nirpf/harness.hpp"
#include "nirpf/optimizer.hpp"
#include "nirpf/oracle.hpp"
#include "nirpf/reflectance.hpp"

namespace fs = std::filesystem;
using namespace nirpf;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kOracle = 2, kAttackFailed = 3 };

struct CommonFlags {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::string oracle;
    bool deterministic = false;
};

void add_common(CLI::App& cmd, CommonFlags& f) {
    cmd.add_option("--config", f.config, "JSON run configuration");
    cmd.add_option("--out", f.out, "output directory (file for render / simulate-brdf)");
    cmd.add_option("--seed", f.seed, "random seed");
    cmd.add_option("--workers", f.workers, "parallel fitness evaluations")->check(CLI::PositiveNumber);
    cmd.add_option("--oracle", f.oracle, "builtin | exec:<command> | tcp:<host:port>");
    cmd.add_flag("--deterministic", f.deterministic, "evaluate sequentially");
}

RunConfig resolve(const CommonFlags& f) {
    RunConfig rc = f.config.empty() ? run_config_from_json(Json::object()) : load_run_config(f.config);
    if (!f.out.empty()) rc.out_dir = f.out;
    if (f.seed) rc.attack.seed = *f.seed;
    if (f.workers) rc.attack.workers = *f.workers;
    if (!f.oracle.empty()) rc.oracle = f.oracle;
    if (f.deterministic) rc.deterministic = true;
    if (rc.deterministic) rc.attack.workers = 1;
    return rc;
}

void fit_center_bounds(RunConfig& rc, int width, int height) {
    if (rc.explicit_center_bounds) return;
    rc.attack.bounds = GenomeBounds::for_image(width, height, rc.attack.bounds.l_min, rc.attack.bounds.l_max);
}

void require_path(const fs::path& p, const char* field) {
    if (p.empty()) throw Error(ErrorCode::InvalidConfig, std::string("missing required field \"") + field + "\"");
    if (!fs::exists(p)) throw Error(ErrorCode::IoFailure, std::string(field) + ": no such file " + p.string());
}

std::shared_ptr<Scorer> make_scorer(const RunConfig& rc, const Gallery* gallery) {
    if (rc.oracle == "builtin") {
        if (gallery) return std::make_shared<BuiltinScorer>(*gallery, rc.temperature);
        require_path(rc.gallery_dir, "gallery_dir");
        return std::make_shared<BuiltinScorer>(load_gallery(rc.gallery_dir), rc.temperature);
    }
    const Endpoint endpoint = Endpoint::parse(rc.oracle);
    spdlog::info("connecting to external scorer {}", rc.oracle);
    return std::make_shared<ExternalScorer>(endpoint, rc.gallery_ref, std::chrono::milliseconds(rc.timeout_ms));
}

int exit_code_for(const Error& e) {
    switch (e.code()) {
        case ErrorCode::ScorerFailure:
        case ErrorCode::Timeout:
        case ErrorCode::ProtocolViolation:
            return kOracle;
        default:
            return kUsage;
    }
}

Json scores_json(const ScoreVector& sv) {
    Json out = Json::object();
    for (const auto& [label, p] : sv.probs()) out[label] = p;
    return out;
}

Json asr_json(const std::optional<double>& asr) { return asr ? Json(*asr) : Json(nullptr); }

Json report_summary(const ExperimentReport& r) {
    return Json{{"asr", asr_json(r.asr())},
                {"total", r.total()},
                {"eligible", r.eligible()},
                {"successes", r.successes()},
                {"pre_success", r.pre_success_count()},
                {"failed", r.failed_count()},
                {"mean_final_fitness", r.mean_final_fitness()},
                {"seed", r.seed},
                {"config_hash", r.config_hash}};
}

int cmd_attack(const CommonFlags& flags) {
    RunConfig rc = resolve(flags);
    require_path(rc.probe, "probe");
    require_path(rc.face_mask, "face_mask");
    if (rc.out_dir.empty()) throw Error(ErrorCode::InvalidConfig, "missing required field \"out_dir\" (or --out)");
    const NirImage probe = load_image(rc.probe);
    const BinaryMask face = load_mask(rc.face_mask);
    fit_center_bounds(rc, probe.width(), probe.height());
    rc.attack.validate();

    Oracle oracle(make_scorer(rc, nullptr));
    fs::create_directories(rc.out_dir);
    save_json(run_config_to_json(rc), rc.out_dir / "effective_config.json");

    RunHooks hooks;
    hooks.on_generation = [](const GenerationStats& g) {
        spdlog::debug("generation {} best {:.6f} mean {:.6f} queries {}", g.generation, g.best_fitness,
                      g.mean_fitness, g.query_count);
    };
    AttackResult result;
    try {
        result = run_attack(probe, face, oracle, rc.attack, hooks);
    } catch (const AttackAborted& e) {
        write_trace_csv(e.partial().generations, rc.out_dir / "trace.csv");
        throw;
    }

    write_trace_csv(result.generations, rc.out_dir / "trace.csv");
    Json summary{{"success", result.success},
                 {"pre_success", result.pre_success},
                 {"stop_generation", result.stop_generation},
                 {"query_count", result.query_count},
                 {"best_fitness", result.best_fitness},
                 {"clean_scores", scores_json(result.clean_scores)},
                 {"final_scores", scores_json(result.final_scores)}};
    if (result.pre_success) {
        // Nothing was evolved; the clean probe already satisfies the goal.
        save_image(probe, rc.out_dir / "adversarial.pgm");
        save_image(probe, rc.out_dir / "overlay.pgm");
        spdlog::warn("clean probe already satisfies the attack goal; no genome written");
    } else {
        save_genome(result.best_genome, rc.out_dir / "genome.json");
        save_image(adversarial_image(probe, face, result.best_genome, rc.attack), rc.out_dir / "adversarial.pgm");
        const BinaryMask region =
            compose_mask(result.best_genome, face, probe.width(), probe.height(), rc.attack.samples_per_segment);
        save_image(overlay_mask(probe, region), rc.out_dir / "overlay.pgm");
    }
    save_json(summary, rc.out_dir / "result.json");
    spdlog::info("attack {} after {} queries (fitness {:.6f})", result.success ? "succeeded" : "failed",
                 result.query_count, result.best_fitness);
    std::cout << (result.success ? "success" : "failure") << " queries=" << result.query_count
              << " fitness=" << result.best_fitness << '\n';
    return result.success ? kOk : kAttackFailed;
}

struct RenderFlags {
    std::string genome;
    std::string probe;
    std::string mask;
    std::optional<double> absorption;
};

int cmd_render(const CommonFlags& flags, const RenderFlags& rf) {
    RunConfig rc = resolve(flags);
    if (!rf.genome.empty()) rc.genome = rf.genome;
    if (!rf.probe.empty()) rc.probe = rf.probe;
    if (!rf.mask.empty()) rc.face_mask = rf.mask;
    if (rf.absorption) rc.attack.reflectance.ink_absorption = *rf.absorption;
    require_path(rc.genome, "genome");
    require_path(rc.probe, "probe");
    require_path(rc.face_mask, "face_mask");
    if (flags.out.empty()) throw Error(ErrorCode::InvalidConfig, "render needs --out <image path>");
    rc.attack.reflectance.validate();

    const PatchGenome genome = load_genome(rc.genome);
    const NirImage probe = load_image(rc.probe);
    const BinaryMask face = load_mask(rc.face_mask);
    if (!face.same_shape(probe.width(), probe.height())) {
        throw Error(ErrorCode::DimensionMismatch, "face mask and probe sizes differ");
    }
    const fs::path out = flags.out;
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_image(adversarial_image(probe, face, genome, rc.attack), out);
    return kOk;
}

struct EvaluateFlags {
    std::string suite;
    std::string genome;
    std::string dataset;
};

void save_case_images(const std::vector<AttackCase>& cases, const ExperimentReport& report, const AttackConfig& cfg,
                      const fs::path& dir) {
    fs::create_directories(dir);
    for (std::size_t k = 0; k < cases.size(); ++k) {
        const AttackCase& c = cases[k];
        const auto rec = std::find_if(report.records.begin(), report.records.end(),
                                      [&](const ExperimentRecord& r) { return r.case_id == c.id; });
        if (rec == report.records.end() || rec->failed || rec->pre_success) continue;
        AttackConfig case_cfg = cfg;
        case_cfg.true_label = c.true_label;
        save_image(adversarial_image(c.probe, c.face_mask, rec->genome, case_cfg), dir / (c.id + "_adversarial.pgm"));
        const BinaryMask region =
            compose_mask(rec->genome, c.face_mask, c.probe.width(), c.probe.height(), cfg.samples_per_segment);
        save_image(overlay_mask(c.probe, region), dir / (c.id + "_overlay.pgm"));
    }
}

void write_posture_csv(const std::vector<std::pair<std::string, PostureReport>>& reports, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    out << "case_id,angle_deg,success\n";
    for (const auto& [id, report] : reports) {
        for (const auto& s : report.samples) out << id << ',' << s.angle_deg << ',' << (s.success ? 1 : 0) << '\n';
    }
}

int cmd_evaluate(const CommonFlags& flags, const EvaluateFlags& ef) {
    RunConfig rc = resolve(flags);
    if (!ef.suite.empty()) rc.suite = ef.suite;
    if (!ef.genome.empty()) rc.genome = ef.genome;
    if (!ef.dataset.empty()) rc.dataset_dir = ef.dataset;
    if (rc.out_dir.empty()) throw Error(ErrorCode::InvalidConfig, "missing required field \"out_dir\" (or --out)");
    if (rc.suite != "asr" && rc.suite != "ablation-shapes" && rc.suite != "ablation-lrm" && rc.suite != "posture") {
        throw Error(ErrorCode::InvalidConfig,
                    "suite must be asr, ablation-shapes, ablation-lrm or posture, got \"" + rc.suite + "\"");
    }
    if (rc.suite == "posture") require_path(rc.genome, "genome");

    std::vector<AttackCase> cases;
    std::optional<Gallery> gallery;
    if (!rc.dataset_dir.empty()) {
        require_path(rc.dataset_dir, "dataset_dir");
        ToyDataset ds = load_dataset(rc.dataset_dir);
        cases = std::move(ds.cases);
        gallery = std::move(ds.gallery);
    } else if (!rc.probe.empty()) {
        require_path(rc.probe, "probe");
        require_path(rc.face_mask, "face_mask");
        cases.push_back({"case", load_image(rc.probe), load_mask(rc.face_mask), rc.attack.true_label,
                         rc.attack.target_label});
    } else {
        throw Error(ErrorCode::InvalidConfig, "missing required field \"dataset_dir\" (or probe and face_mask)");
    }
    if (cases.empty()) throw Error(ErrorCode::InvalidConfig, "dataset has no cases");
    if (!gallery && rc.oracle == "builtin") {
        require_path(rc.gallery_dir, "gallery_dir");
        gallery = load_gallery(rc.gallery_dir);
    }
    fit_center_bounds(rc, cases.front().probe.width(), cases.front().probe.height());
    // Labels come from each case; validate the rest with a placeholder.
    {
        AttackConfig probe_cfg = rc.attack;
        if (probe_cfg.true_label.empty()) probe_cfg.true_label = cases.front().true_label;
        if (probe_cfg.mode == AttackMode::Impersonation && !probe_cfg.target_label) {
            probe_cfg.target_label = cases.front().target_label;
        }
        probe_cfg.validate();
    }

    Oracle oracle(make_scorer(rc, gallery ? &*gallery : nullptr));
    fs::create_directories(rc.out_dir);
    save_json(run_config_to_json(rc), rc.out_dir / "effective_config.json");

    Json summary{{"suite", rc.suite}};
    if (rc.suite == "asr") {
        const ExperimentReport report = evaluate_asr(cases, oracle, rc.attack);
        write_report_csv(report, rc.out_dir / "report.csv");
        save_case_images(cases, report, rc.attack, rc.out_dir / "cases");
        summary.update(report_summary(report));
    } else if (rc.suite == "ablation-shapes") {
        Json variants = Json::object();
        for (SearchSpace space : {SearchSpace::Full, SearchSpace::PositionOnly, SearchSpace::ShapeOnly}) {
            const ExperimentReport report = ablation_shapes(cases, oracle, rc.attack, space);
            write_report_csv(report, rc.out_dir / ("report_" + to_string(space) + ".csv"));
            variants[to_string(space)] = report_summary(report);
        }
        summary["variants"] = variants;
    } else if (rc.suite == "ablation-lrm") {
        const LrmAblation ab = ablation_lrm(cases, oracle, rc.attack);
        write_report_csv(ab.with_lrm, rc.out_dir / "report_with_lrm.csv");
        write_report_csv(ab.zeroing, rc.out_dir / "report_zeroing.csv");
        summary["with_lrm"] = asr_json(ab.with_lrm.asr());
        summary["zeroing"] = asr_json(ab.zeroing.asr());
        summary["variants"] = Json{{"with_lrm", report_summary(ab.with_lrm)}, {"zeroing", report_summary(ab.zeroing)}};
    } else {
        const PatchGenome genome = load_genome(rc.genome);
        const std::vector<double> angles = rc.angles.empty() ? kDefaultPostureAngles : rc.angles;
        std::vector<std::pair<std::string, PostureReport>> reports;
        Json per_case = Json::object();
        for (const AttackCase& c : cases) {
            AttackConfig case_cfg = rc.attack;
            case_cfg.true_label = c.true_label;
            if (c.target_label) case_cfg.target_label = c.target_label;
            PostureReport pr = posture_sweep(genome, c.probe, c.face_mask, oracle, case_cfg, angles);
            per_case[c.id] = pr.retention();
            reports.emplace_back(c.id, std::move(pr));
        }
        write_posture_csv(reports, rc.out_dir / "report.csv");
        double mean = 0.0;
        for (const auto& [id, pr] : reports) mean += pr.retention();
        summary["retention"] = mean / static_cast<double>(reports.size());
        summary["per_case"] = per_case;
        summary["angles"] = angles;
    }
    save_json(summary, rc.out_dir / "summary.json");
    std::cout << summary.dump() << '\n';
    return kOk;
}

struct BrdfFlags {
    std::vector<double> theta_l;
    std::vector<double> theta_v;
    std::optional<int> grid;
    double grid_max = 1.5;
};

int cmd_simulate_brdf(const CommonFlags& flags, const BrdfFlags& bf) {
    const RunConfig rc = resolve(flags);
    ReflectanceParams params = rc.attack.reflectance;
    std::vector<double> ls = bf.theta_l;
    std::vector<double> vs = bf.theta_v;
    if (bf.grid) {
        if (*bf.grid < 1) throw Error(ErrorCode::InvalidConfig, "--grid must be >= 1");
        ls.clear();
        for (int k = 0; k < *bf.grid; ++k) ls.push_back(*bf.grid == 1 ? 0.0 : bf.grid_max * k / (*bf.grid - 1));
        vs = ls;
    }
    if (ls.empty()) ls.push_back(params.theta_l);
    if (vs.empty()) vs.push_back(params.theta_v);

    std::ostringstream csv;
    csv << "theta_l,theta_v,brdf\n" << std::setprecision(17);
    for (double tl : ls) {
        for (double tv : vs) {
            params.theta_l = tl;
            params.theta_v = tv;
            csv << tl << ',' << tv << ',' << brdf(params) << '\n';
        }
    }
    if (flags.out.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream out(flags.out, std::ios::trunc);
        if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + flags.out);
        out << csv.str();
    }
    return kOk;
}

struct DatasetFlags {
    int count = 10;
    int width = 64;
    int height = 64;
};

int cmd_make_dataset(const CommonFlags& flags, const DatasetFlags& df) {
    const RunConfig rc = resolve(flags);
    if (rc.out_dir.empty()) throw Error(ErrorCode::InvalidConfig, "make-dataset needs --out <directory>");
    const std::uint64_t seed = flags.seed.value_or(1);
    const ToyDataset ds = make_toy_dataset(df.count, df.width, df.height, seed);
    save_dataset(ds, rc.out_dir);
    std::cout << "wrote " << ds.cases.size() << " cases to " << rc.out_dir.string() << '\n';
    return kOk;
}

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("nirpf");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    spdlog::set_level(spdlog::level::warn);
    if (const char* env = std::getenv("NIRPF_LOG")) spdlog::set_level(spdlog::level::from_str(env));
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();
    CLI::App app{"Adversarial ink patches against NIR face recognition"};
    app.require_subcommand(1);

    CommonFlags attack_flags, render_flags, eval_flags, brdf_flags, data_flags;
    RenderFlags rf;
    EvaluateFlags ef;
    BrdfFlags bf;
    DatasetFlags df;

    auto* attack = app.add_subcommand("attack", "evolve a patch genome against one probe");
    add_common(*attack, attack_flags);

    auto* render = app.add_subcommand("render", "re-create the adversarial image from a genome");
    add_common(*render, render_flags);
    render->add_option("--genome", rf.genome, "genome JSON");
    render->add_option("--probe", rf.probe, "probe image");
    render->add_option("--mask", rf.mask, "face mask image");
    render->add_option("--absorption", rf.absorption, "override the ink absorption");

    auto* evaluate = app.add_subcommand("evaluate", "run an experiment suite over a dataset");
    add_common(*evaluate, eval_flags);
    evaluate->add_option("--suite", ef.suite, "asr | ablation-shapes | ablation-lrm | posture");
    evaluate->add_option("--genome", ef.genome, "genome JSON (posture suite)");
    evaluate->add_option("--dataset", ef.dataset, "dataset directory");

    auto* simulate = app.add_subcommand("simulate-brdf", "tabulate the reflectance model over angles");
    add_common(*simulate, brdf_flags);
    simulate->add_option("--theta-l", bf.theta_l, "light angles in radians")->delimiter(',');
    simulate->add_option("--theta-v", bf.theta_v, "view angles in radians")->delimiter(',');
    simulate->add_option("--grid", bf.grid, "N x N grid over [0, grid-max]");
    simulate->add_option("--grid-max", bf.grid_max, "largest grid angle in radians");

    auto* dataset = app.add_subcommand("make-dataset", "write a synthetic toy dataset");
    add_common(*dataset, data_flags);
    dataset->add_option("--count", df.count, "identities");
    dataset->add_option("--width", df.width);
    dataset->add_option("--height", df.height);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*attack) return cmd_attack(attack_flags);
        if (*render) return cmd_render(render_flags, rf);
        if (*evaluate) return cmd_evaluate(eval_flags, ef);
        if (*simulate) return cmd_simulate_brdf(brdf_flags, bf);
        if (*dataset) return cmd_make_dataset(data_flags, df);
    } catch (const Error& e) {
        std::cerr << "nirpf: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "nirpf: " << e.what() << '\n';
        return kUsage;
    }
    return kUsage;
}
