#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "nirpf/config.hpp"
#include "nirpf/image.hpp"
#include "test_support.hpp"

using namespace nirpf;
using nirpf::testing::TempDir;
namespace fs = std::filesystem;

namespace {

std::string quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    return out + "'";
}

// Runs the CLI with `args`, capturing stdout+stderr into `log`.
int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = quote(NIRPF_CLI) + " " + args + " > " + quote(log.string()) + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

// Shared toy dataset for the whole file.
class Workspace {
public:
    Workspace() : dir_("cli") {
        REQUIRE(run_cli("make-dataset --out " + quote((dir_ / "ds").string()) +
                            " --count 4 --width 48 --height 48 --seed 7",
                        dir_ / "make.log") == 0);
    }
    const TempDir& dir() const { return dir_; }
    fs::path ds() const { return dir_ / "ds"; }

    // Attack config for case_01, written to `name`.
    fs::path attack_config(const std::string& name, const std::string& extra = "") const {
        const fs::path p = dir_ / name;
        write(p, R"({"true_label": "id_01", "probe": "ds/probes/case_01.pgm", "face_mask": "ds/masks/case_01.pgm",
                     "gallery_dir": "ds/gallery", "seed": 7)" +
                     extra + "}");
        return p;
    }

private:
    TempDir dir_;
};

Workspace& ws() {
    static Workspace w;
    return w;
}

}  // namespace

TEST_CASE("usage errors exit 1") {
    const fs::path log = ws().dir() / "usage.log";
    CHECK(run_cli("", log) == 1);
    CHECK(run_cli("frobnicate", log) == 1);
    CHECK(run_cli("attack --workers 0", log) == 1);
    CHECK(run_cli("attack --config " + quote((ws().dir() / "nope.json").string()), log) == 1);
}

TEST_CASE("attack on the toy instance, then render") {
    const fs::path cfg = ws().attack_config("attack.json");
    const fs::path out = ws().dir() / "attack_out";
    const fs::path log = ws().dir() / "attack.log";
    REQUIRE(run_cli("attack --config " + quote(cfg.string()) + " --out " + quote(out.string()), log) == 0);
    for (const char* f : {"genome.json", "adversarial.pgm", "overlay.pgm", "trace.csv", "effective_config.json"}) {
        CHECK(fs::exists(out / f));
    }
    CHECK_NOTHROW(load_genome(out / "genome.json"));
    CHECK(slurp(out / "trace.csv").rfind("generation,best_fitness,mean_fitness,query_count,success_flag\n", 0) == 0);

    const fs::path rendered = ws().dir() / "rendered.pgm";
    REQUIRE(run_cli("render --config " + quote((out / "effective_config.json").string()) + " --genome " +
                        quote((out / "genome.json").string()) + " --out " + quote(rendered.string()),
                    log) == 0);
    CHECK(slurp(rendered) == slurp(out / "adversarial.pgm"));

    SUBCASE("identical inputs give identical files") {
        const fs::path again = ws().dir() / "attack_again";
        REQUIRE(run_cli("attack --config " + quote(cfg.string()) + " --out " + quote(again.string()), log) == 0);
        for (const char* f : {"genome.json", "adversarial.pgm", "overlay.pgm", "trace.csv"}) {
            CHECK(slurp(again / f) == slurp(out / f));
        }
    }
    SUBCASE("worker count does not change the result") {
        const fs::path par = ws().dir() / "attack_workers";
        REQUIRE(run_cli("attack --config " + quote(cfg.string()) + " --workers 4 --out " + quote(par.string()), log) == 0);
        CHECK(slurp(par / "genome.json") == slurp(out / "genome.json"));
        CHECK(slurp(par / "trace.csv") == slurp(out / "trace.csv"));
    }
    SUBCASE("re-running from the echoed configuration reproduces the run") {
        const fs::path echo = ws().dir() / "attack_echo";
        REQUIRE(run_cli("attack --config " + quote((out / "effective_config.json").string()) + " --out " +
                            quote(echo.string()),
                        log) == 0);
        CHECK(slurp(echo / "genome.json") == slurp(out / "genome.json"));
        CHECK(slurp(echo / "trace.csv") == slurp(out / "trace.csv"));
        Json expected = load_json(out / "effective_config.json");
        expected["out_dir"] = fs::absolute(echo).lexically_normal().string();
        CHECK(load_json(echo / "effective_config.json") == expected);
    }
    SUBCASE("seed flag overrides the document") {
        const fs::path other = ws().dir() / "attack_seed";
        run_cli("attack --config " + quote(cfg.string()) + " --seed 8 --out " + quote(other.string()), log);
        CHECK(load_json(other / "effective_config.json")["seed"] == 8);
    }
}

TEST_CASE("attack error mapping") {
    const fs::path log = ws().dir() / "errors.log";
    SUBCASE("impersonation without a target") {
        const fs::path cfg = ws().attack_config("imp.json", R"(, "mode": "impersonation")");
        CHECK(run_cli("attack --config " + quote(cfg.string()) + " --out " + quote((ws().dir() / "x").string()), log) ==
              1);
        CHECK(slurp(log).find("target_label") != std::string::npos);
    }
    SUBCASE("unreachable external scorer") {
        const fs::path cfg = ws().attack_config("tcp.json");
        CHECK(run_cli("attack --config " + quote(cfg.string()) + " --oracle tcp:127.0.0.1:1 --out " +
                          quote((ws().dir() / "y").string()),
                      log) == 2);
    }
    SUBCASE("attack that cannot succeed exits 3") {
        // Radii pinned at the minimum and no evolution: the tiny patches cannot flip the identity.
        const fs::path cfg = ws().attack_config(
            "weak.json", R"(, "m": 1, "max_iters": 0, "population": 4, "bounds": {"l_min": 0.5, "l_max": 0.5})");
        CHECK(run_cli("attack --config " + quote(cfg.string()) + " --out " + quote((ws().dir() / "z").string()), log) ==
              3);
    }
    SUBCASE("external scorer over a child process") {
        const fs::path cfg = ws().attack_config("exec.json");
        const std::string oracle = std::string("exec:") + NIRPF_FAKE_SCORER + " --gallery " + ws().ds().string() +
                                   "/gallery";
        const int code = run_cli("attack --config " + quote(cfg.string()) + " --oracle " + quote(oracle) +
                                     " --out " + quote((ws().dir() / "ext").string()),
                                 log);
        CHECK(code == 0);
    }
}

TEST_CASE("render") {
    const fs::path log = ws().dir() / "render.log";
    const fs::path genome = ws().dir() / "g.json";
    save_genome(PatchGenome(1, 4, {20, 20, 6, 6, 6, 6}), genome);
    const std::string inputs = " --genome " + quote(genome.string()) + " --probe " +
                               quote((ws().ds() / "probes/case_00.pgm").string()) + " --mask " +
                               quote((ws().ds() / "masks/case_00.pgm").string());

    SUBCASE("zero absorption under unit reflectance reproduces the probe") {
        const fs::path cfg = ws().dir() / "unit.json";
        write(cfg, R"({"reflectance": {"intensity": 1, "f0": 0, "diffuse": 1, "theta_l": 0, "theta_v": 0}})");
        const fs::path out = ws().dir() / "unit.pgm";
        REQUIRE(run_cli("render --config " + quote(cfg.string()) + inputs + " --absorption 0 --out " +
                            quote(out.string()),
                        log) == 0);
        CHECK(slurp(out) == slurp(ws().ds() / "probes/case_00.pgm"));
    }
    SUBCASE("default ink darkens the patch") {
        const fs::path out = ws().dir() / "ink.pgm";
        REQUIRE(run_cli("render" + inputs + " --out " + quote(out.string()), log) == 0);
        CHECK(slurp(out) != slurp(ws().ds() / "probes/case_00.pgm"));
    }
    SUBCASE("m = 0 is rejected") {
        write(genome, R"({"m": 0, "n": 4, "centers": [], "radii": []})");
        CHECK(run_cli("render" + inputs + " --out " + quote((ws().dir() / "bad.pgm").string()), log) == 1);
    }
}

TEST_CASE("evaluate") {
    const fs::path log = ws().dir() / "eval.log";
    const fs::path cfg = ws().dir() / "eval.json";
    write(cfg, R"({"dataset_dir": "ds", "m": 2, "population": 10, "max_iters": 10, "seed": 3})");
    const std::string base = " --config " + quote(cfg.string()) + " --out ";

    SUBCASE("asr suite") {
        const fs::path out = ws().dir() / "eval_asr";
        REQUIRE(run_cli("evaluate --suite asr" + base + quote(out.string()), log) == 0);
        const Json summary = load_json(out / "summary.json");
        REQUIRE(summary["asr"].is_number());
        CHECK(summary["asr"].get<double>() >= 0.0);
        CHECK(summary["asr"].get<double>() <= 1.0);
        CHECK(summary["total"] == 4);
        CHECK(fs::exists(out / "report.csv"));
    }
    SUBCASE("ablation-lrm reports both variants") {
        const fs::path out = ws().dir() / "eval_lrm";
        REQUIRE(run_cli("evaluate --suite ablation-lrm" + base + quote(out.string()), log) == 0);
        const Json summary = load_json(out / "summary.json");
        CHECK(summary.contains("with_lrm"));
        CHECK(summary.contains("zeroing"));
    }
    SUBCASE("ablation-shapes reports three variants") {
        const fs::path out = ws().dir() / "eval_shapes";
        REQUIRE(run_cli("evaluate --suite ablation-shapes" + base + quote(out.string()), log) == 0);
        const Json summary = load_json(out / "summary.json");
        for (const char* v : {"full", "position-only", "shape-only"}) CHECK(summary["variants"].contains(v));
    }
    SUBCASE("posture needs a genome") {
        CHECK(run_cli("evaluate --suite posture" + base + quote((ws().dir() / "eval_p").string()), log) == 1);
    }
    SUBCASE("posture with a genome") {
        const fs::path genome = ws().dir() / "pg.json";
        save_genome(PatchGenome(1, 4, {20, 20, 8, 8, 8, 8}), genome);
        const fs::path out = ws().dir() / "eval_posture";
        REQUIRE(run_cli("evaluate --suite posture --genome " + quote(genome.string()) + base + quote(out.string()),
                        log) == 0);
        const Json summary = load_json(out / "summary.json");
        CHECK(summary["retention"].get<double>() >= 0.0);
        CHECK(summary["angles"].size() == 7);
    }
    SUBCASE("unknown suite") {
        CHECK(run_cli("evaluate --suite nonsense" + base + quote((ws().dir() / "eval_n").string()), log) == 1);
    }
}

TEST_CASE("simulate-brdf") {
    const fs::path log = ws().dir() / "brdf.log";
    const fs::path csv = ws().dir() / "brdf.csv";
    const fs::path cfg = ws().dir() / "brdf.json";
    write(cfg, R"({"reflectance": {"roughness": 0.5, "f0": 0.04, "diffuse": 0.5}})");

    REQUIRE(run_cli("simulate-brdf --config " + quote(cfg.string()) + " --theta-l 0 --theta-v 0 --out " +
                        quote(csv.string()),
                    log) == 0);
    std::istringstream lines(slurp(csv));
    std::string header, row;
    std::getline(lines, header);
    std::getline(lines, row);
    CHECK(header == "theta_l,theta_v,brdf");
    CHECK(std::stod(row.substr(row.rfind(',') + 1)) == doctest::Approx(0.51273239544735163).epsilon(1e-12));

    CHECK(run_cli("simulate-brdf --theta-l 0,1.5707963267948966 --theta-v 0.1", log) == 1);
    CHECK(run_cli("simulate-brdf --grid 5 --grid-max 1.5707963267948966", log) == 1);

    REQUIRE(run_cli("simulate-brdf --grid 50 --out " + quote(csv.string()), log) == 0);
    const std::string text = slurp(csv);
    CHECK(std::count(text.begin(), text.end(), '\n') == 2501);
}
