#include "nirpf/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>

#include <json.hpp>

#include "nirpf/config.hpp"
#include "nirpf/error.hpp"

namespace nirpf {
namespace {

AttackConfig config_for_case(const AttackCase& c, const AttackConfig& cfg) {
    AttackConfig out = cfg;
    out.true_label = c.true_label;
    if (c.target_label) out.target_label = c.target_label;
    return out;
}

ExperimentRecord run_case(const AttackCase& c, Oracle& oracle, const AttackConfig& cfg) {
    ExperimentRecord rec;
    rec.case_id = c.id;
    rec.mode = cfg.mode;
    const AttackConfig case_cfg = config_for_case(c, cfg);
    try {
        const AttackResult r = run_attack(c.probe, c.face_mask, oracle, case_cfg);
        rec.success = r.success;
        rec.pre_success = r.pre_success;
        rec.queries = r.query_count;
        rec.stop_generation = r.stop_generation;
        rec.clean_true_prob = r.clean_scores.at(c.true_label);
        rec.final_true_prob = r.final_scores.at(c.true_label);
        rec.final_fitness = r.best_fitness;
        rec.genome = r.best_genome;
    } catch (const AttackAborted& e) {
        rec.failed = true;
        rec.error = e.message();
        rec.queries = e.partial().query_count;
        rec.stop_generation = e.partial().stop_generation;
    } catch (const Error& e) {
        if (e.code() == ErrorCode::InvalidConfig || e.code() == ErrorCode::InvalidLabel ||
            e.code() == ErrorCode::DimensionMismatch) {
            throw;
        }
        rec.failed = true;
        rec.error = e.message();
    }
    return rec;
}

ExperimentReport make_report(std::string name, std::vector<ExperimentRecord> records, const AttackConfig& cfg) {
    std::sort(records.begin(), records.end(),
              [](const ExperimentRecord& a, const ExperimentRecord& b) { return a.case_id < b.case_id; });
    ExperimentReport report;
    report.name = std::move(name);
    report.records = std::move(records);
    report.seed = cfg.seed;
    report.config_hash = config_hash(cfg);
    return report;
}

// Re-judges a trained record on the reflectance-model rendering of its genome.
void judge_with_reflectance(ExperimentRecord& rec, const AttackCase& c, Oracle& oracle, const AttackConfig& cfg) {
    if (rec.failed || rec.pre_success) return;
    AttackConfig eval_cfg = config_for_case(c, cfg);
    eval_cfg.ink_model = InkModel::Reflectance;
    try {
        const ScoreVector scores = oracle.query(adversarial_image(c.probe, c.face_mask, rec.genome, eval_cfg));
        rec.success = attack_succeeded(scores, eval_cfg);
        rec.final_true_prob = scores.at(c.true_label);
        rec.final_fitness = objective(scores, eval_cfg);
        rec.queries += 1;
    } catch (const Error& e) {
        rec.failed = true;
        rec.success = false;
        rec.error = e.message();
    }
}

double bilinear(const NirImage& img, double x, double y) {
    const double fx0 = std::floor(x);
    const double fy0 = std::floor(y);
    const double fx = x - fx0;
    const double fy = y - fy0;
    const int x0 = static_cast<int>(fx0);
    const int y0 = static_cast<int>(fy0);
    auto px = [&](int xi, int yi) {
        if (xi < 0 || yi < 0 || xi >= img.width() || yi >= img.height()) return 0.0;
        return img.at(xi, yi);
    };
    return px(x0, y0) * (1.0 - fx) * (1.0 - fy) + px(x0 + 1, y0) * fx * (1.0 - fy) +
           px(x0, y0 + 1) * (1.0 - fx) * fy + px(x0 + 1, y0 + 1) * fx * fy;
}

// Source position of destination pixel (x, y) under a rotation by `degrees`.
struct InverseRotation {
    double cx, cy, c, s;

    InverseRotation(int width, int height, double degrees)
        : cx((width - 1) / 2.0),
          cy((height - 1) / 2.0),
          c(std::cos(degrees * std::numbers::pi / 180.0)),
          s(std::sin(degrees * std::numbers::pi / 180.0)) {}

    Point source(int x, int y) const {
        const double dx = x - cx;
        const double dy = y - cy;
        // y points down, so a counter-clockwise turn on screen is clockwise in (x, y).
        return {c * dx - s * dy + cx, s * dx + c * dy + cy};
    }
};

double smooth_identity_pixel(double x, double y, int w, int h, const std::vector<double>& p) {
    // p: [a1, fx1, fy1, ph1, a2, fx2, fy2, ph2, (blob: cx, cy, sigma, amp) x 4]
    const double u = x / w;
    const double v = y / h;
    double value = 0.0;
    for (int k = 0; k < 2; ++k) {
        const double* s = &p[static_cast<std::size_t>(4 * k)];
        value += s[0] * std::sin(2.0 * std::numbers::pi * (s[1] * u + s[2] * v) + s[3]);
    }
    for (std::size_t b = 8; b + 3 < p.size(); b += 4) {
        const double dx = u - p[b];
        const double dy = v - p[b + 1];
        value += p[b + 3] * std::exp(-(dx * dx + dy * dy) / (2.0 * p[b + 2] * p[b + 2]));
    }
    return value;
}

bool in_ellipse(double x, double y, double cx, double cy, double rx, double ry) {
    const double dx = (x - cx) / rx;
    const double dy = (y - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
}

BinaryMask toy_face_mask(int w, int h) {
    BinaryMask mask(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            bool on = in_ellipse(x, y, 0.5 * (w - 1), 0.5 * (h - 1), 0.36 * w, 0.44 * h);
            const bool eye = in_ellipse(x, y, 0.35 * w, 0.40 * h, 0.08 * w, 0.05 * h) ||
                             in_ellipse(x, y, 0.65 * w, 0.40 * h, 0.08 * w, 0.05 * h);
            const bool mouth = in_ellipse(x, y, 0.5 * w, 0.72 * h, 0.13 * w, 0.05 * h);
            mask.set(x, y, on && !eye && !mouth);
        }
    }
    return mask;
}

NirImage toy_identity(int w, int h, RngStream& rng) {
    std::vector<double> params;
    for (int k = 0; k < 2; ++k) {
        params.push_back(rng.uniform(0.06, 0.12));
        params.push_back(rng.uniform(-2.0, 2.0));
        params.push_back(rng.uniform(-2.0, 2.0));
        params.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
    }
    for (int b = 0; b < 4; ++b) {
        params.push_back(rng.uniform(0.25, 0.75));
        params.push_back(rng.uniform(0.2, 0.8));
        params.push_back(rng.uniform(0.06, 0.14));
        const double amp = rng.uniform(0.12, 0.28);
        params.push_back(rng.uniform(0.0, 1.0) < 0.5 ? -amp : amp);
    }
    NirImage img(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // Shared face silhouette, then the identity-specific texture.
            const bool face = in_ellipse(x, y, 0.5 * (w - 1), 0.5 * (h - 1), 0.40 * w, 0.48 * h);
            const double base = face ? 0.55 : 0.2;
            img.at(x, y) = std::clamp(base + smooth_identity_pixel(x, y, w, h, params), 0.02, 0.98);
        }
    }
    return img;
}

std::string padded(const std::string& prefix, int k, int count) {
    const int digits = std::max(2, static_cast<int>(std::to_string(count - 1).size()));
    std::string num = std::to_string(k);
    return prefix + std::string(static_cast<std::size_t>(digits) - std::min<std::size_t>(num.size(), digits), '0') + num;
}

}  // namespace

std::size_t ExperimentReport::pre_success_count() const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.pre_success; }));
}

std::size_t ExperimentReport::failed_count() const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) { return r.failed; }));
}

std::size_t ExperimentReport::eligible() const { return total() - pre_success_count(); }

std::size_t ExperimentReport::successes() const {
    return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const auto& r) {
        return !r.pre_success && !r.failed && r.success && r.stop_generation >= 0;
    }));
}

std::optional<double> ExperimentReport::asr() const {
    const auto denom = eligible();
    if (denom == 0) return std::nullopt;
    return static_cast<double>(successes()) / static_cast<double>(denom);
}

double ExperimentReport::mean_final_fitness() const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : records) {
        if (r.pre_success || r.failed) continue;
        sum += r.final_fitness;
        ++n;
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

ExperimentReport evaluate_asr(const std::vector<AttackCase>& cases, Oracle& oracle, const AttackConfig& cfg) {
    std::vector<ExperimentRecord> records;
    records.reserve(cases.size());
    for (const auto& c : cases) records.push_back(run_case(c, oracle, cfg));
    return make_report("asr", std::move(records), cfg);
}

ExperimentReport ablation_shapes(const std::vector<AttackCase>& cases, Oracle& oracle, const AttackConfig& cfg,
                                 SearchSpace space) {
    AttackConfig restricted = cfg;
    restricted.search = space;
    std::vector<ExperimentRecord> records;
    for (const auto& c : cases) records.push_back(run_case(c, oracle, restricted));
    return make_report("ablation-" + to_string(space), std::move(records), restricted);
}

LrmAblation ablation_lrm(const std::vector<AttackCase>& cases, Oracle& oracle, const AttackConfig& cfg) {
    AttackConfig lrm = cfg;
    lrm.ink_model = InkModel::Reflectance;
    AttackConfig zero = cfg;
    zero.ink_model = InkModel::Zeroing;

    std::vector<ExperimentRecord> with_lrm;
    std::vector<ExperimentRecord> zeroing;
    for (const auto& c : cases) {
        with_lrm.push_back(run_case(c, oracle, lrm));
        judge_with_reflectance(with_lrm.back(), c, oracle, lrm);
        zeroing.push_back(run_case(c, oracle, zero));
        judge_with_reflectance(zeroing.back(), c, oracle, zero);
    }
    return {make_report("ablation-lrm/with_lrm", std::move(with_lrm), lrm),
            make_report("ablation-lrm/zeroing", std::move(zeroing), zero)};
}

NirImage rotate_image(const NirImage& img, double degrees) {
    const InverseRotation rot(img.width(), img.height(), degrees);
    NirImage out(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            const Point src = rot.source(x, y);
            out.at(x, y) = std::clamp(bilinear(img, src.x, src.y), 0.0, 1.0);
        }
    }
    return out;
}

BinaryMask rotate_mask(const BinaryMask& mask, double degrees) {
    const InverseRotation rot(mask.width(), mask.height(), degrees);
    BinaryMask out(mask.width(), mask.height());
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) {
            const Point src = rot.source(x, y);
            const double sx = std::round(src.x);
            const double sy = std::round(src.y);
            if (sx < 0 || sy < 0 || sx >= mask.width() || sy >= mask.height()) continue;
            out.set(x, y, mask.test(static_cast<int>(sx), static_cast<int>(sy)));
        }
    }
    return out;
}

double PostureReport::retention() const {
    if (samples.empty()) return 0.0;
    const auto kept = std::count_if(samples.begin(), samples.end(), [](const auto& s) { return s.success; });
    return static_cast<double>(kept) / static_cast<double>(samples.size());
}

PostureReport posture_sweep(const PatchGenome& genome, const NirImage& probe, const BinaryMask& face_mask,
                            Oracle& oracle, const AttackConfig& cfg, const std::vector<double>& angles_deg) {
    const BinaryMask region = compose_mask(genome, face_mask, probe.width(), probe.height(), cfg.samples_per_segment);
    PostureReport report;
    for (double angle : angles_deg) {
        const NirImage turned = rotate_image(probe, angle);
        const BinaryMask turned_region = rotate_mask(region, angle);
        PostureSample sample;
        sample.angle_deg = angle;
        sample.scores = oracle.query(apply_ink_model(turned, turned_region, cfg.reflectance, cfg.ink_model));
        sample.success = attack_succeeded(sample.scores, cfg);
        report.samples.push_back(std::move(sample));
    }
    return report;
}

ToyDataset make_toy_dataset(int count, int width, int height, std::uint64_t seed) {
    if (count < 2) throw Error(ErrorCode::InvalidConfig, "toy dataset needs count >= 2");
    constexpr int kMaxAttempts = 64;
    const BinaryMask face = toy_face_mask(width, height);
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        std::vector<GalleryEntry> entries;
        std::vector<AttackCase> cases;
        for (int k = 0; k < count; ++k) {
            const auto stream = static_cast<std::uint64_t>(attempt) * 1'000'003ULL + static_cast<std::uint64_t>(k);
            RngStream rng(seed, stream);
            NirImage identity = toy_identity(width, height, rng);
            NirImage probe = identity;
            for (double& v : probe.data()) v = std::clamp(v + 0.02 * rng.normal(), 0.0, 1.0);
            const std::string label = padded("id_", k, count);
            cases.push_back({padded("case_", k, count), std::move(probe), face, label, std::nullopt});
            entries.push_back({label, std::move(identity)});
        }
        ToyDataset ds{Gallery(std::move(entries)), std::move(cases)};
        BuiltinScorer scorer(ds.gallery);
        const bool clean_ok = std::all_of(ds.cases.begin(), ds.cases.end(),
                                          [&](const AttackCase& c) { return top1(scorer.score(c.probe)) == c.true_label; });
        if (clean_ok) return ds;
    }
    throw Error(ErrorCode::InvalidConfig, "could not synthesize a correctly identified toy dataset");
}

void save_dataset(const ToyDataset& dataset, const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "probes");
    fs::create_directories(dir / "masks");
    save_gallery(dataset.gallery, dir / "gallery");
    Json cases = Json::array();
    for (const auto& c : dataset.cases) {
        const std::string probe = "probes/" + c.id + ".pgm";
        const std::string mask = "masks/" + c.id + ".pgm";
        save_image(c.probe, dir / probe);
        save_mask(c.face_mask, dir / mask);
        Json entry{{"id", c.id}, {"probe", probe}, {"face_mask", mask}, {"true_label", c.true_label}};
        if (c.target_label) entry["target_label"] = *c.target_label;
        cases.push_back(std::move(entry));
    }
    save_json(Json{{"gallery", "gallery"}, {"cases", cases}}, dir / "dataset.json");
}

ToyDataset load_dataset(const std::filesystem::path& dir) {
    const Json doc = load_json(dir / "dataset.json");
    try {
        ToyDataset ds;
        ds.gallery = load_gallery(dir / doc.value("gallery", std::string("gallery")));
        for (const auto& entry : doc.at("cases")) {
            AttackCase c;
            c.id = entry.at("id").get<std::string>();
            c.probe = load_image(dir / entry.at("probe").get<std::string>());
            c.face_mask = load_mask(dir / entry.at("face_mask").get<std::string>());
            c.true_label = entry.at("true_label").get<std::string>();
            if (entry.contains("target_label")) c.target_label = entry.at("target_label").get<std::string>();
            ds.cases.push_back(std::move(c));
        }
        return ds;
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("dataset.json: ") + e.what());
    }
}

void write_report_csv(const ExperimentReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    out << "case_id,mode,success,pre_success,failed,queries,stop_generation,clean_true_prob,final_true_prob,"
           "final_fitness\n";
    out << std::setprecision(17);
    for (const auto& r : report.records) {
        out << r.case_id << ',' << to_string(r.mode) << ',' << r.success << ',' << r.pre_success << ',' << r.failed
            << ',' << r.queries << ',' << r.stop_generation << ',' << r.clean_true_prob << ',' << r.final_true_prob
            << ',' << r.final_fitness << '\n';
    }
    if (!out) throw Error(ErrorCode::IoFailure, "short write to " + path.string());
}

}  // namespace nirpf
