#include "nirpf/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <openssl/evp.h>

#include <json.hpp>

#include "nirpf/error.hpp"

namespace nirpf {

Gallery::Gallery(std::vector<GalleryEntry> entries) : entries_(std::move(entries)) {
    if (entries_.size() < 2) throw Error(ErrorCode::InvalidGallery, "gallery needs at least 2 identities");
    std::set<std::string> seen;
    for (const auto& e : entries_) {
        if (e.label.empty()) throw Error(ErrorCode::InvalidGallery, "empty identity label");
        if (!seen.insert(e.label).second) throw Error(ErrorCode::InvalidGallery, "duplicate label " + e.label);
        if (!e.image.same_shape(entries_.front().image.width(), entries_.front().image.height())) {
            throw Error(ErrorCode::InvalidGallery, "gallery image " + e.label + " has a different size");
        }
    }
}

bool Gallery::contains(const std::string& label) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const GalleryEntry& e) { return e.label == label; });
}

const NirImage& Gallery::image(const std::string& label) const {
    for (const auto& e : entries_) {
        if (e.label == label) return e.image;
    }
    throw Error(ErrorCode::InvalidLabel, "no gallery identity " + label);
}

std::vector<std::string> Gallery::labels() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.label);
    return out;
}

Gallery load_gallery(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw Error(ErrorCode::IoFailure, "gallery directory " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto ext = entry.path().extension();
        if (entry.is_regular_file() && (ext == ".pgm" || ext == ".png")) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end(),
              [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
    std::vector<GalleryEntry> entries;
    for (const auto& f : files) entries.push_back({f.stem().string(), load_image(f)});
    return Gallery(std::move(entries));
}

void save_gallery(const Gallery& gallery, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    for (const auto& e : gallery.entries()) save_image(e.image, dir / (e.label + ".pgm"));
}

double ScoreVector::at(const std::string& label) const {
    const auto it = probs_.find(label);
    if (it == probs_.end()) throw Error(ErrorCode::InvalidLabel, "no score for label " + label);
    return it->second;
}

void ScoreVector::validate(const std::vector<std::string>* labels, double tol) const {
    if (probs_.empty()) throw Error(ErrorCode::ProtocolViolation, "empty score vector");
    double sum = 0.0;
    for (const auto& [label, p] : probs_) {
        if (!std::isfinite(p) || p < 0.0) throw Error(ErrorCode::ProtocolViolation, "invalid probability for " + label);
        sum += p;
    }
    if (std::abs(sum - 1.0) > tol) {
        throw Error(ErrorCode::ProtocolViolation, "probabilities sum to " + std::to_string(sum));
    }
    if (labels != nullptr) {
        const std::set<std::string> expected(labels->begin(), labels->end());
        if (expected.size() != probs_.size() ||
            !std::all_of(probs_.begin(), probs_.end(), [&](const auto& kv) { return expected.count(kv.first) == 1; })) {
            throw Error(ErrorCode::ProtocolViolation, "score labels differ from gallery labels");
        }
    }
}

std::string top1(const ScoreVector& scores) {
    // std::map iterates in lexicographic order, so strict > keeps the smallest label on ties.
    std::string best;
    double best_p = -1.0;
    for (const auto& [label, p] : scores.probs()) {
        if (p > best_p) {
            best = label;
            best_p = p;
        }
    }
    return best;
}

std::vector<double> builtin_embed(const NirImage& img) {
    const int w = img.width();
    const int h = img.height();
    if (w < kEmbedSide || h < kEmbedSide) {
        throw Error(ErrorCode::DimensionMismatch, "builtin embedder needs images of at least 16x16");
    }
    std::vector<double> feat(static_cast<std::size_t>(kEmbedSide * kEmbedSide));
    for (int by = 0; by < kEmbedSide; ++by) {
        const int y0 = by * h / kEmbedSide;
        const int y1 = (by + 1) * h / kEmbedSide;
        for (int bx = 0; bx < kEmbedSide; ++bx) {
            const int x0 = bx * w / kEmbedSide;
            const int x1 = (bx + 1) * w / kEmbedSide;
            double sum = 0.0;
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) sum += img.at(x, y);
            }
            feat[static_cast<std::size_t>(by * kEmbedSide + bx)] = sum / ((y1 - y0) * (x1 - x0));
        }
    }
    const double mean = std::accumulate(feat.begin(), feat.end(), 0.0) / static_cast<double>(feat.size());
    double norm2 = 0.0;
    for (double& v : feat) {
        v -= mean;
        norm2 += v * v;
    }
    const double norm = std::sqrt(norm2);
    if (norm <= 1e-12) {
        std::fill(feat.begin(), feat.end(), 0.0);
        return feat;
    }
    for (double& v : feat) v /= norm;
    return feat;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw Error(ErrorCode::DimensionMismatch, "feature lengths differ");
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na <= 0.0 || nb <= 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> softmax(const std::vector<double>& logits, double temperature) {
    if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidRange, "softmax temperature must be positive");
    std::vector<double> out(logits.size());
    if (logits.empty()) return out;
    const double peak = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp((logits[i] - peak) / temperature);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

BuiltinScorer::BuiltinScorer(Gallery gallery, double temperature)
    : gallery_(std::move(gallery)), temperature_(temperature) {
    if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidRange, "temperature must be positive");
    templates_.reserve(gallery_.size());
    for (const auto& e : gallery_.entries()) templates_.push_back(builtin_embed(e.image));
}

std::vector<double> BuiltinScorer::similarities(const NirImage& probe) const {
    if (!probe.same_shape(gallery_.width(), gallery_.height())) {
        throw Error(ErrorCode::DimensionMismatch, "probe size differs from gallery images");
    }
    const auto feat = builtin_embed(probe);
    std::vector<double> sims;
    sims.reserve(templates_.size());
    for (const auto& t : templates_) sims.push_back(cosine_similarity(feat, t));
    return sims;
}

ScoreVector BuiltinScorer::score(const NirImage& probe) {
    const auto probs = softmax(similarities(probe), temperature_);
    std::map<std::string, double> out;
    const auto& entries = gallery_.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) out.emplace(entries[i].label, probs[i]);
    return ScoreVector(std::move(out));
}

ScoreVector score(const NirImage& probe, const Gallery& gallery, double temperature) {
    return BuiltinScorer(gallery, temperature).score(probe);
}

// ---- wire format -----------------------------------------------------------

std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    if (text.size() % 4 != 0) throw Error(ErrorCode::ProtocolViolation, "base64 length not a multiple of 4");
    std::vector<std::uint8_t> out(3 * text.size() / 4);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
    if (n < 0) throw Error(ErrorCode::ProtocolViolation, "invalid base64");
    std::size_t padding = 0;
    if (!text.empty() && text.back() == '=') ++padding;
    if (text.size() > 1 && text[text.size() - 2] == '=') ++padding;
    out.resize(static_cast<std::size_t>(n) - padding);
    return out;
}

std::string encode_score_request(const NirImage& probe, const std::string& gallery_ref) {
    const auto pgm = encode_pgm(probe);
    return nlohmann::json{{"cmd", "score"}, {"probe", base64_encode(pgm)}, {"gallery", gallery_ref}}.dump();
}

std::string encode_hello_request() { return nlohmann::json{{"cmd", "hello"}}.dump(); }

std::string encode_probs_response(const ScoreVector& scores) {
    nlohmann::json probs = nlohmann::json::object();
    for (const auto& [label, p] : scores.probs()) probs[label] = p;
    return nlohmann::json{{"probs", probs}}.dump();
}

std::string encode_labels_response(const std::vector<std::string>& labels) {
    return nlohmann::json{{"labels", labels}}.dump();
}

std::string encode_error_response(const std::string& message) { return nlohmann::json{{"error", message}}.dump(); }

namespace {

nlohmann::json parse_response(const std::string& line) {
    nlohmann::json doc = nlohmann::json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
        throw Error(ErrorCode::ProtocolViolation, "response is not a JSON object");
    }
    if (const auto it = doc.find("error"); it != doc.end()) {
        throw Error(ErrorCode::ScorerFailure, it->is_string() ? it->get<std::string>() : it->dump());
    }
    return doc;
}

}  // namespace

ScoreVector decode_probs_response(const std::string& line) {
    const auto doc = parse_response(line);
    const auto it = doc.find("probs");
    if (it == doc.end() || !it->is_object()) throw Error(ErrorCode::ProtocolViolation, "response lacks \"probs\"");
    std::map<std::string, double> probs;
    for (const auto& [label, value] : it->items()) {
        if (!value.is_number()) throw Error(ErrorCode::ProtocolViolation, "non-numeric probability for " + label);
        probs.emplace(label, value.get<double>());
    }
    return ScoreVector(std::move(probs));
}

std::vector<std::string> decode_labels_response(const std::string& line) {
    const auto doc = parse_response(line);
    const auto it = doc.find("labels");
    if (it == doc.end() || !it->is_array() || it->empty()) {
        throw Error(ErrorCode::ProtocolViolation, "hello response lacks \"labels\"");
    }
    std::vector<std::string> labels;
    for (const auto& v : *it) {
        if (!v.is_string()) throw Error(ErrorCode::ProtocolViolation, "non-string label");
        labels.push_back(v.get<std::string>());
    }
    if (std::set<std::string>(labels.begin(), labels.end()).size() != labels.size()) {
        throw Error(ErrorCode::ProtocolViolation, "duplicate labels in hello response");
    }
    return labels;
}

}  // namespace nirpf
