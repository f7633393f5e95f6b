#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nirpf/image.hpp"

namespace nirpf {

struct GalleryEntry {
    std::string label;
    NirImage image;
};

/// Enrolled identities. Labels are unique, images share one size, >= 2 entries.
class Gallery {
public:
    Gallery() = default;
    explicit Gallery(std::vector<GalleryEntry> entries);

    const std::vector<GalleryEntry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    int width() const noexcept { return entries_.front().image.width(); }
    int height() const noexcept { return entries_.front().image.height(); }

    bool contains(const std::string& label) const;
    const NirImage& image(const std::string& label) const;
    std::vector<std::string> labels() const;

private:
    std::vector<GalleryEntry> entries_;
};

/// Folder of <label>.pgm / <label>.png files, loaded in lexicographic order.
Gallery load_gallery(const std::filesystem::path& dir);
void save_gallery(const Gallery& gallery, const std::filesystem::path& dir);

/// Per-identity probabilities keyed by label.
class ScoreVector {
public:
    ScoreVector() = default;
    explicit ScoreVector(std::map<std::string, double> probs) : probs_(std::move(probs)) {}

    const std::map<std::string, double>& probs() const noexcept { return probs_; }
    double at(const std::string& label) const;
    bool empty() const noexcept { return probs_.empty(); }

    /// Nonnegative, finite, sums to 1 within tol; keys exactly `labels` when given.
    void validate(const std::vector<std::string>* labels = nullptr, double tol = 1e-6) const;

    friend bool operator==(const ScoreVector&, const ScoreVector&) = default;

private:
    std::map<std::string, double> probs_;
};

/// Label with the highest probability; ties go to the lexicographically smallest label.
std::string top1(const ScoreVector& scores);

inline constexpr int kEmbedSide = 16;
inline constexpr double kDefaultTemperature = 0.05;

/// 16x16 block average, mean removed, L2-normalized. Length 256.
std::vector<double> builtin_embed(const NirImage& img);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

/// Numerically stable softmax(logits / temperature).
std::vector<double> softmax(const std::vector<double>& logits, double temperature);

/// A black-box face identifier: probe in, per-identity confidences out.
/// Implementations must be callable from several threads at once.
class Scorer {
public:
    virtual ~Scorer() = default;
    virtual ScoreVector score(const NirImage& probe) = 0;
    virtual std::vector<std::string> labels() const = 0;
};

/// In-process template matcher: cosine similarity of builtin_embed features,
/// softmax over the gallery.
class BuiltinScorer final : public Scorer {
public:
    explicit BuiltinScorer(Gallery gallery, double temperature = kDefaultTemperature);

    ScoreVector score(const NirImage& probe) override;
    std::vector<std::string> labels() const override { return gallery_.labels(); }

    /// Raw cosine similarities in gallery order.
    std::vector<double> similarities(const NirImage& probe) const;
    const Gallery& gallery() const noexcept { return gallery_; }
    double temperature() const noexcept { return temperature_; }

private:
    Gallery gallery_;
    double temperature_;
    std::vector<std::vector<double>> templates_;
};

/// Free-function form of the builtin scorer.
ScoreVector score(const NirImage& probe, const Gallery& gallery, double temperature = kDefaultTemperature);

/// Where an external scorer lives: a child process talking over its stdio,
/// or a TCP server.
struct Endpoint {
    enum class Kind { Exec, Tcp };
    Kind kind = Kind::Exec;
    std::string command;  // Exec: whitespace-separated argv
    std::string host;     // Tcp
    std::uint16_t port = 0;

    /// Parses "exec:<command>" or "tcp:<host>:<port>".
    static Endpoint parse(const std::string& spec);
};

inline constexpr std::chrono::milliseconds kDefaultScorerTimeout{10'000};

/// Client side of the line-delimited JSON protocol. Requests on one
/// connection are serialized; use separate instances for parallel callers.
class ExternalScorer final : public Scorer {
public:
    ExternalScorer(const Endpoint& endpoint, std::string gallery_ref,
                   std::chrono::milliseconds timeout = kDefaultScorerTimeout);
    ~ExternalScorer() override;

    ExternalScorer(const ExternalScorer&) = delete;
    ExternalScorer& operator=(const ExternalScorer&) = delete;

    ScoreVector score(const NirImage& probe) override;
    std::vector<std::string> labels() const override { return labels_; }

private:
    class Channel;

    std::string round_trip(const std::string& line);

    std::unique_ptr<Channel> channel_;
    std::string gallery_ref_;
    std::chrono::milliseconds timeout_;
    std::vector<std::string> labels_;
    std::mutex mutex_;
};

/// One-shot convenience: connect, handshake, score, disconnect.
ScoreVector external_score(const NirImage& probe, const std::string& gallery_ref, const Endpoint& endpoint,
                           std::chrono::milliseconds timeout = kDefaultScorerTimeout);

// Wire format helpers, shared by the client and by test servers.
std::string encode_score_request(const NirImage& probe, const std::string& gallery_ref);
std::string encode_hello_request();
std::string encode_probs_response(const ScoreVector& scores);
std::string encode_labels_response(const std::vector<std::string>& labels);
std::string encode_error_response(const std::string& message);
/// Throws ProtocolViolation on malformed lines, ScorerFailure on {"error":...}.
ScoreVector decode_probs_response(const std::string& line);
std::vector<std::string> decode_labels_response(const std::string& line);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

/// Counts every query that reaches the wrapped scorer.
class Oracle {
public:
    explicit Oracle(std::shared_ptr<Scorer> scorer) : scorer_(std::move(scorer)) {}

    ScoreVector query(const NirImage& probe) {
        queries_.fetch_add(1, std::memory_order_relaxed);
        return scorer_->score(probe);
    }

    std::vector<std::string> labels() const { return scorer_->labels(); }
    std::uint64_t query_count() const noexcept { return queries_.load(std::memory_order_relaxed); }
    Scorer& scorer() noexcept { return *scorer_; }

private:
    std::shared_ptr<Scorer> scorer_;
    std::atomic<std::uint64_t> queries_{0};
};

}  // namespace nirpf
