#include <cerrno>
#include <csignal>
#include <cstring>
#include <mutex>
#include <sstream>

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "nirpf/error.hpp"
#include "nirpf/oracle.hpp"

namespace nirpf {
namespace {

constexpr std::size_t kMaxLine = 64u << 20;

void ignore_sigpipe() {
    static std::once_flag once;
    std::call_once(once, [] { std::signal(SIGPIPE, SIG_IGN); });
}

using Clock = std::chrono::steady_clock;

int remaining_ms(Clock::time_point deadline) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    return left > 0 ? static_cast<int>(left) : 0;
}

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> words;
    for (std::string w; in >> w;) words.push_back(w);
    return words;
}

}  // namespace

Endpoint Endpoint::parse(const std::string& spec) {
    Endpoint ep;
    if (spec.rfind("exec:", 0) == 0) {
        ep.kind = Kind::Exec;
        ep.command = spec.substr(5);
        if (split_words(ep.command).empty()) throw Error(ErrorCode::InvalidConfig, "exec endpoint without a command");
        return ep;
    }
    if (spec.rfind("tcp:", 0) == 0) {
        const std::string rest = spec.substr(4);
        const auto colon = rest.rfind(':');
        if (colon == std::string::npos || colon == 0 || colon + 1 == rest.size()) {
            throw Error(ErrorCode::InvalidConfig, "tcp endpoint must be tcp:<host>:<port>");
        }
        ep.kind = Kind::Tcp;
        ep.host = rest.substr(0, colon);
        const std::string port = rest.substr(colon + 1);
        char* end = nullptr;
        const long value = std::strtol(port.c_str(), &end, 10);
        if (*end != '\0' || value <= 0 || value > 65535) throw Error(ErrorCode::InvalidConfig, "bad tcp port " + port);
        ep.port = static_cast<std::uint16_t>(value);
        return ep;
    }
    throw Error(ErrorCode::InvalidConfig, "unknown scorer endpoint '" + spec + "'");
}

// Line-oriented duplex byte stream: a child's stdio pipes or a TCP socket.
class ExternalScorer::Channel {
public:
    explicit Channel(const Endpoint& ep) {
        ignore_sigpipe();
        if (ep.kind == Endpoint::Kind::Exec) {
            spawn(ep.command);
        } else {
            connect_tcp(ep.host, ep.port);
        }
    }

    ~Channel() {
        if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
        if (read_fd_ >= 0) ::close(read_fd_);
        if (child_ > 0) {
            ::kill(child_, SIGTERM);
            int status = 0;
            ::waitpid(child_, &status, 0);
        }
    }

    Channel(const Channel&) = delete;
    Channel& operator=(const Channel&) = delete;

    void write_line(const std::string& line, Clock::time_point deadline) {
        std::string payload = line;
        payload.push_back('\n');
        std::size_t sent = 0;
        while (sent < payload.size()) {
            pollfd pfd{write_fd_, POLLOUT, 0};
            const int ready = ::poll(&pfd, 1, remaining_ms(deadline));
            if (ready == 0) throw Error(ErrorCode::Timeout, "timed out sending request to scorer");
            if (ready < 0) {
                if (errno == EINTR) continue;
                throw Error(ErrorCode::ScorerFailure, std::string("poll: ") + std::strerror(errno));
            }
            const ssize_t n = socket_ ? ::send(write_fd_, payload.data() + sent, payload.size() - sent, MSG_NOSIGNAL)
                                      : ::write(write_fd_, payload.data() + sent, payload.size() - sent);
            if (n < 0) {
                if (errno == EINTR || errno == EAGAIN) continue;
                throw Error(ErrorCode::ScorerFailure, std::string("scorer connection lost: ") + std::strerror(errno));
            }
            sent += static_cast<std::size_t>(n);
        }
    }

    std::string read_line(Clock::time_point deadline) {
        for (;;) {
            if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
                std::string line = buffer_.substr(0, nl);
                buffer_.erase(0, nl + 1);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                return line;
            }
            if (buffer_.size() > kMaxLine) throw Error(ErrorCode::ProtocolViolation, "response line too long");
            pollfd pfd{read_fd_, POLLIN, 0};
            const int ready = ::poll(&pfd, 1, remaining_ms(deadline));
            if (ready == 0) throw Error(ErrorCode::Timeout, "timed out waiting for scorer response");
            if (ready < 0) {
                if (errno == EINTR) continue;
                throw Error(ErrorCode::ScorerFailure, std::string("poll: ") + std::strerror(errno));
            }
            char chunk[65536];
            const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
            if (n == 0) throw Error(ErrorCode::ScorerFailure, "scorer closed the connection");
            if (n < 0) {
                if (errno == EINTR || errno == EAGAIN) continue;
                throw Error(ErrorCode::ScorerFailure, std::string("read: ") + std::strerror(errno));
            }
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

private:
    void spawn(const std::string& command) {
        const auto words = split_words(command);
        int to_child[2];
        int from_child[2];
        if (::pipe2(to_child, O_CLOEXEC) != 0) throw Error(ErrorCode::ScorerFailure, "pipe failed");
        if (::pipe2(from_child, O_CLOEXEC) != 0) {
            ::close(to_child[0]);
            ::close(to_child[1]);
            throw Error(ErrorCode::ScorerFailure, "pipe failed");
        }
        std::vector<char*> argv;
        for (const auto& w : words) argv.push_back(const_cast<char*>(w.c_str()));
        argv.push_back(nullptr);

        const pid_t pid = ::fork();
        if (pid < 0) throw Error(ErrorCode::ScorerFailure, "fork failed");
        if (pid == 0) {
            ::dup2(to_child[0], STDIN_FILENO);
            ::dup2(from_child[1], STDOUT_FILENO);
            ::execvp(argv[0], argv.data());
            ::_exit(127);
        }
        ::close(to_child[0]);
        ::close(from_child[1]);
        child_ = pid;
        write_fd_ = to_child[1];
        read_fd_ = from_child[0];
    }

    void connect_tcp(const std::string& host, std::uint16_t port) {
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* found = nullptr;
        const std::string service = std::to_string(port);
        if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &found) != 0 || found == nullptr) {
            throw Error(ErrorCode::ScorerFailure, "cannot resolve scorer host " + host);
        }
        int fd = -1;
        for (addrinfo* ai = found; ai != nullptr; ai = ai->ai_next) {
            fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
            if (fd < 0) continue;
            if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
            ::close(fd);
            fd = -1;
        }
        ::freeaddrinfo(found);
        if (fd < 0) {
            throw Error(ErrorCode::ScorerFailure, "scorer unreachable at " + host + ":" + service);
        }
        socket_ = true;
        read_fd_ = fd;
        write_fd_ = fd;
    }

    int read_fd_ = -1;
    int write_fd_ = -1;
    pid_t child_ = -1;
    bool socket_ = false;
    std::string buffer_;
};

ExternalScorer::ExternalScorer(const Endpoint& endpoint, std::string gallery_ref, std::chrono::milliseconds timeout)
    : channel_(std::make_unique<Channel>(endpoint)), gallery_ref_(std::move(gallery_ref)), timeout_(timeout) {
    labels_ = decode_labels_response(round_trip(encode_hello_request()));
}

ExternalScorer::~ExternalScorer() = default;

std::string ExternalScorer::round_trip(const std::string& line) {
    std::lock_guard lock(mutex_);
    const auto deadline = Clock::now() + timeout_;
    channel_->write_line(line, deadline);
    return channel_->read_line(deadline);
}

ScoreVector ExternalScorer::score(const NirImage& probe) {
    auto scores = decode_probs_response(round_trip(encode_score_request(probe, gallery_ref_)));
    scores.validate(&labels_);
    return scores;
}

ScoreVector external_score(const NirImage& probe, const std::string& gallery_ref, const Endpoint& endpoint,
                           std::chrono::milliseconds timeout) {
    ExternalScorer scorer(endpoint, gallery_ref, timeout);
    return scorer.score(probe);
}

}  // namespace nirpf
