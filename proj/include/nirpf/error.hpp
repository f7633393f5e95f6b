#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nirpf {

enum class ErrorCode {
    UnsupportedFormat,
    CorruptHeader,
    DimensionMismatch,
    IoFailure,
    InvalidRange,
    IndexOutOfRange,
    TooFewVertices,
    OpenContour,
    InvalidAngle,
    GrazingSingularity,
    InvalidGallery,
    ScorerFailure,
    Timeout,
    ProtocolViolation,
    PopulationTooSmall,
    ShapeMismatch,
    InvalidLabel,
    InvalidConfig,
    ParseError,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above so
// callers (the CLI in particular) can map them to exit statuses.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), message_(what) {}

    ErrorCode code() const noexcept { return code_; }
    /// The message without the code prefix.
    const std::string& message() const noexcept { return message_; }

private:
    ErrorCode code_;
    std::string message_;
};

}  // namespace nirpf
