#include "nirpf/error.hpp"

namespace nirpf {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
        case ErrorCode::CorruptHeader: return "CorruptHeader";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::IoFailure: return "IoFailure";
        case ErrorCode::InvalidRange: return "InvalidRange";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::TooFewVertices: return "TooFewVertices";
        case ErrorCode::OpenContour: return "OpenContour";
        case ErrorCode::InvalidAngle: return "InvalidAngle";
        case ErrorCode::GrazingSingularity: return "GrazingSingularity";
        case ErrorCode::InvalidGallery: return "InvalidGallery";
        case ErrorCode::ScorerFailure: return "ScorerFailure";
        case ErrorCode::Timeout: return "Timeout";
        case ErrorCode::ProtocolViolation: return "ProtocolViolation";
        case ErrorCode::PopulationTooSmall: return "PopulationTooSmall";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::InvalidLabel: return "InvalidLabel";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::ParseError: return "ParseError";
    }
    return "Unknown";
}

}  // namespace nirpf
