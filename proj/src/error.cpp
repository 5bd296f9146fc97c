#include "trn/error.hpp"

namespace trn {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::BadVersion: return "BadVersion";
        case ErrorCode::Truncated: return "Truncated";
        case ErrorCode::NonFinite: return "NonFinite";
        case ErrorCode::Io: return "Io";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::NonContiguousPhase: return "NonContiguousPhase";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::StaleCache: return "StaleCache";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::MissingData: return "MissingData";
    }
    return "Unknown";
}

}  // namespace trn
