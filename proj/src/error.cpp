#include "evalnexus/error.hpp"

namespace evalnexus {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::MissingField: return "MissingField";
    case ErrorKind::BadChoiceCount: return "BadChoiceCount";
    case ErrorKind::RaggedAnswers: return "RaggedAnswers";
    case ErrorKind::MissingVerbalizer: return "MissingVerbalizer";
    case ErrorKind::InvalidInstance: return "InvalidInstance";
    case ErrorKind::UnknownTask: return "UnknownTask";
    case ErrorKind::UnknownSplit: return "UnknownSplit";
    case ErrorKind::InsufficientDemos: return "InsufficientDemos";
    case ErrorKind::UnresolvedPlaceholder: return "UnresolvedPlaceholder";
    case ErrorKind::TemplateSyntax: return "TemplateSyntax";
    case ErrorKind::DuplicateTemplateName: return "DuplicateTemplateName";
    case ErrorKind::InconsistentGold: return "InconsistentGold";
    case ErrorKind::TargetTooLong: return "TargetTooLong";
    case ErrorKind::UnknownModel: return "UnknownModel";
    case ErrorKind::BackendUnavailable: return "BackendUnavailable";
    case ErrorKind::TokenizationMismatch: return "TokenizationMismatch";
    case ErrorKind::ProtocolError: return "ProtocolError";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::UnsupportedBackend: return "UnsupportedBackend";
    case ErrorKind::InvalidStop: return "InvalidStop";
    case ErrorKind::InvalidStride: return "InvalidStride";
    case ErrorKind::DocTooLong: return "DocTooLong";
    case ErrorKind::MissingGold: return "MissingGold";
    case ErrorKind::DegenerateBaseline: return "DegenerateBaseline";
    case ErrorKind::NoGolds: return "NoGolds";
    case ErrorKind::ZeroDenominator: return "ZeroDenominator";
    case ErrorKind::CacheCorrupt: return "CacheCorrupt";
    case ErrorKind::TooFewPoints: return "TooFewPoints";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
    case ErrorKind::EmptyGroup: return "EmptyGroup";
    case ErrorKind::IncompatibleWrapper: return "IncompatibleWrapper";
    }
    return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& message, std::optional<std::size_t> line)
    : std::runtime_error(message), kind_(kind), line_(line) {}

} // namespace evalnexus
