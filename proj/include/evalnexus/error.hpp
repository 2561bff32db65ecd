#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace evalnexus {

// Every failure the harness reports carries one of these classes. The CLI
// prints the class name verbatim so callers can match on it.
enum class ErrorKind {
    InvalidArgument,
    ConfigError,
    IoError,
    ParseError,
    // formats
    MissingField,
    BadChoiceCount,
    RaggedAnswers,
    MissingVerbalizer,
    InvalidInstance,
    // tasks
    UnknownTask,
    UnknownSplit,
    InsufficientDemos,
    // prompting
    UnresolvedPlaceholder,
    TemplateSyntax,
    DuplicateTemplateName,
    InconsistentGold,
    TargetTooLong,
    // models
    UnknownModel,
    BackendUnavailable,
    TokenizationMismatch,
    ProtocolError,
    EmptyCorpus,
    UnsupportedBackend,
    InvalidStop,
    // perplexity
    InvalidStride,
    DocTooLong,
    // metrics
    MissingGold,
    DegenerateBaseline,
    NoGolds,
    ZeroDenominator,
    // cache
    CacheCorrupt,
    // analysis
    TooFewPoints,
    ZeroVariance,
    EmptyGroup,
    // cli
    IncompatibleWrapper,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message, std::optional<std::size_t> line = std::nullopt);

    ErrorKind kind() const noexcept { return kind_; }

    // 1-based source line for ParseError raised while reading files.
    std::optional<std::size_t> line() const noexcept { return line_; }

private:
    ErrorKind kind_;
    std::optional<std::size_t> line_;
};

} // namespace evalnexus
