#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evalnexus/models.hpp"

namespace evalnexus {

struct PerplexityDoc {
    std::string doc_id;
    std::string text;
    std::size_t word_count = 0; // whitespace-delimited segments
    std::size_t byte_count = 0; // UTF-8 bytes
    std::size_t token_count = 0; // filled in once the scoring tokenizer is known
};

// Throws InvalidInstance on empty text. token_count defaults to byte_count.
PerplexityDoc make_doc(std::string doc_id, std::string text);

std::size_t count_words(std::string_view text);

struct Window {
    std::size_t start = 0;       // first token fed to the model
    std::size_t end = 0;         // one past the last token
    std::size_t score_start = 0; // first token whose logprob counts

    friend bool operator==(const Window&, const Window&) = default;
};

using WindowPlan = std::vector<Window>;

// Window k starts at k*stride and spans up to max_len tokens; it scores the
// tokens not already scored by window k-1. stride == max_len gives disjoint
// windows.
WindowPlan plan_windows(std::size_t n_tokens, std::size_t max_len, std::size_t stride);

// Neumaier-compensated running sum of log-probabilities.
struct NatsSum {
    double hi = 0.0;
    double lo = 0.0;

    void add(double x) noexcept;
    double value() const noexcept { return hi + lo; }
    // (hi + lo) - value(), exactly.
    double residual() const noexcept;
};

struct DocLoglik {
    double total_nats = 0.0;
    double residual = 0.0; // total_nats + residual carries the compensated sum
    std::size_t scored_tokens = 0;
};

// Scores one document on its own; the first token is conditioned on the
// empty context.
DocLoglik doc_loglik(const LanguageModel& model, const PerplexityDoc& doc, std::size_t max_len, std::size_t stride);

// Groups document indices into batches, longest first, so that each batch's
// count * longest member stays within max_batch_tokens. With `window_len`
// set, a document's cost is capped at one window.
std::vector<std::vector<std::size_t>> batch_by_length(std::span<const PerplexityDoc> docs,
                                                      std::size_t max_batch_tokens,
                                                      std::optional<std::size_t> window_len = std::nullopt);

} // namespace evalnexus
