#include "evalnexus/perplexity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "evalnexus/error.hpp"

namespace evalnexus {

namespace {

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

} // namespace

std::size_t count_words(std::string_view text) {
    std::size_t words = 0;
    bool in_word = false;
    for (char c : text) {
        if (is_space(c)) {
            in_word = false;
        } else if (!in_word) {
            in_word = true;
            ++words;
        }
    }
    return words;
}

PerplexityDoc make_doc(std::string doc_id, std::string text) {
    if (text.empty()) {
        throw Error(ErrorKind::InvalidInstance, "perplexity document '" + doc_id + "' is empty");
    }
    PerplexityDoc doc;
    doc.doc_id = std::move(doc_id);
    doc.word_count = count_words(text);
    doc.byte_count = text.size();
    doc.token_count = doc.byte_count;
    doc.text = std::move(text);
    return doc;
}

void NatsSum::add(double x) noexcept {
    const double t = hi + x;
    if (std::abs(hi) >= std::abs(x)) {
        lo += (hi - t) + x;
    } else {
        lo += (x - t) + hi;
    }
    hi = t;
}

double NatsSum::residual() const noexcept {
    const double s = hi + lo;
    const double b = s - hi;
    return (hi - (s - b)) + (lo - b);
}

WindowPlan plan_windows(std::size_t n_tokens, std::size_t max_len, std::size_t stride) {
    if (max_len < 2 || stride < 1 || stride > max_len) {
        throw Error(ErrorKind::InvalidStride, "need max_len >= 2 and 1 <= stride <= max_len (max_len=" +
                                                  std::to_string(max_len) + ", stride=" + std::to_string(stride) +
                                                  ")");
    }
    WindowPlan plan;
    std::size_t scored_until = 0;
    for (std::size_t start = 0; scored_until < n_tokens; start += stride) {
        const auto end = std::min(start + max_len, n_tokens);
        plan.push_back({start, end, scored_until});
        scored_until = end;
    }
    return plan;
}

DocLoglik doc_loglik(const LanguageModel& model, const PerplexityDoc& doc, std::size_t max_len, std::size_t stride) {
    const auto tokens = model.tokenize(doc.text);
    if (tokens.empty()) {
        throw Error(ErrorKind::InvalidInstance, "document '" + doc.doc_id + "' has no tokens");
    }
    // Byte offsets of token boundaries.
    std::vector<std::size_t> offsets(tokens.size() + 1, 0);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        offsets[i + 1] = offsets[i] + tokens[i].size();
    }
    const std::string_view text = doc.text;
    DocLoglik result;
    NatsSum sum;
    for (const auto& w : plan_windows(tokens.size(), max_len, stride)) {
        const auto ctx = text.substr(offsets[w.start], offsets[w.score_start] - offsets[w.start]);
        const auto cont = text.substr(offsets[w.score_start], offsets[w.end] - offsets[w.score_start]);
        for (const auto& s : model.score(ctx, cont)) {
            sum.add(s.logprob);
            ++result.scored_tokens;
        }
    }
    result.total_nats = sum.value();
    result.residual = sum.residual();
    return result;
}

std::vector<std::vector<std::size_t>> batch_by_length(std::span<const PerplexityDoc> docs,
                                                      std::size_t max_batch_tokens,
                                                      std::optional<std::size_t> window_len) {
    std::vector<std::size_t> cost(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) {
        const auto len = docs[i].token_count ? docs[i].token_count : docs[i].byte_count;
        cost[i] = window_len ? std::min(len, *window_len) : len;
        if (cost[i] > max_batch_tokens) {
            throw Error(ErrorKind::DocTooLong, "document '" + docs[i].doc_id + "' needs " + std::to_string(cost[i]) +
                                                   " tokens, batch budget is " + std::to_string(max_batch_tokens));
        }
    }
    std::vector<std::size_t> order(docs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cost[a] > cost[b]; });

    std::vector<std::vector<std::size_t>> batches;
    std::size_t longest = 0;
    for (auto idx : order) {
        // Sorted descending, so the batch's first member is its longest.
        if (!batches.empty() && (batches.back().size() + 1) * longest <= max_batch_tokens) {
            batches.back().push_back(idx);
        } else {
            batches.push_back({idx});
            longest = cost[idx];
        }
    }
    return batches;
}

} // namespace evalnexus
