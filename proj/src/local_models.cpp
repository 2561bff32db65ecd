#include "evalnexus/local_models.hpp"

#include <algorithm>
#include <cmath>

#include "evalnexus/cache.hpp"
#include "evalnexus/error.hpp"

namespace evalnexus {

namespace {

// Cuts `out` at the first stop string it now ends with; true when stopped.
bool apply_stop(std::string& out, const std::vector<std::string>& stop) {
    for (const auto& s : stop) {
        if (out.size() >= s.size() && out.compare(out.size() - s.size(), s.size(), s) == 0) {
            out.resize(out.size() - s.size());
            return true;
        }
    }
    return false;
}

} // namespace

std::vector<std::string> ByteModel::tokenize(std::string_view text) const {
    std::vector<std::string> tokens;
    tokens.reserve(text.size());
    for (char c : text) {
        tokens.emplace_back(1, c);
    }
    return tokens;
}

std::vector<TokenScore> ByteModel::do_score(std::string_view context, std::string_view continuation) const {
    std::string history;
    history.reserve(context.size() + continuation.size());
    history.append(context);
    std::vector<TokenScore> scores;
    scores.reserve(continuation.size());
    for (char c : continuation) {
        const auto dist = next_logprobs(history);
        scores.push_back({std::string(1, c), dist[static_cast<unsigned char>(c)]});
        history.push_back(c);
    }
    return scores;
}

UniformModel::UniformModel(ModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    logprob_ = -std::log(static_cast<double>(std::get<UniformParams>(spec_.params).alphabet_size));
}

std::string UniformModel::identity() const {
    return "uniform:" + std::to_string(std::get<UniformParams>(spec_.params).alphabet_size);
}

ByteDistribution UniformModel::next_logprobs(std::string_view) const {
    ByteDistribution dist;
    dist.fill(logprob_);
    return dist;
}

std::string UniformModel::generate(std::string_view, std::size_t, const std::vector<std::string>&) const {
    throw Error(ErrorKind::UnsupportedBackend, "the uniform model cannot generate");
}

NgramModel::NgramModel(ModelSpec spec, std::string_view corpus)
    : spec_(std::move(spec)), order_(std::get<NgramParams>(spec_.params).order),
      smoothing_(std::get<NgramParams>(spec_.params).smoothing) {
    spec_.validate();
    if (corpus.empty()) {
        throw Error(ErrorKind::EmptyCorpus, "ngram corpus is empty");
    }
    corpus_digest_ = sha256_hex(corpus);
    for (unsigned char c : corpus) {
        if (!in_alphabet_[c]) {
            in_alphabet_[c] = true;
            ++alphabet_size_;
        }
    }
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto next = static_cast<unsigned char>(corpus[i]);
        const auto max_m = std::min<std::size_t>(static_cast<std::size_t>(order_), i);
        for (std::size_t m = 0; m <= max_m; ++m) {
            auto& counts = counts_[std::string(corpus.substr(i - m, m))];
            ++counts.next[next];
            ++counts.total;
        }
    }
}

std::string NgramModel::identity() const {
    char k[32];
    std::snprintf(k, sizeof k, "%.17g", smoothing_);
    return "ngram:" + std::to_string(order_) + ":" + corpus_digest_ + ":" + k;
}

ByteDistribution NgramModel::next_logprobs(std::string_view history) const {
    const auto m = std::min<std::size_t>(static_cast<std::size_t>(order_), history.size());
    static const Counts kEmpty{};
    const auto it = counts_.find(std::string(history.substr(history.size() - m)));
    const Counts& counts = it == counts_.end() ? kEmpty : it->second;

    const double classes = static_cast<double>(alphabet_size_ + 1);
    const double denom = static_cast<double>(counts.total) + smoothing_ * classes;
    const auto unseen = 256 - alphabet_size_;
    const double oov = unseen == 0 ? 0.0 : smoothing_ / denom / static_cast<double>(unseen);

    ByteDistribution dist;
    for (std::size_t b = 0; b < 256; ++b) {
        const double p = in_alphabet_[b] ? (static_cast<double>(counts.next[b]) + smoothing_) / denom : oov;
        dist[b] = std::log(p);
    }
    return dist;
}

std::string NgramModel::generate(std::string_view prompt, std::size_t max_tokens,
                                 const std::vector<std::string>& stop) const {
    check_generation_args(max_tokens, stop);
    std::string history(prompt);
    std::string out;
    for (std::size_t step = 0; step < max_tokens; ++step) {
        const auto dist = next_logprobs(history);
        std::size_t best = 0;
        for (std::size_t b = 1; b < dist.size(); ++b) {
            if (dist[b] > dist[best]) {
                best = b;
            }
        }
        const char c = static_cast<char>(best);
        out.push_back(c);
        history.push_back(c);
        if (apply_stop(out, stop)) {
            break;
        }
    }
    return out;
}

NgramModel ngram_train(std::string_view corpus, int order, double smoothing) {
    ModelSpec spec;
    spec.name = "ngram:" + std::to_string(order);
    spec.params = NgramParams{order, {}, smoothing};
    return NgramModel(std::move(spec), corpus);
}

} // namespace evalnexus
