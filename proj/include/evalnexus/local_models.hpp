#pragma once

#include <array>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "evalnexus/models.hpp"

namespace evalnexus {

using ByteDistribution = std::array<double, 256>;

/// Byte-level model: one token per byte.
class ByteModel : public LanguageModel {
public:
    std::vector<std::string> tokenize(std::string_view text) const override;
    bool byte_level() const noexcept override { return true; }

    // log P(next byte | history) for all 256 byte values.
    virtual ByteDistribution next_logprobs(std::string_view history) const = 0;

protected:
    std::vector<TokenScore> do_score(std::string_view context, std::string_view continuation) const override;
};

class UniformModel final : public ByteModel {
public:
    explicit UniformModel(ModelSpec spec);

    const ModelSpec& spec() const noexcept override { return spec_; }
    std::string identity() const override;
    ByteDistribution next_logprobs(std::string_view history) const override;
    std::string generate(std::string_view prompt, std::size_t max_tokens,
                         const std::vector<std::string>& stop) const override;

private:
    ModelSpec spec_;
    double logprob_;
};

/// Add-k smoothed byte n-gram. Order n conditions on the previous n bytes;
/// shorter histories use the matching lower-order counts. The smoothing
/// classes are the corpus alphabet plus one out-of-alphabet class, whose mass
/// is split evenly over the byte values absent from the corpus.
class NgramModel final : public ByteModel {
public:
    NgramModel(ModelSpec spec, std::string_view corpus);

    const ModelSpec& spec() const noexcept override { return spec_; }
    std::string identity() const override;
    ByteDistribution next_logprobs(std::string_view history) const override;
    std::string generate(std::string_view prompt, std::size_t max_tokens,
                         const std::vector<std::string>& stop) const override;

    int order() const noexcept { return order_; }
    std::size_t alphabet_size() const noexcept { return alphabet_size_; }

private:
    struct Counts {
        std::array<std::uint64_t, 256> next{};
        std::uint64_t total = 0;
    };

    ModelSpec spec_;
    int order_;
    double smoothing_;
    std::array<bool, 256> in_alphabet_{};
    std::size_t alphabet_size_ = 0;
    std::string corpus_digest_;
    std::unordered_map<std::string, Counts> counts_;
};

NgramModel ngram_train(std::string_view corpus, int order, double smoothing);

} // namespace evalnexus
