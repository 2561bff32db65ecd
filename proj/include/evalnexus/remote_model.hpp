#pragma once

#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "evalnexus/models.hpp"
#include "evalnexus/record.hpp"

namespace evalnexus {

/// Echoed per-token view of a prompt as returned by a completions endpoint.
struct EchoedPrompt {
    std::vector<std::string> tokens;
    std::vector<std::optional<double>> logprobs;
    std::vector<std::int64_t> text_offsets;
};

// Parses `choices[0].logprobs` of a completions response.
EchoedPrompt parse_echo_response(const Json& response);

// Number of Unicode code points in a UTF-8 string.
std::size_t code_point_count(std::string_view utf8);

// Attributes to the continuation every token whose span ends after
// `context_code_points`. A token starting inside the context and ending
// after it is a straddle: TokenizationMismatch unless `allow_straddle`.
std::vector<TokenScore> align_continuation(const EchoedPrompt& echo, std::size_t context_code_points,
                                           std::size_t prompt_code_points, bool allow_straddle);

Json completion_request(std::string_view model, std::string_view prompt, std::size_t max_tokens, bool echo,
                        const std::vector<std::string>& stop = {});

/// Client for a `/v1/completions`-compatible endpoint. Scoring echoes the
/// concatenated prompt; responses are memoized per prompt for the lifetime
/// of the object, and in-flight requests are bounded by max_concurrency.
class RemoteModel final : public LanguageModel {
public:
    explicit RemoteModel(ModelSpec spec);
    ~RemoteModel() override;

    const ModelSpec& spec() const noexcept override { return spec_; }
    std::string identity() const override;
    std::vector<std::string> tokenize(std::string_view text) const override;
    std::string generate(std::string_view prompt, std::size_t max_tokens,
                         const std::vector<std::string>& stop) const override;

    std::uint64_t http_requests() const noexcept { return http_requests_.load(); }

protected:
    std::vector<TokenScore> do_score(std::string_view context, std::string_view continuation) const override;

private:
    Json post(const Json& body) const;
    const EchoedPrompt& echo(const std::string& prompt) const;

    ModelSpec spec_;
    const RemoteParams& params_;
    std::string host_;
    std::string path_prefix_;
    mutable std::counting_semaphore<1024> slots_;
    mutable std::mutex memo_mutex_;
    mutable std::unordered_map<std::string, std::shared_ptr<const EchoedPrompt>> memo_;
    mutable std::atomic<std::uint64_t> http_requests_{0};
};

} // namespace evalnexus
