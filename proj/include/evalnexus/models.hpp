#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "evalnexus/formats.hpp"
#include "evalnexus/record.hpp"

namespace evalnexus {

struct TokenScore {
    std::string token;
    double logprob = 0.0; // nats
};

enum class ChoiceNormalization { Sum, PerToken, PerByte };

std::string_view to_string(ChoiceNormalization norm) noexcept;
ChoiceNormalization parse_normalization(std::string_view name);

struct UniformParams {
    int alphabet_size = 256;
};

struct NgramParams {
    int order = 1;
    std::filesystem::path corpus_path;
    double smoothing = 1.0;
};

struct RemoteParams {
    std::string base_url;
    std::string model;
    std::chrono::milliseconds timeout{30000};
    int max_attempts = 3;
    std::chrono::milliseconds backoff_base{1000};
    int max_concurrency = 4;
    bool allow_straddle = false;
};

enum class ModelKind { Uniform, Ngram, Remote };

struct ModelSpec {
    std::string name;
    std::variant<UniformParams, NgramParams, RemoteParams> params;

    ModelKind kind() const noexcept { return static_cast<ModelKind>(params.index()); }
    void validate() const;

    Json to_json() const;
    static ModelSpec from_json(std::string name, const Json& j);

    // "uniform:<V>", "ngram:<order>:<corpus>[:<k>]" or "remote:<model>@<url>".
    static ModelSpec parse(std::string_view text);
};

/// Friendly names mapped to specs, read from a JSON object file.
class ModelRegistry {
public:
    static ModelRegistry from_file(const std::filesystem::path& path);

    void add(ModelSpec spec);
    const ModelSpec& get(std::string_view name) const;
    std::vector<std::string> names() const;

    // Registry name first, then the inline spec grammar.
    ModelSpec resolve(std::string_view name_or_spec) const;

private:
    std::map<std::string, ModelSpec, std::less<>> specs_;
};

/// Scoring boundary. Implementations are immutable after construction (or
/// internally synchronized) and safe to share across worker threads.
class LanguageModel {
public:
    virtual ~LanguageModel() = default;

    virtual const ModelSpec& spec() const noexcept = 0;

    // Stable string naming everything that determines the model's scores;
    // used in cache keys.
    virtual std::string identity() const = 0;

    // Log-probabilities of the continuation tokens only, each conditioned on
    // the context and the preceding continuation tokens.
    std::vector<TokenScore> score(std::string_view context, std::string_view continuation) const;

    virtual std::vector<std::string> tokenize(std::string_view text) const = 0;

    // Greedy decoding; the matched stop string is not part of the result.
    virtual std::string generate(std::string_view prompt, std::size_t max_tokens,
                                 const std::vector<std::string>& stop) const;

    // Byte-level models tokenize every byte as one token.
    virtual bool byte_level() const noexcept { return false; }

    std::uint64_t score_calls() const noexcept { return score_calls_.load(); }

protected:
    virtual std::vector<TokenScore> do_score(std::string_view context, std::string_view continuation) const = 0;

    static void check_generation_args(std::size_t max_tokens, const std::vector<std::string>& stop);

private:
    mutable std::atomic<std::uint64_t> score_calls_{0};
};

std::shared_ptr<const LanguageModel> load_model(const ModelSpec& spec);

struct ChoiceScore {
    double sum_logprob = 0.0;
    std::size_t token_count = 0;
    std::size_t byte_count = 0;
};

struct PredictionRecord {
    std::string instance_id;
    std::vector<ChoiceScore> choices;
    std::size_t predicted_index = 0;
    std::optional<std::size_t> gold_index;
    std::optional<std::string> prompt_name;
};

double choice_score(const ChoiceScore& choice, ChoiceNormalization norm);

// Index of the largest value; the lowest index wins ties.
std::size_t argmax_first(std::span<const double> values);

ChoiceScore score_choice(const LanguageModel& model, const RcChoice& choice);

// Picks the choice with the best normalized score.
PredictionRecord predict_from_scores(std::vector<ChoiceScore> choices, ChoiceNormalization norm,
                                     std::optional<int> gold);

PredictionRecord rc_predict(const LanguageModel& model, const RcInstance& inst, ChoiceNormalization norm,
                            std::string instance_id = {});

Json to_json(const PredictionRecord& pred, ChoiceNormalization norm);

} // namespace evalnexus
