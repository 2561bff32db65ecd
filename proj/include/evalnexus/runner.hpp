#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "evalnexus/cache.hpp"
#include "evalnexus/metrics.hpp"
#include "evalnexus/models.hpp"
#include "evalnexus/prompting.hpp"
#include "evalnexus/record.hpp"
#include "evalnexus/tasks.hpp"

namespace evalnexus {

enum class Wrapper { Rc, Lm };

std::string_view to_string(Wrapper wrapper) noexcept;
Wrapper parse_wrapper(std::string_view name);

struct RunConfig {
    std::string model; // registry name or inline spec
    std::vector<std::string> tasks;
    Wrapper wrapper = Wrapper::Rc;
    std::string split;
    std::size_t num_shots = 0;
    std::uint64_t seed = 0;
    ChoiceNormalization normalization = ChoiceNormalization::Sum;
    // "" picks the task default, "all" every template, anything else by name.
    std::string prompt;
    std::optional<std::size_t> limit;
    std::optional<std::filesystem::path> cache_dir; // unset disables caching
    std::size_t max_len = 1024;
    std::optional<std::size_t> stride; // unset means stride == max_len
    std::size_t max_batch_tokens = 16384;
    std::size_t workers = 1;
    std::optional<TokenBudget> metaicl;

    void validate() const;
    std::size_t effective_stride() const { return stride.value_or(max_len); }

    // Everything that can change a number in the report.
    Json to_json() const;
};

struct RunResult {
    std::vector<MetricReport> reports;
    std::vector<Json> predictions;
    Json report;
    Json meta;
    CacheStats cache;
    std::uint64_t backend_score_calls = 0;
};

RunResult run_evaluation(const RunConfig& config, const TaskRegistry& tasks,
                         std::shared_ptr<const LanguageModel> model);
RunResult run_evaluation(const RunConfig& config, const TaskRegistry& tasks, const ModelRegistry& models);

// predictions.jsonl, report.json, report.meta.json, metrics.csv
void write_outputs(const RunResult& result, const std::filesystem::path& dir);

} // namespace evalnexus
