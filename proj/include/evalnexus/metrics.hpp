#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evalnexus/formats.hpp"
#include "evalnexus/models.hpp"
#include "evalnexus/record.hpp"

namespace evalnexus {

struct MetricReport {
    std::string task;
    std::string model;
    std::string wrapper;
    std::optional<std::string> prompt_name;
    std::map<std::string, double> values;
    std::size_t instance_count = 0;

    Json to_json() const;
    static MetricReport from_json(const Json& j);

    // One CSV line per metric: task,model,wrapper,prompt,instance_count,metric,value
    static std::string csv_header();
    std::string to_csv_row() const;
};

double accuracy(std::span<const PredictionRecord> preds);

double random_baseline(std::span<const RcInstance> instances);
double random_baseline(std::size_t label_vocabulary_size);

// Percent improvement over chance: 100 * (acc - baseline) / baseline.
double relative_improvement(double acc, double baseline);

struct SquadScore {
    int exact_match = 0;
    double f1 = 0.0;
};

// Lowercase, strip punctuation, drop the articles a/an/the, collapse
// whitespace.
std::string squad_normalize(std::string_view text);
SquadScore squad_em_f1(std::string_view prediction, const std::vector<std::string>& golds);

struct PerplexityMetrics {
    double ppl_word = 0.0;
    double ppl_byte = 0.0;
    double bits_per_byte = 0.0;
};

PerplexityMetrics perplexity_metrics(double total_nats, std::size_t words, std::size_t bytes);

} // namespace evalnexus
