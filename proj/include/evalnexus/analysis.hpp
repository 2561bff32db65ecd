#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "evalnexus/record.hpp"

namespace evalnexus {

enum class ModelGroup { ZeroShot, Finetuned };

std::string_view to_string(ModelGroup group) noexcept;

/// Models x datasets grid of relative-improvement percents. NaN marks a
/// missing cell.
struct ResultsMatrix {
    std::vector<std::string> models;
    std::vector<ModelGroup> groups;
    std::vector<std::string> datasets;
    std::vector<std::vector<double>> values; // [model][dataset]

    std::size_t dataset_index(std::string_view name) const;
    std::vector<double> column(std::size_t dataset) const;
    void validate() const;

    // Header `model,group,<dataset...>`; empty, "NA" or "nan" cells are missing.
    static ResultsMatrix parse_csv(std::istream& in);
    static ResultsMatrix load_csv(const std::filesystem::path& path);
};

// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> average_ranks(std::span<const double> xs);

// Spearman's rho as the Pearson correlation of average ranks. Pairs with a
// NaN on either side are dropped first.
double spearman(std::span<const double> xs, std::span<const double> ys);

struct CorrelationTable {
    std::vector<std::string> datasets;
    std::vector<std::vector<double>> rho;

    std::string to_csv() const;       // 3 decimals
    std::string to_text() const;      // aligned, 3 decimals
};

CorrelationTable correlation_table(const ResultsMatrix& matrix);

struct GroupStats {
    double max = 0.0;
    double mean = 0.0;
    std::string best_model;
};

struct DatasetSummary {
    std::string dataset;
    double mean_all = 0.0;
    GroupStats zero_shot;
    GroupStats finetuned;
};

struct MacroSummary {
    std::vector<DatasetSummary> per_dataset;
    // Mean over datasets of each group's per-dataset best.
    double zero_shot_macro_best = 0.0;
    double finetuned_macro_best = 0.0;
    // finetuned_macro_best / zero_shot_macro_best - 1
    double ratio_per_dataset_best = 0.0;
    // Best single model per group by its own macro average.
    std::string zero_shot_best_model;
    std::string finetuned_best_model;
    double zero_shot_best_model_macro = 0.0;
    double finetuned_best_model_macro = 0.0;
    double ratio_best_single_model = 0.0;

    const DatasetSummary& dataset(std::string_view name) const;
    Json to_json() const;
    std::string to_text() const;
};

MacroSummary macro_summary(const ResultsMatrix& matrix);

} // namespace evalnexus
