#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evalnexus/formats.hpp"
#include "evalnexus/prompting.hpp"
#include "evalnexus/record.hpp"

namespace evalnexus {

enum class TaskType { MultipleChoice, Classification, Entailment, QuestionAnswering, LanguageModeling };

std::string_view to_string(TaskType type) noexcept;
TaskType parse_task_type(std::string_view name);

// Datasets lack universal ids, so a record is identified by where it sits.
struct RecordId {
    std::string task;
    std::string split;
    std::size_t row = 0;

    std::string str() const { return task + "/" + split + "/" + std::to_string(row); }
    friend auto operator<=>(const RecordId&, const RecordId&) = default;
};

struct GenerationSettings {
    std::size_t max_tokens = 32;
    std::vector<std::string> stop{"\n"};
};

struct Task {
    std::string name;
    TaskType type = TaskType::MultipleChoice;
    std::map<std::string, std::vector<RawRecord>> splits;
    std::map<InstanceFormat, FieldSchema> schemas;
    std::vector<std::string> label_vocabulary;
    std::vector<std::string> metric_overrides;
    std::vector<PromptTemplate> templates;
    std::string default_template;
    std::string question_prefix = "Question: ";
    std::string answer_prefix = "\nAnswer:";
    std::vector<std::string> t5_field_order;
    GenerationSettings generation;
    std::filesystem::path config_path;
    // Digest of the config text and every data file, for cache keys.
    std::string content_digest;

    const std::vector<RawRecord>& split(std::string_view name) const;
    const PromptTemplate& template_named(std::string_view name) const;
    const FieldSchema* schema(InstanceFormat format) const;
};

// One record per non-blank line, in file order. A malformed line raises
// ParseError carrying its 1-based line number.
std::vector<RawRecord> load_jsonl(const std::filesystem::path& path, std::string_view split);

// Reads a task config (JSON) and every split file it references; split paths
// resolve relative to the config's directory.
Task load_task_config(const std::filesystem::path& path);

class TaskRegistry {
public:
    void add(Task task);
    const Task& get(std::string_view name) const;
    bool contains(std::string_view name) const;
    std::vector<std::string> names() const;

    // Every *.json file in `dir` is a task config.
    static TaskRegistry from_directory(const std::filesystem::path& dir);

private:
    std::map<std::string, Task, std::less<>> tasks_;
};

struct FewshotSample {
    std::vector<RawRecord> demo_records;
    std::vector<RecordId> demo_ids;
    std::uint64_t seed = 0;
    std::string source_split;
};

inline constexpr std::string_view kSamplerName = "mt19937_64/fisher-yates-v1";

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// Seeded permutation of [0, n) that is bit-identical across platforms.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

// Demos come from "train", falling back to "validation"; `exclude` is never
// drawn. Sampling is without replacement and fully determined by the args.
FewshotSample sample_fewshot(const Task& task, std::size_t k, std::uint64_t seed, const RecordId& exclude);

std::vector<std::string> suggested_metrics(const Task& task);
std::vector<std::string> suggested_metrics(const TaskRegistry& registry, std::string_view task_name);

} // namespace evalnexus
