#include "evalnexus/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "evalnexus/cache.hpp"
#include "evalnexus/error.hpp"

namespace evalnexus {

namespace fs = std::filesystem;

namespace {

constexpr std::array<std::pair<TaskType, std::string_view>, 5> kTaskTypeNames{{
    {TaskType::MultipleChoice, "multiple_choice"},
    {TaskType::Classification, "classification"},
    {TaskType::Entailment, "entailment"},
    {TaskType::QuestionAnswering, "question_answering"},
    {TaskType::LanguageModeling, "language_modeling"},
}};

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::IoError, "cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

// Unbiased draw from [0, bound) on raw engine output.
std::uint64_t bounded(std::mt19937_64& engine, std::uint64_t bound) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x = 0;
    do {
        x = engine();
    } while (x >= limit);
    return x % bound;
}

void check_labels(const Task& task) {
    if (task.label_vocabulary.empty()) {
        return;
    }
    std::vector<std::string> label_fields;
    for (const auto& [format, schema] : task.schemas) {
        if (const std::string* field = schema.slot("label")) {
            label_fields.push_back(*field);
        }
    }
    for (const auto& tpl : task.templates) {
        label_fields.push_back(tpl.label_field);
    }
    for (const auto& [split_name, records] : task.splits) {
        for (std::size_t row = 0; row < records.size(); ++row) {
            for (const auto& field : label_fields) {
                const Json* value = records[row].find(field);
                if (value == nullptr || !value->is_number_integer()) {
                    continue;
                }
                if (value->get<std::int64_t>() >= static_cast<std::int64_t>(task.label_vocabulary.size())) {
                    throw Error(ErrorKind::ConfigError, "task " + task.name + " split " + split_name + " row " +
                                                            std::to_string(row) + ": label outside the vocabulary");
                }
            }
        }
    }
}

} // namespace

std::string_view to_string(TaskType type) noexcept {
    for (const auto& [t, name] : kTaskTypeNames) {
        if (t == type) {
            return name;
        }
    }
    return "unknown";
}

TaskType parse_task_type(std::string_view name) {
    for (const auto& [t, n] : kTaskTypeNames) {
        if (n == name) {
            return t;
        }
    }
    throw Error(ErrorKind::ConfigError, "unknown task type '" + std::string(name) + "'");
}

const std::vector<RawRecord>& Task::split(std::string_view split_name) const {
    if (auto it = splits.find(std::string(split_name)); it != splits.end()) {
        return it->second;
    }
    throw Error(ErrorKind::UnknownSplit, "task " + name + " has no split '" + std::string(split_name) + "'");
}

const PromptTemplate& Task::template_named(std::string_view tpl_name) const {
    for (const auto& tpl : templates) {
        if (tpl.name == tpl_name) {
            return tpl;
        }
    }
    throw Error(ErrorKind::InvalidArgument, "task " + name + " has no template '" + std::string(tpl_name) + "'");
}

const FieldSchema* Task::schema(InstanceFormat format) const {
    auto it = schemas.find(format);
    return it == schemas.end() ? nullptr : &it->second;
}

std::vector<RawRecord> load_jsonl(const fs::path& path, std::string_view split) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorKind::IoError, "cannot open " + path.string());
    }
    std::vector<RawRecord> records;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.find_first_not_of(" \t") == std::string::npos) {
            continue;
        }
        try {
            records.push_back(RawRecord::parse(line));
        } catch (const Error& e) {
            throw Error(ErrorKind::ParseError,
                        path.string() + " (" + std::string(split) + ") line " + std::to_string(line_no) + ": " +
                            e.what(),
                        line_no);
        }
    }
    if (in.bad()) {
        throw Error(ErrorKind::IoError, "read failure on " + path.string());
    }
    return records;
}

Task load_task_config(const fs::path& path) {
    const std::string text = read_text(path);
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw Error(ErrorKind::ParseError, path.string() + ": " + e.what());
    }
    Task task;
    task.config_path = path;
    CanonicalWriter digest_input;
    digest_input.str(text);
    try {
        task.name = j.at("name").get<std::string>();
        task.type = parse_task_type(j.at("type").get<std::string>());
        for (const auto& [split_name, file] : j.at("splits").items()) {
            const fs::path data_path = path.parent_path() / file.get<std::string>();
            task.splits.emplace(split_name, load_jsonl(data_path, split_name));
            digest_input.str(split_name).str(read_text(data_path));
        }
        task.label_vocabulary = j.value("label_vocabulary", std::vector<std::string>{});
        task.metric_overrides = j.value("metrics", std::vector<std::string>{});
        if (auto it = j.find("schemas"); it != j.end()) {
            for (const auto& [format, schema] : it->items()) {
                task.schemas.emplace(parse_instance_format(format), FieldSchema::from_json(schema));
            }
        }
        if (auto it = j.find("templates"); it != j.end()) {
            for (const auto& tpl : *it) {
                task.templates.push_back(PromptTemplate::from_json(tpl));
            }
        }
        task.default_template =
            j.value("default_template", task.templates.empty() ? std::string() : task.templates.front().name);
        if (auto it = j.find("mc_prefixes"); it != j.end()) {
            task.question_prefix = it->value("question", task.question_prefix);
            task.answer_prefix = it->value("answer", task.answer_prefix);
        }
        task.t5_field_order = j.value("t5_fields", std::vector<std::string>{});
        if (auto it = j.find("generation"); it != j.end()) {
            task.generation.max_tokens = it->value("max_tokens", task.generation.max_tokens);
            task.generation.stop = it->value("stop", task.generation.stop);
        }
    } catch (const Json::exception& e) {
        throw Error(ErrorKind::ConfigError, path.string() + ": " + e.what());
    }
    if (!task.default_template.empty()) {
        (void)task.template_named(task.default_template);
    }
    check_labels(task);
    task.content_digest = sha256_hex(digest_input.bytes());
    return task;
}

void TaskRegistry::add(Task task) {
    if (tasks_.contains(task.name)) {
        throw Error(ErrorKind::ConfigError, "task '" + task.name + "' registered twice");
    }
    auto name = task.name;
    tasks_.emplace(std::move(name), std::move(task));
}

const Task& TaskRegistry::get(std::string_view name) const {
    if (auto it = tasks_.find(name); it != tasks_.end()) {
        return it->second;
    }
    throw Error(ErrorKind::UnknownTask, "unknown task '" + std::string(name) + "'");
}

bool TaskRegistry::contains(std::string_view name) const { return tasks_.find(name) != tasks_.end(); }

std::vector<std::string> TaskRegistry::names() const {
    std::vector<std::string> out;
    for (const auto& [name, task] : tasks_) {
        out.push_back(name);
    }
    return out;
}

TaskRegistry TaskRegistry::from_directory(const fs::path& dir) {
    if (!fs::is_directory(dir)) {
        throw Error(ErrorKind::IoError, "task directory " + dir.string() + " does not exist");
    }
    std::vector<fs::path> configs;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".json") {
            configs.push_back(entry.path());
        }
    }
    std::sort(configs.begin(), configs.end());
    TaskRegistry registry;
    for (const auto& config : configs) {
        registry.add(load_task_config(config));
    }
    return registry;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) {
        perm[i] = i;
    }
    std::mt19937_64 engine(seed);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const auto j = i + static_cast<std::size_t>(bounded(engine, n - i));
        std::swap(perm[i], perm[j]);
    }
    return perm;
}

FewshotSample sample_fewshot(const Task& task, std::size_t k, std::uint64_t seed, const RecordId& exclude) {
    FewshotSample sample;
    sample.seed = seed;
    if (task.splits.contains("train")) {
        sample.source_split = "train";
    } else if (task.splits.contains("validation")) {
        sample.source_split = "validation";
    }
    if (k == 0) {
        return sample;
    }
    if (sample.source_split.empty()) {
        throw Error(ErrorKind::InsufficientDemos, "task " + task.name + " has neither a train nor a validation split");
    }
    const auto& records = task.split(sample.source_split);
    std::vector<std::size_t> candidates;
    candidates.reserve(records.size());
    for (std::size_t row = 0; row < records.size(); ++row) {
        if (exclude.task == task.name && exclude.split == sample.source_split && exclude.row == row) {
            continue;
        }
        candidates.push_back(row);
    }
    if (candidates.size() < k) {
        throw Error(ErrorKind::InsufficientDemos, "need " + std::to_string(k) + " demos, " + task.name + "/" +
                                                      sample.source_split + " offers " +
                                                      std::to_string(candidates.size()));
    }
    const auto perm = seeded_permutation(candidates.size(), seed);
    for (std::size_t i = 0; i < k; ++i) {
        const auto row = candidates[perm[i]];
        sample.demo_records.push_back(records[row]);
        sample.demo_ids.push_back({task.name, sample.source_split, row});
    }
    return sample;
}

std::vector<std::string> suggested_metrics(const Task& task) {
    if (!task.metric_overrides.empty()) {
        return task.metric_overrides;
    }
    switch (task.type) {
    case TaskType::MultipleChoice:
    case TaskType::Classification:
    case TaskType::Entailment:
        return {"accuracy", "relative_improvement"};
    case TaskType::QuestionAnswering:
        return {"squad"};
    case TaskType::LanguageModeling:
        return {"ppl_word", "ppl_byte", "bits_per_byte"};
    }
    return {};
}

std::vector<std::string> suggested_metrics(const TaskRegistry& registry, std::string_view task_name) {
    return suggested_metrics(registry.get(task_name));
}

} // namespace evalnexus
