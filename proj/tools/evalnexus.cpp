#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "evalnexus/analysis.hpp"
#include "evalnexus/cache.hpp"
#include "evalnexus/error.hpp"
#include "evalnexus/runner.hpp"
#include "evalnexus/tasks.hpp"

namespace fs = std::filesystem;
using namespace evalnexus;

namespace {

constexpr const char* kDefaultCache = ".evalnexus_cache";

struct Paths {
    std::string tasks_dir = "fixtures/tasks";
    std::string models_file = "fixtures/models.json";
};

ModelRegistry load_models(const std::string& file, bool explicit_file) {
    if (!explicit_file && !fs::exists(file)) {
        return {};
    }
    return ModelRegistry::from_file(file);
}

fs::path default_cache_dir() {
    if (const char* env = std::getenv("EVALNEXUS_CACHE"); env != nullptr && *env != '\0') {
        return env;
    }
    return kDefaultCache;
}

int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::UnknownTask:
    case ErrorKind::UnknownModel:
    case ErrorKind::ConfigError:
    case ErrorKind::InvalidArgument:
    case ErrorKind::IncompatibleWrapper:
        return 2;
    default:
        return 1;
    }
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorKind::IoError, "cannot write " + path);
    }
    out << text;
}

std::string one_line(std::string text) {
    std::replace(text.begin(), text.end(), '\n', ' ');
    return text;
}

std::string format_value(double v) {
    std::ostringstream out;
    out << std::setprecision(6) << v;
    return out.str();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"evalnexus: evaluate language models on tasks, analyze result matrices"};
    app.require_subcommand(1);
    Paths paths;

    // run
    auto* run = app.add_subcommand("run", "Evaluate a model on one or more tasks");
    RunConfig config;
    std::vector<std::string> task_args;
    std::string wrapper = "rc";
    std::string normalization = "sum";
    std::string stride_arg;
    std::size_t limit = 0;
    std::string cache_dir;
    bool no_cache = false;
    std::string out_dir = "evalnexus-out";
    bool allow_straddle = false;
    bool metaicl = false;
    TokenBudget budget;
    bool models_file_set = false;
    config.workers = std::max(1u, std::thread::hardware_concurrency());
    run->add_option("--model", config.model, "Registry name or inline spec (uniform:V, ngram:o:corpus[:k], remote:model@url)")
        ->required();
    run->add_option("--task", task_args, "Task name; repeat or comma-separate for several")->required()->delimiter(',');
    run->add_option("--wrapper", wrapper, "rc (ranked classification) or lm (language model)")
        ->check(CLI::IsMember({"rc", "lm"}));
    run->add_option("--split", config.split, "Dataset split to evaluate")->required();
    run->add_option("--shots", config.num_shots, "Number of in-context demonstrations");
    run->add_option("--seed", config.seed, "Few-shot sampling seed");
    run->add_option("--normalization", normalization, "Choice score: sum, per_token or per_byte")
        ->check(CLI::IsMember({"sum", "per_token", "per_byte"}));
    run->add_option("--prompt", config.prompt, "Template name, or 'all' for every template");
    run->add_option("--limit", limit, "Evaluate only the first N instances")->check(CLI::PositiveNumber);
    run->add_option("--cache-dir", cache_dir, "Step cache directory (default $EVALNEXUS_CACHE or .evalnexus_cache)");
    run->add_flag("--no-cache", no_cache, "Disable the step cache");
    run->add_option("--out", out_dir, "Output directory for predictions and reports");
    run->add_option("--max-len", config.max_len, "Perplexity window length in tokens");
    run->add_option("--stride", stride_arg, "Window stride in tokens, or 'nonoverlap' for stride = max-len");
    run->add_option("--max-batch-tokens", config.max_batch_tokens, "Token budget per perplexity batch");
    run->add_option("--workers", config.workers, "Worker threads")->check(CLI::PositiveNumber);
    run->add_flag("--allow-straddle", allow_straddle, "Remote: attribute straddling tokens to the continuation");
    run->add_flag("--metaicl", metaicl, "Apply MetaICL truncation to few-shot prompts");
    run->add_option("--per-demo-cap", budget.per_demo_cap, "MetaICL per-demonstration token cap");
    run->add_option("--total-cap", budget.total_cap, "MetaICL total token cap");
    run->add_option("--tasks-dir", paths.tasks_dir, "Directory of task configs");
    run->add_option("--models-file", paths.models_file, "Model registry file")
        ->each([&](const std::string&) { models_file_set = true; });

    // tasks list / models list
    auto* tasks_cmd = app.add_subcommand("tasks", "Task registry");
    tasks_cmd->require_subcommand(1);
    auto* tasks_list = tasks_cmd->add_subcommand("list", "List registered tasks");
    tasks_list->add_option("--tasks-dir", paths.tasks_dir, "Directory of task configs");
    auto* models_cmd = app.add_subcommand("models", "Model registry");
    models_cmd->require_subcommand(1);
    auto* models_list = models_cmd->add_subcommand("list", "List registered models");
    models_list->add_option("--models-file", paths.models_file, "Model registry file")
        ->each([&](const std::string&) { models_file_set = true; });

    // analyze
    auto* analyze = app.add_subcommand("analyze", "Analyze a results matrix CSV");
    std::string matrix_csv;
    std::string analysis;
    std::string analysis_out;
    analyze->add_option("matrix", matrix_csv, "CSV with header model,group,<dataset...>")->required();
    analyze->add_option("command", analysis, "correlations or summary")
        ->required()
        ->check(CLI::IsMember({"correlations", "summary"}));
    analyze->add_option("--out", analysis_out, "Also write correlations CSV / summary JSON here");

    // cache gc
    auto* cache_cmd = app.add_subcommand("cache", "Step cache maintenance");
    cache_cmd->require_subcommand(1);
    auto* gc = cache_cmd->add_subcommand("gc", "Remove old cache entries");
    double older_than_days = 0.0;
    std::string gc_dir;
    gc->add_option("--older-than", older_than_days, "Age in days")->required()->check(CLI::NonNegativeNumber);
    gc->add_option("--cache-dir", gc_dir, "Cache directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: InvalidArgument: " << e.what() << "\n";
        return 2;
    }

    try {
        if (*run) {
            config.tasks = task_args;
            config.wrapper = parse_wrapper(wrapper);
            config.normalization = parse_normalization(normalization);
            if (limit > 0) {
                config.limit = limit;
            }
            if (!stride_arg.empty()) {
                if (stride_arg == "nonoverlap") {
                    config.stride = config.max_len;
                } else {
                    try {
                        config.stride = std::stoull(stride_arg);
                    } catch (const std::exception&) {
                        throw Error(ErrorKind::InvalidArgument, "--stride expects a number or 'nonoverlap'");
                    }
                }
            }
            if (!no_cache) {
                config.cache_dir = cache_dir.empty() ? default_cache_dir() : fs::path(cache_dir);
            }
            if (metaicl) {
                config.metaicl = budget;
            }
            config.validate();
            const auto tasks = TaskRegistry::from_directory(paths.tasks_dir);
            for (const auto& name : config.tasks) {
                (void)tasks.get(name);
            }
            auto spec = load_models(paths.models_file, models_file_set).resolve(config.model);
            if (auto* remote = std::get_if<RemoteParams>(&spec.params); remote && allow_straddle) {
                remote->allow_straddle = true;
            }
            const auto result = run_evaluation(config, tasks, load_model(spec));
            write_outputs(result, out_dir);
            for (const auto& r : result.reports) {
                for (const auto& [metric, value] : r.values) {
                    std::cout << r.task << '\t' << r.prompt_name.value_or("-") << '\t' << metric << '\t'
                              << format_value(value) << '\n';
                }
            }
            std::cerr << "instances scored with " << result.backend_score_calls << " backend scoring calls; cache "
                      << result.cache.hits << " hits, " << result.cache.misses << " misses; wrote " << out_dir
                      << "\n";
        } else if (*tasks_list) {
            const auto tasks = TaskRegistry::from_directory(paths.tasks_dir);
            for (const auto& name : tasks.names()) {
                const auto& task = tasks.get(name);
                std::cout << name << '\t' << to_string(task.type) << "\tsplits=";
                bool first = true;
                for (const auto& [split, records] : task.splits) {
                    std::cout << (first ? "" : ",") << split << '(' << records.size() << ')';
                    first = false;
                }
                std::cout << "\tmetrics=";
                first = true;
                for (const auto& m : suggested_metrics(task)) {
                    std::cout << (first ? "" : ",") << m;
                    first = false;
                }
                std::cout << '\n';
            }
        } else if (*models_list) {
            const auto models = load_models(paths.models_file, models_file_set);
            for (const auto& name : models.names()) {
                std::cout << name << '\t' << models.get(name).to_json().dump() << '\n';
            }
        } else if (*analyze) {
            const auto matrix = ResultsMatrix::load_csv(matrix_csv);
            if (analysis == "correlations") {
                const auto table = correlation_table(matrix);
                std::cout << table.to_text();
                if (!analysis_out.empty()) {
                    write_file(analysis_out, table.to_csv());
                }
            } else {
                const auto summary = macro_summary(matrix);
                std::cout << summary.to_text();
                if (!analysis_out.empty()) {
                    write_file(analysis_out, summary.to_json().dump(2) + "\n");
                }
            }
        } else if (*gc) {
            StepCache cache(gc_dir.empty() ? default_cache_dir() : fs::path(gc_dir));
            const auto age = std::chrono::duration_cast<std::chrono::system_clock::duration>(
                std::chrono::duration<double, std::ratio<86400>>(older_than_days));
            std::cout << "removed " << cache.gc(age) << " entries\n";
        }
    } catch (const Error& e) {
        std::cerr << "error: " << to_string(e.kind()) << ": " << one_line(e.what()) << "\n";
        return exit_code(e.kind());
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: IoError: " << one_line(e.what()) << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: Internal: " << one_line(e.what()) << "\n";
        return 1;
    }
    return 0;
}
