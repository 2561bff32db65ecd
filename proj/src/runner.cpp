#include "evalnexus/runner.hpp"

#include <atomic>
#include <ctime>
#include <exception>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "evalnexus/error.hpp"
#include "evalnexus/perplexity.hpp"

namespace evalnexus {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kStepVersion = "2";

// Runs fn(i) for i in [0, n) on up to `workers` threads. Results are written
// by index, so completion order never shows; the lowest failing index wins.
template <class F>
void parallel_for(std::size_t n, std::size_t workers, F&& fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto drain = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::min(workers, n);
    if (threads <= 1) {
        drain();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back(drain);
        }
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

TokenSeq to_tokens(std::string_view bytes) {
    TokenSeq seq;
    seq.reserve(bytes.size());
    for (unsigned char c : bytes) {
        seq.push_back(c);
    }
    return seq;
}

std::string from_tokens(const TokenSeq& seq, std::size_t count) {
    std::string out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(static_cast<char>(seq[i]));
    }
    return out;
}

struct RcUnit {
    std::string instance_id;
    RcInstance instance;
};

struct PromptPlan {
    const PromptTemplate* tpl = nullptr; // null: question/answer framing of the MC schema
    std::optional<std::string> name() const { return tpl ? std::optional(tpl->name) : std::nullopt; }
};

void check_wrapper(const Task& task, Wrapper wrapper) {
    const bool rc_ok = task.type == TaskType::MultipleChoice || task.type == TaskType::Classification ||
                       task.type == TaskType::Entailment;
    const bool lm_ok = task.type == TaskType::LanguageModeling || task.type == TaskType::QuestionAnswering;
    if ((wrapper == Wrapper::Rc && !rc_ok) || (wrapper == Wrapper::Lm && !lm_ok)) {
        throw Error(ErrorKind::IncompatibleWrapper, "wrapper " + std::string(to_string(wrapper)) +
                                                        " cannot evaluate " + std::string(to_string(task.type)) +
                                                        " task " + task.name);
    }
}

std::vector<PromptPlan> select_prompts(const Task& task, const std::string& prompt) {
    if (prompt == "all") {
        if (task.templates.empty()) {
            throw Error(ErrorKind::InvalidArgument, "task " + task.name + " has no prompt templates");
        }
        std::vector<PromptPlan> plans;
        for (const auto& tpl : task.templates) {
            plans.push_back({&tpl});
        }
        return plans;
    }
    if (!prompt.empty()) {
        return {{&task.template_named(prompt)}};
    }
    if (!task.default_template.empty()) {
        return {{&task.template_named(task.default_template)}};
    }
    if (task.type == TaskType::MultipleChoice && task.schema(InstanceFormat::MultipleChoice) != nullptr) {
        return {{nullptr}};
    }
    throw Error(ErrorKind::ConfigError, "task " + task.name + " has neither templates nor a multiple_choice schema");
}

std::vector<RawRecord> limited(const std::vector<RawRecord>& records, const std::optional<std::size_t>& limit) {
    const std::size_t n = limit ? std::min(*limit, records.size()) : records.size();
    return {records.begin(), records.begin() + static_cast<std::ptrdiff_t>(n)};
}

class Evaluator {
public:
    Evaluator(const RunConfig& config, std::shared_ptr<const LanguageModel> model)
        : config_(config), model_(std::move(model)) {
        if (config_.cache_dir) {
            cache_.emplace(*config_.cache_dir);
        }
    }

    void run_task(const Task& task, RunResult& result, Json& task_reports) {
        check_wrapper(task, config_.wrapper);
        const auto records = limited(task.split(config_.split), config_.limit);
        if (records.empty()) {
            throw Error(ErrorKind::InvalidArgument, "split " + config_.split + " of task " + task.name + " is empty");
        }
        Json info = {{"task", task.name},
                     {"type", to_string(task.type)},
                     {"split", config_.split},
                     {"content_digest", task.content_digest},
                     {"instance_count", records.size()}};
        switch (task.type) {
        case TaskType::LanguageModeling:
            run_perplexity(task, records, result, info);
            break;
        case TaskType::QuestionAnswering:
            run_generation(task, records, result, info);
            break;
        default:
            run_rc(task, records, result, info);
        }
        task_reports.push_back(std::move(info));
    }

    CacheStats cache_stats() const { return cache_ ? cache_->stats() : CacheStats{}; }

private:
    StepCache* cache() { return cache_ ? &*cache_ : nullptr; }

    RcInstance render_target(const Task& task, const PromptPlan& plan, const RawRecord& raw) const {
        if (plan.tpl) {
            return render(*plan.tpl, raw, task.label_vocabulary);
        }
        return mc_to_rc(to_mc(raw, *task.schema(InstanceFormat::MultipleChoice)), task.question_prefix,
                        task.answer_prefix);
    }

    RcInstance with_demos(const Task& task, const PromptPlan& plan, const RcInstance& target, std::size_t row) const {
        if (config_.num_shots == 0) {
            return target;
        }
        const auto sample = sample_fewshot(task, config_.num_shots, splitmix64(config_.seed ^ row),
                                           RecordId{task.name, config_.split, row});
        const std::string separator = plan.tpl ? plan.tpl->demo_separator : "\n\n";
        std::vector<std::string> demos;
        for (const auto& demo : sample.demo_records) {
            demos.push_back(render_demo(render_target(task, plan, demo)));
        }
        if (!config_.metaicl) {
            return assemble_fewshot(demos, target, separator);
        }
        std::vector<TokenSeq> demo_tokens;
        for (const auto& demo : demos) {
            demo_tokens.push_back(to_tokens(demo + separator));
        }
        RcInstance out = target;
        for (auto& choice : out.choices) {
            const auto seq = metaicl_truncate(demo_tokens, to_tokens(choice.context + choice.continuation), *config_.metaicl);
            choice.context = from_tokens(seq, seq.size() - choice.continuation.size());
        }
        return out;
    }

    std::vector<RcUnit> render_units(const Task& task, const PromptPlan& plan, const std::vector<RawRecord>& records) {
        CanonicalWriter inputs;
        inputs.str(task.content_digest).str(config_.split).u64(records.size());
        inputs.str(plan.tpl ? plan.tpl->to_json().dump() : "mc:" + task.question_prefix + "\x1f" + task.answer_prefix);
        inputs.u64(config_.num_shots).u64(config_.seed).str(kSamplerName);
        inputs.boolean(config_.metaicl.has_value());
        if (config_.metaicl) {
            inputs.u64(config_.metaicl->per_demo_cap).u64(config_.metaicl->total_cap);
        }
        const auto key = step_key("render", kStepVersion, inputs.bytes());
        const auto payload = run_step(cache(), key, [&] {
            Json out = Json::array();
            std::vector<Json> rendered(records.size());
            parallel_for(records.size(), config_.workers, [&](std::size_t row) {
                const auto inst = with_demos(task, plan, render_target(task, plan, records[row]), row);
                inst.validate();
                rendered[row] = {{"id", RecordId{task.name, config_.split, row}.str()}, {"instance", to_json(inst)}};
            });
            for (auto& r : rendered) {
                out.push_back(std::move(r));
            }
            return out.dump();
        });
        std::vector<RcUnit> units;
        for (const auto& j : Json::parse(payload)) {
            units.push_back({j.at("id").get<std::string>(), rc_from_json(j.at("instance"))});
        }
        return units;
    }

    std::vector<ChoiceScore> score_unit(const RcInstance& inst) {
        CanonicalWriter inputs;
        inputs.str(model_->identity()).list(inst.choices.size());
        for (const auto& c : inst.choices) {
            inputs.str(c.context).str(c.continuation);
        }
        const auto key = step_key("score-rc", kStepVersion, inputs.bytes());
        const auto payload = run_step(cache(), key, [&] {
            Json out = Json::array();
            for (const auto& c : inst.choices) {
                const auto s = score_choice(*model_, c);
                out.push_back(Json::array({s.sum_logprob, s.token_count, s.byte_count}));
            }
            return out.dump();
        });
        std::vector<ChoiceScore> scores;
        for (const auto& s : Json::parse(payload)) {
            scores.push_back({s.at(0).get<double>(), s.at(1).get<std::size_t>(), s.at(2).get<std::size_t>()});
        }
        return scores;
    }

    MetricReport aggregate(const Task& task, const std::optional<std::string>& prompt_name,
                           const std::string& score_digest, const std::function<MetricReport()>& compute) {
        CanonicalWriter inputs;
        inputs.str(task.name).str(to_string(config_.wrapper)).str(config_.model);
        inputs.str(prompt_name.value_or("")).str(to_string(config_.normalization)).str(score_digest);
        const auto key = step_key("aggregate", kStepVersion, inputs.bytes());
        return MetricReport::from_json(
            Json::parse(run_step(cache(), key, [&] { return compute().to_json().dump(); })));
    }

    void run_rc(const Task& task, const std::vector<RawRecord>& records, RunResult& result, Json& info) {
        Json prompts = Json::array();
        for (const auto& plan : select_prompts(task, config_.prompt)) {
            prompts.push_back(plan.name() ? Json(*plan.name()) : Json(nullptr));
            const auto units = render_units(task, plan, records);
            std::vector<std::vector<ChoiceScore>> scores(units.size());
            parallel_for(units.size(), config_.workers, [&](std::size_t i) { scores[i] = score_unit(units[i].instance); });

            std::vector<PredictionRecord> preds;
            std::vector<RcInstance> instances;
            Json all_scores = Json::array();
            for (std::size_t i = 0; i < units.size(); ++i) {
                auto pred = predict_from_scores(scores[i], config_.normalization, units[i].instance.correct_choice);
                pred.instance_id = units[i].instance_id;
                pred.prompt_name = plan.name();
                for (const auto& s : scores[i]) {
                    all_scores.push_back(Json::array({s.sum_logprob, s.token_count, s.byte_count}));
                }
                result.predictions.push_back(to_json(pred, config_.normalization));
                preds.push_back(std::move(pred));
                instances.push_back(units[i].instance);
            }
            auto report = aggregate(task, plan.name(), sha256_hex(all_scores.dump()), [&] {
                MetricReport r;
                r.task = task.name;
                r.model = config_.model;
                r.wrapper = std::string(to_string(config_.wrapper));
                r.prompt_name = plan.name();
                r.instance_count = preds.size();
                const double acc = accuracy(preds);
                const double baseline = task.type == TaskType::MultipleChoice || task.label_vocabulary.empty()
                                            ? random_baseline(instances)
                                            : random_baseline(task.label_vocabulary.size());
                r.values["accuracy"] = acc;
                r.values["random_baseline"] = baseline;
                r.values["relative_improvement"] = relative_improvement(acc, baseline);
                return r;
            });
            result.reports.push_back(std::move(report));
        }
        info["prompts"] = std::move(prompts);
        info["num_shots"] = config_.num_shots;
        info["normalization"] = to_string(config_.normalization);
    }

    std::string qa_prompt(const Task& task, const RawRecord& raw) const {
        if (!config_.prompt.empty()) {
            return render_text(task.template_named(config_.prompt).context_template, raw);
        }
        const auto qa = to_qa(raw, *task.schema(InstanceFormat::QuestionAnswering));
        return "Context: " + qa.context + "\n" + task.question_prefix + qa.question + task.answer_prefix;
    }

    void run_generation(const Task& task, const std::vector<RawRecord>& records, RunResult& result, Json& info) {
        const FieldSchema* schema = task.schema(InstanceFormat::QuestionAnswering);
        if (schema == nullptr) {
            throw Error(ErrorKind::ConfigError, "task " + task.name + " has no question_answering schema");
        }
        std::vector<QaInstance> instances;
        std::vector<std::string> prompts;
        for (std::size_t row = 0; row < records.size(); ++row) {
            instances.push_back(to_qa(records[row], *schema));
            std::string prompt = qa_prompt(task, records[row]);
            if (config_.num_shots > 0) {
                const auto sample = sample_fewshot(task, config_.num_shots, splitmix64(config_.seed ^ row),
                                                   RecordId{task.name, config_.split, row});
                std::string prefix;
                for (const auto& demo : sample.demo_records) {
                    const auto demo_qa = to_qa(demo, *schema);
                    if (demo_qa.answers.texts.empty()) {
                        throw Error(ErrorKind::MissingGold, "few-shot demo without an answer");
                    }
                    prefix += qa_prompt(task, demo) + " " + demo_qa.answers.texts.front() + "\n\n";
                }
                prompt = prefix + prompt;
            }
            prompts.push_back(std::move(prompt));
        }
        std::vector<std::string> outputs(records.size());
        parallel_for(records.size(), config_.workers, [&](std::size_t i) {
            CanonicalWriter inputs;
            inputs.str(model_->identity()).str(prompts[i]).u64(task.generation.max_tokens);
            inputs.list(task.generation.stop.size());
            for (const auto& s : task.generation.stop) {
                inputs.str(s);
            }
            outputs[i] = run_step(cache(), step_key("generate", kStepVersion, inputs.bytes()), [&] {
                return model_->generate(prompts[i], task.generation.max_tokens, task.generation.stop);
            });
        });
        double em = 0.0;
        double f1 = 0.0;
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto s = squad_em_f1(outputs[i], instances[i].answers.texts);
            em += s.exact_match;
            f1 += s.f1;
            result.predictions.push_back({{"instance_id", RecordId{task.name, config_.split, i}.str()},
                                          {"prediction", outputs[i]},
                                          {"golds", instances[i].answers.texts},
                                          {"exact_match", s.exact_match},
                                          {"f1", s.f1}});
        }
        MetricReport r;
        r.task = task.name;
        r.model = config_.model;
        r.wrapper = std::string(to_string(config_.wrapper));
        r.instance_count = records.size();
        r.values["squad_em"] = em / static_cast<double>(records.size());
        r.values["squad_f1"] = f1 / static_cast<double>(records.size());
        result.reports.push_back(std::move(r));
        info["num_shots"] = config_.num_shots;
        info["generation"] = {{"max_tokens", task.generation.max_tokens}, {"stop", task.generation.stop}};
    }

    void run_perplexity(const Task& task, const std::vector<RawRecord>& records, RunResult& result, Json& info) {
        std::string text_field = "text";
        if (const auto* schema = task.schema(InstanceFormat::Perplexity)) {
            text_field = schema->require_slot("text");
        }
        const std::size_t stride = config_.effective_stride();
        (void)plan_windows(1, config_.max_len, stride); // rejects bad strides before any work
        std::vector<PerplexityDoc> docs;
        for (std::size_t row = 0; row < records.size(); ++row) {
            docs.push_back(make_doc(RecordId{task.name, config_.split, row}.str(), records[row].text(text_field)));
        }
        parallel_for(docs.size(), config_.workers, [&](std::size_t i) {
            if (model_->byte_level()) {
                return;
            }
            CanonicalWriter inputs;
            inputs.str(model_->identity()).str(docs[i].text);
            docs[i].token_count = std::stoull(run_step(cache(), step_key("tokenize", kStepVersion, inputs.bytes()),
                                                       [&] { return std::to_string(model_->tokenize(docs[i].text).size()); }));
        });

        std::vector<std::size_t> order;
        for (const auto& batch : batch_by_length(docs, config_.max_batch_tokens, config_.max_len)) {
            order.insert(order.end(), batch.begin(), batch.end());
        }
        std::vector<DocLoglik> scores(docs.size());
        parallel_for(order.size(), config_.workers, [&](std::size_t k) {
            const auto& doc = docs[order[k]];
            CanonicalWriter inputs;
            inputs.str(model_->identity()).str(doc.text).u64(config_.max_len).u64(stride);
            const auto payload = run_step(cache(), step_key("score-doc", kStepVersion, inputs.bytes()), [&] {
                const auto s = doc_loglik(*model_, doc, config_.max_len, stride);
                return Json::array({s.total_nats, s.residual, s.scored_tokens}).dump();
            });
            const auto j = Json::parse(payload);
            scores[order[k]] = {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<std::size_t>()};
        });

        NatsSum sum;
        std::size_t words = 0;
        std::size_t bytes = 0;
        Json all_scores = Json::array();
        for (std::size_t i = 0; i < docs.size(); ++i) {
            sum.add(scores[i].total_nats);
            sum.add(scores[i].residual);
            words += docs[i].word_count;
            bytes += docs[i].byte_count;
            all_scores.push_back(Json::array({scores[i].total_nats, scores[i].scored_tokens}));
            result.predictions.push_back({{"instance_id", docs[i].doc_id},
                                          {"total_nats", scores[i].total_nats},
                                          {"scored_tokens", scores[i].scored_tokens},
                                          {"word_count", docs[i].word_count},
                                          {"byte_count", docs[i].byte_count}});
        }
        const double total = sum.value();
        auto report = aggregate(task, std::nullopt, sha256_hex(all_scores.dump()), [&] {
            const auto m = perplexity_metrics(total, words, bytes);
            MetricReport r;
            r.task = task.name;
            r.model = config_.model;
            r.wrapper = std::string(to_string(config_.wrapper));
            r.instance_count = docs.size();
            r.values["ppl_word"] = m.ppl_word;
            r.values["ppl_byte"] = m.ppl_byte;
            r.values["bits_per_byte"] = m.bits_per_byte;
            return r;
        });
        result.reports.push_back(std::move(report));
        info["window"] = {{"max_len", config_.max_len}, {"stride", stride}};
        info["denominators"] = {{"word", "whitespace-delimited segments"},
                                {"byte", "UTF-8 bytes"},
                                {"words", words},
                                {"bytes", bytes}};
        info["total_nats"] = total;
    }

    const RunConfig& config_;
    std::shared_ptr<const LanguageModel> model_;
    std::optional<StepCache> cache_;
};

} // namespace

std::string_view to_string(Wrapper wrapper) noexcept { return wrapper == Wrapper::Rc ? "rc" : "lm"; }

Wrapper parse_wrapper(std::string_view name) {
    if (name == "rc") {
        return Wrapper::Rc;
    }
    if (name == "lm") {
        return Wrapper::Lm;
    }
    throw Error(ErrorKind::InvalidArgument, "unknown wrapper '" + std::string(name) + "' (expected rc or lm)");
}

void RunConfig::validate() const {
    if (model.empty()) {
        throw Error(ErrorKind::InvalidArgument, "no model given");
    }
    if (tasks.empty()) {
        throw Error(ErrorKind::InvalidArgument, "no task given");
    }
    if (split.empty()) {
        throw Error(ErrorKind::InvalidArgument, "no split given");
    }
    if (limit && *limit == 0) {
        throw Error(ErrorKind::InvalidArgument, "--limit must be at least 1");
    }
    if (workers == 0) {
        throw Error(ErrorKind::InvalidArgument, "--workers must be at least 1");
    }
    const auto s = effective_stride();
    if (max_len < 2 || s < 1 || s > max_len) {
        throw Error(ErrorKind::InvalidStride, "need max_len >= 2 and 1 <= stride <= max_len");
    }
    if (metaicl) {
        metaicl->validate();
    }
}

Json RunConfig::to_json() const {
    Json j = {{"model", model},
              {"tasks", tasks},
              {"wrapper", to_string(wrapper)},
              {"split", split},
              {"num_shots", num_shots},
              {"seed", seed},
              {"normalization", to_string(normalization)},
              {"prompt", prompt.empty() ? Json(nullptr) : Json(prompt)},
              {"limit", limit ? Json(*limit) : Json(nullptr)},
              {"max_len", max_len},
              {"stride", effective_stride()},
              {"max_batch_tokens", max_batch_tokens}};
    j["metaicl"] = metaicl ? Json{{"per_demo_cap", metaicl->per_demo_cap}, {"total_cap", metaicl->total_cap}}
                           : Json(nullptr);
    return j;
}

RunResult run_evaluation(const RunConfig& config, const TaskRegistry& tasks,
                         std::shared_ptr<const LanguageModel> model) {
    config.validate();
    if (config.metaicl && !model->byte_level()) {
        throw Error(ErrorKind::UnsupportedBackend, "MetaICL truncation needs a byte-level backend");
    }
    for (const auto& name : config.tasks) {
        check_wrapper(tasks.get(name), config.wrapper);
    }
    RunResult result;
    const auto started = utc_now();
    const auto calls_before = model->score_calls();
    Evaluator evaluator(config, model);
    Json task_reports = Json::array();
    for (const auto& name : config.tasks) {
        evaluator.run_task(tasks.get(name), result, task_reports);
    }
    result.cache = evaluator.cache_stats();
    result.backend_score_calls = model->score_calls() - calls_before;

    Json metrics = Json::array();
    for (const auto& r : result.reports) {
        metrics.push_back(r.to_json());
    }
    result.report = {{"config", config.to_json()},
                     {"model", {{"name", config.model}, {"spec", model->spec().to_json()}, {"identity", model->identity()}}},
                     {"sampler", kSamplerName},
                     {"tasks", std::move(task_reports)},
                     {"metrics", std::move(metrics)}};
    result.meta = {{"started_at", started},
                   {"finished_at", utc_now()},
                   {"workers", config.workers},
                   {"cache",
                    {{"enabled", config.cache_dir.has_value()},
                     {"dir", config.cache_dir ? Json(config.cache_dir->string()) : Json(nullptr)},
                     {"hits", result.cache.hits},
                     {"misses", result.cache.misses},
                     {"corrupt", result.cache.corrupt}}},
                   {"backend_score_calls", result.backend_score_calls}};
    return result;
}

RunResult run_evaluation(const RunConfig& config, const TaskRegistry& tasks, const ModelRegistry& models) {
    config.validate();
    for (const auto& name : config.tasks) {
        check_wrapper(tasks.get(name), config.wrapper);
    }
    return run_evaluation(config, tasks, load_model(models.resolve(config.model)));
}

void write_outputs(const RunResult& result, const fs::path& dir) {
    fs::create_directories(dir);
    auto write = [&](const fs::path& name, const std::string& text) {
        std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(ErrorKind::IoError, "cannot write " + (dir / name).string());
        }
        out << text;
    };
    std::string lines;
    for (const auto& p : result.predictions) {
        lines += p.dump() + "\n";
    }
    write("predictions.jsonl", lines);
    write("report.json", result.report.dump(2) + "\n");
    write("report.meta.json", result.meta.dump(2) + "\n");
    std::string csv = MetricReport::csv_header() + "\n";
    for (const auto& r : result.reports) {
        csv += r.to_csv_row() + "\n";
    }
    write("metrics.csv", csv);
}

} // namespace evalnexus
