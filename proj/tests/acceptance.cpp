#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "golden.hpp"
#include "support.hpp"

#include "evalnexus/analysis.hpp"
#include "evalnexus/error.hpp"
#include "evalnexus/formats.hpp"
#include "evalnexus/local_models.hpp"
#include "evalnexus/metrics.hpp"
#include "evalnexus/perplexity.hpp"
#include "evalnexus/remote_model.hpp"
#include "evalnexus/runner.hpp"

using namespace evalnexus;
namespace fs = std::filesystem;

namespace {

// Collects failures; an empty list means the criterion holds.
struct Check {
    std::vector<std::string> failures;
    std::string note;

    void expect(bool ok, const std::string& what) {
        if (!ok) {
            failures.push_back(what);
        }
    }
    template <class A, class B>
    void equal(const A& actual, const B& expected, const std::string& what) {
        if (!(actual == expected)) {
            std::ostringstream out;
            out << what << " (got " << actual << ", want " << expected << ")";
            failures.push_back(out.str());
        }
    }
};

std::string fmt(double v, int precision = 4) {
    std::ostringstream out;
    out.setf(std::ios::fixed);
    out.precision(precision);
    out << v;
    return out.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const TaskRegistry& registry() {
    static const TaskRegistry r = TaskRegistry::from_directory(testing::fixtures() / "tasks");
    return r;
}

std::shared_ptr<const LanguageModel> fixture_ngram(int order, double k = 1.0) {
    ModelSpec spec{"ngram", NgramParams{order, testing::fixtures() / "corpus.txt", k}};
    return load_model(spec);
}

void golden_formats(Check& c) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto rte = RawRecord::parse(golden::kRteRaw);
    c.expect(rte.dump(2) == golden::kRteRaw, "raw record listing");

    c.expect(repr(to_mc(RawRecord::parse(golden::kArcRaw), golden::arc_schema())) == golden::kMcRepr,
             "multiple choice listing");

    const auto qa = to_qa(RawRecord::parse(golden::kSquadRaw), golden::squad_schema());
    c.expect(repr(qa) == golden::kQaRepr, "question answering listing");
    c.expect(qa.answers.answer_starts == std::vector<std::int64_t>{515}, "answer_start 515");

    c.expect(repr(to_classification(rte, golden::rte_classification_schema())) == golden::kClassificationRepr,
             "classification listing");

    const auto t5 =
        to_t5(RawRecord::parse(golden::kRteRawForT5), "rte", {"sentence1", "sentence2"}, golden::rte_t5_schema());
    c.expect(t5.input == golden::kT5Input && t5.target == golden::kT5Target, "T5 listing");

    const auto rc = render(golden::rc_template(), rte, golden::kRteLabels);
    const RcInstance want_rc{{{golden::kRcContext, " True"}, {golden::kRcContext, " False"}}, 1};
    c.expect(rc == want_rc, "ranked classification listing");

    const auto set = render_all(golden::promptsource_templates(), rte, golden::kRteLabels);
    const RcInstance claim{{{golden::kClaimContext, "yes"}, {golden::kClaimContext, "no"}}, 1};
    const RcInstance imply{{{golden::kImplyContext, "yes"}, {golden::kImplyContext, "no"}}, 1};
    c.expect(set.size() == 2 && set.by_prompt[0].first == "does the claim" && set.by_prompt[0].second == claim &&
                 set.by_prompt[1].first == "imply" && set.by_prompt[1].second == imply,
             "PromptSource two-prompt listing");

    const double elapsed = seconds_since(t0);
    c.expect(elapsed < 1.0, "runtime " + fmt(elapsed) + " s");
}

std::vector<std::vector<std::string>> read_csv_cells(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) {
            cells.push_back(cell);
        }
        rows.push_back(cells);
    }
    return rows;
}

void correlation_grid(Check& c) {
    testing::TempDir dir;
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = testing::run_command("analyze fixtures/table3.csv correlations --out '" +
                                        (dir / "corr.csv").string() + "'");
    const double elapsed = seconds_since(t0);
    if (r.status != 0) {
        c.expect(false, "analyze exited " + std::to_string(r.status) + ": " + r.err);
        return;
    }
    const auto got = read_csv_cells(testing::read_text(dir / "corr.csv"));
    const auto want = read_csv_cells(testing::read_text(testing::fixtures() / "correlations_reference.csv"));
    c.expect(got.size() == 18 && want.size() == 18, "17x17 grid plus header");
    if (got.size() != want.size() || got.empty() || got[0] != want[0]) {
        c.expect(false, "dataset headers differ");
        return;
    }
    double worst = 0.0;
    std::string worst_cell;
    for (std::size_t i = 1; i < want.size(); ++i) {
        c.expect(got[i][0] == want[i][0], "row name " + got[i][0]);
        for (std::size_t j = 1; j < want[i].size(); ++j) {
            const double diff = std::abs(std::stod(got[i][j]) - std::stod(want[i][j]));
            if (diff > worst) {
                worst = diff;
                worst_cell = want[i][0] + "/" + want[0][j];
            }
            c.expect(diff <= 0.01, want[i][0] + "/" + want[0][j] + ": " + got[i][j] + " vs " + want[i][j]);
        }
    }
    const auto matrix = ResultsMatrix::load_csv(testing::fixtures() / "table3.csv");
    const auto rho = [&](const char* a, const char* b) {
        return spearman(matrix.column(matrix.dataset_index(a)), matrix.column(matrix.dataset_index(b)));
    };
    c.expect(std::abs(rho("ARC Challenge", "ARC Easy") - 0.932) <= 0.01, "ARC Challenge/ARC Easy");
    c.expect(std::abs(rho("LogiQA", "SciQ") - (-0.040)) <= 0.01, "LogiQA/SciQ");
    c.expect(elapsed < 1.0, "runtime " + fmt(elapsed) + " s");
    c.note = "max deviation " + fmt(worst, 3) + " at " + worst_cell;
}

void claims(Check& c) {
    testing::TempDir dir;
    const auto r = testing::run_command("analyze fixtures/table3.csv summary --out '" + (dir / "s.json").string() + "'");
    if (r.status != 0) {
        c.expect(false, "analyze summary exited " + std::to_string(r.status) + ": " + r.err);
        return;
    }
    const auto matrix = ResultsMatrix::load_csv(testing::fixtures() / "table3.csv");
    const auto summary = macro_summary(matrix);
    const double sciq = summary.dataset("SciQ").mean_all;
    c.expect(sciq > 200.0, "SciQ mean relative improvement " + fmt(sciq, 1) + " is not above 200");
    c.expect(r.out.find("SciQ") != std::string::npos, "summary text lists SciQ");

    const auto qnli = matrix.dataset_index("QNLI");
    for (std::size_t m = 0; m < matrix.models.size(); ++m) {
        if (matrix.groups[m] != ModelGroup::ZeroShot) {
            continue;
        }
        const double v = matrix.values[m][qnli];
        c.expect(std::abs(v) <= 3.0, "zero-shot QNLI " + matrix.models[m] + " = " + fmt(v, 1) + " is outside +-3.0");
    }

    const auto j = Json::parse(testing::read_text(dir / "s.json"));
    const auto& both = j.at("finetuned_vs_zero_shot");
    for (const char* reading : {"per_dataset_best", "best_single_model"}) {
        const bool ok = both.contains(reading) && both.at(reading).at("relative_gain").is_number() &&
                        std::isfinite(both.at(reading).at("relative_gain").get<double>());
        c.expect(ok, std::string("summary JSON lacks the ") + reading + " reading");
    }
    for (const double ratio : {summary.ratio_per_dataset_best, summary.ratio_best_single_model}) {
        c.expect(r.out.find(fmt(100.0 * ratio, 1) + "% greater") != std::string::npos,
                 "summary text lacks the " + fmt(100.0 * ratio, 1) + "% reading");
    }
}

void ri_crosscheck(Check& c) {
    const auto matrix = ResultsMatrix::load_csv(testing::fixtures() / "table3.csv");
    const auto cell = [&](const std::string& model, const std::string& dataset) {
        for (std::size_t m = 0; m < matrix.models.size(); ++m) {
            if (matrix.models[m] == model) {
                return matrix.values[m][matrix.dataset_index(dataset)];
            }
        }
        throw Error(ErrorKind::InvalidArgument, "no model " + model);
    };
    const double wino = relative_improvement(0.553, 0.5);
    const double rte = relative_improvement(0.653, 0.5);
    c.expect(std::abs(wino - 10.6) < 1e-9, "WINOGRANDE improvement " + fmt(wino));
    c.expect(std::abs(rte - 30.6) < 1e-9, "RTE improvement " + fmt(rte));
    c.expect(std::abs(wino - cell("GPT-2 Large", "WINOGRANDE")) <= 0.2, "GPT-2 Large WINOGRANDE cell");
    c.expect(std::abs(rte - cell("T5 Base", "RTE")) <= 0.2, "T5 Base RTE cell");
}

void perplexity_oracle(Check& c) {
    RunConfig config;
    config.model = "uniform:256";
    config.tasks = {"ppl-sample"};
    config.wrapper = Wrapper::Lm;
    config.split = "validation";
    const auto uniform = run_evaluation(config, registry(), load_model(ModelSpec::parse("uniform:256")));
    const auto& values = uniform.reports.at(0).values;
    c.expect(values.at("ppl_byte") == 256.0, "uniform ppl_byte " + fmt(values.at("ppl_byte"), 17));
    c.expect(values.at("bits_per_byte") == 8.0, "uniform bits_per_byte " + fmt(values.at("bits_per_byte"), 17));

    const std::string corpus = testing::read_text(testing::fixtures() / "corpus.txt");
    const testing::NgramOracle oracle{corpus, 1, 1.0};
    const auto model = fixture_ngram(1);
    double worst = 0.0;
    for (const auto& raw : registry().get("ppl-sample").split("validation")) {
        const auto doc = make_doc("d", raw.text("text"));
        const double full = oracle.loglik("", doc.text);
        for (std::size_t max_len : {2, 3, 5, 8, 64}) {
            const auto ll = doc_loglik(*model, doc, max_len, 1);
            const double per_token = std::abs(ll.total_nats - full) / static_cast<double>(doc.byte_count);
            worst = std::max(worst, per_token);
            c.expect(ll.scored_tokens == doc.byte_count, "scored token count");
        }
    }
    c.expect(worst < 1e-9, "stride-1 deviation " + std::to_string(worst) + " nats/token");

    std::size_t plans = 0;
    for (std::size_t n = 1; n <= 64; ++n) {
        for (std::size_t max_len = 2; max_len <= 8; ++max_len) {
            for (std::size_t stride = 1; stride <= max_len; ++stride) {
                const auto problem =
                    testing::window_plan_violation(plan_windows(n, max_len, stride), n, max_len, stride);
                c.expect(problem.empty(), "n=" + std::to_string(n) + " max_len=" + std::to_string(max_len) +
                                              " stride=" + std::to_string(stride) + ": " + problem);
                ++plans;
            }
        }
    }
    try {
        plan_windows(8, 1, 1);
        c.expect(false, "max_len 1 accepted");
    } catch (const Error& e) {
        c.expect(e.kind() == ErrorKind::InvalidStride, "max_len 1 error class");
    }
    std::ostringstream note;
    note << plans << " window plans checked, stride-1 max deviation " << worst << " nats/token";
    c.note = note.str();
}

std::string random_text(std::mt19937_64& rng, const std::string& alphabet, std::size_t min_len, std::size_t max_len) {
    const auto len = min_len + rng() % (max_len - min_len + 1);
    std::string out;
    for (std::size_t i = 0; i < len; ++i) {
        out.push_back(alphabet[rng() % alphabet.size()]);
    }
    return out;
}

void rc_oracle(Check& c) {
    const std::string corpus = testing::read_text(testing::fixtures() / "corpus.txt");
    const testing::NgramOracle oracle{corpus, 1, 1.0};
    const auto model = fixture_ngram(1);
    std::mt19937_64 rng(20240611);
    const std::string alphabet = "etaoin shrdlu,.\x01~Z";
    for (int trial = 0; trial < 100; ++trial) {
        RcInstance inst;
        const std::string context = random_text(rng, alphabet, 0, 12);
        const std::size_t n_choices = 2 + rng() % 3;
        for (std::size_t i = 0; i < n_choices; ++i) {
            inst.choices.push_back({context, random_text(rng, alphabet, 1, 6)});
        }
        if (trial % 5 == 0) {
            inst.choices.back().continuation = inst.choices.front().continuation;
        }
        for (auto norm : {ChoiceNormalization::Sum, ChoiceNormalization::PerByte}) {
            std::size_t best = 0;
            double best_score = -INFINITY;
            for (std::size_t i = 0; i < inst.choices.size(); ++i) {
                double s = oracle.loglik(inst.choices[i].context, inst.choices[i].continuation);
                if (norm == ChoiceNormalization::PerByte) {
                    s /= static_cast<double>(inst.choices[i].continuation.size());
                }
                if (s > best_score) {
                    best_score = s;
                    best = i;
                }
            }
            const auto pred = rc_predict(*model, inst, norm);
            c.equal(pred.predicted_index, best, "trial " + std::to_string(trial) + " " + std::string(to_string(norm)));
        }
    }

    const auto uniform = load_model(ModelSpec::parse("uniform:256"));
    for (int trial = 0; trial < 100; ++trial) {
        RcInstance inst;
        const std::string context = random_text(rng, alphabet, 0, 12);
        const std::size_t n_choices = 2 + rng() % 3;
        const std::size_t len = 1 + rng() % 6;
        for (std::size_t i = 0; i < n_choices; ++i) {
            inst.choices.push_back({context, random_text(rng, alphabet, len, len)});
        }
        for (auto norm : {ChoiceNormalization::Sum, ChoiceNormalization::PerToken, ChoiceNormalization::PerByte}) {
            c.equal(rc_predict(*uniform, inst, norm).predicted_index, std::size_t{0},
                    "uniform tie trial " + std::to_string(trial));
        }
    }
}

void cache(Check& c) {
    testing::TempDir dir;
    RunConfig config;
    config.model = "ngram:2:corpus.txt";
    config.tasks = {"arc-sample", "rte-sample"};
    config.split = "validation";
    config.num_shots = 1;
    config.cache_dir = dir / "cache";
    config.workers = 2;

    const auto cold = run_evaluation(config, registry(), fixture_ngram(2));
    write_outputs(cold, dir / "cold");
    const auto warm_model = fixture_ngram(2);
    const auto warm = run_evaluation(config, registry(), warm_model);
    write_outputs(warm, dir / "warm");
    c.expect(cold.backend_score_calls > 0, "cold run scored nothing");
    c.equal(warm_model->score_calls(), std::uint64_t{0}, "local backend scoring calls on the warm run");
    c.expect(testing::read_text(dir / "cold" / "report.json") == testing::read_text(dir / "warm" / "report.json"),
             "local report.json differs");
    c.expect(testing::read_text(dir / "cold" / "predictions.jsonl") ==
                 testing::read_text(dir / "warm" / "predictions.jsonl"),
             "local predictions differ");

    testing::FakeCompletionServer server;
    RemoteParams params;
    params.base_url = server.url();
    params.model = "fake-lm";
    params.backoff_base = std::chrono::milliseconds(1);
    const ModelSpec remote{"fake", params};
    RunConfig rconfig;
    rconfig.model = "fake";
    rconfig.tasks = {"rte-sample", "arc-sample"};
    rconfig.split = "validation";
    rconfig.cache_dir = dir / "remote-cache";
    const auto rcold = run_evaluation(rconfig, registry(), load_model(remote));
    write_outputs(rcold, dir / "rcold");
    const int cold_requests = server.requests();
    const auto rwarm = run_evaluation(rconfig, registry(), load_model(remote));
    write_outputs(rwarm, dir / "rwarm");
    c.expect(cold_requests > 0, "cold remote run sent no requests");
    c.equal(server.requests() - cold_requests, 0, "HTTP requests on the warm remote run");
    c.equal(rwarm.backend_score_calls, std::uint64_t{0}, "remote backend scoring calls on the warm run");
    c.expect(testing::read_text(dir / "rcold" / "report.json") == testing::read_text(dir / "rwarm" / "report.json"),
             "remote report.json differs");
}

void squad(Check& c) {
    const auto a = squad_em_f1("Saint Bernadette Soubirous", {"Saint Bernadette Soubirous"});
    c.expect(a.exact_match == 1 && a.f1 == 1.0, "exact match example");
    const auto b = squad_em_f1("the Saint Bernadette", {"Saint Bernadette Soubirous"});
    c.expect(b.exact_match == 0 && std::abs(b.f1 - 0.8) < 1e-15, "partial overlap example f1=" + fmt(b.f1, 17));
    const auto e = squad_em_f1("", {"x"});
    c.expect(e.exact_match == 0 && e.f1 == 0.0, "empty prediction example");

    std::mt19937_64 rng(7);
    const std::vector<std::string> words{"the", "a", "an", "Cat", "cat", "sat", "mat,", "Paris", "paris.",
                                         "1858", "!", "--", "The", "dog's", "run"};
    const auto phrase = [&] {
        std::string s;
        const auto n = rng() % 6;
        for (std::size_t i = 0; i < n; ++i) {
            s += (i ? (rng() % 4 ? " " : "  ") : "") + words[rng() % words.size()];
        }
        return s;
    };
    int exact = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto pred = phrase();
        std::vector<std::string> golds{phrase()};
        if (rng() % 3 == 0) {
            golds.push_back(pred);
        }
        const auto s = squad_em_f1(pred, golds);
        c.expect(s.f1 >= 0.0 && s.f1 <= 1.0, "f1 out of range for '" + pred + "'");
        c.expect(s.exact_match == 0 || s.f1 == 1.0, "EM without F1=1 for '" + pred + "'");
        exact += s.exact_match;
    }
    c.expect(exact > 100 && exact < 1000, "fuzzer exercised both outcomes");
}

const std::vector<std::pair<std::string, std::function<void(Check&)>>>& criteria() {
    static const std::vector<std::pair<std::string, std::function<void(Check&)>>> all{
        {"golden_formats", golden_formats},
        {"correlation_grid", correlation_grid},
        {"claims", claims},
        {"ri_crosscheck", ri_crosscheck},
        {"perplexity_oracle", perplexity_oracle},
        {"rc_oracle", rc_oracle},
        {"cache", cache},
        {"squad", squad},
    };
    return all;
}

} // namespace

int main(int argc, char** argv) {
    std::vector<std::string> wanted(argv + 1, argv + argc);
    bool all_passed = true;
    std::size_t ran = 0;
    for (const auto& [name, fn] : criteria()) {
        if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), name) == wanted.end()) {
            continue;
        }
        ++ran;
        Check check;
        try {
            fn(check);
        } catch (const std::exception& e) {
            check.failures.push_back(std::string("exception: ") + e.what());
        }
        if (check.failures.empty()) {
            std::cout << "PASS " << name << (check.note.empty() ? "" : " (" + check.note + ")") << "\n";
        } else {
            all_passed = false;
            std::cout << "FAIL " << name << ": " << check.failures.front();
            for (std::size_t i = 1; i < check.failures.size(); ++i) {
                std::cout << "; " << check.failures[i];
            }
            std::cout << "\n";
        }
    }
    if (ran == 0) {
        std::cerr << "unknown criterion\n";
        return 2;
    }
    return all_passed ? 0 : 1;
}
