#include "evalnexus/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "evalnexus/error.hpp"

namespace evalnexus {

namespace {

bool is_ascii_punct(unsigned char c) {
    return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) || (c >= 123 && c <= 126);
}

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

// Non-ASCII bytes count as word characters.
bool is_word(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }

std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_space(static_cast<unsigned char>(s[i]))) {
            ++i;
        }
        const auto start = i;
        while (i < s.size() && !is_space(static_cast<unsigned char>(s[i]))) {
            ++i;
        }
        if (i > start) {
            out.emplace_back(s.substr(start, i - start));
        }
    }
    return out;
}

double token_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
    if (pred.empty() || gold.empty()) {
        return pred == gold ? 1.0 : 0.0;
    }
    std::map<std::string, int> gold_counts;
    for (const auto& t : gold) {
        ++gold_counts[t];
    }
    int same = 0;
    for (const auto& t : pred) {
        if (auto it = gold_counts.find(t); it != gold_counts.end() && it->second > 0) {
            --it->second;
            ++same;
        }
    }
    if (same == 0) {
        return 0.0;
    }
    const double precision = static_cast<double>(same) / static_cast<double>(pred.size());
    const double recall = static_cast<double>(same) / static_cast<double>(gold.size());
    return 2.0 * precision * recall / (precision + recall);
}

} // namespace

Json MetricReport::to_json() const {
    Json j = Json::object();
    j["task"] = task;
    j["model"] = model;
    j["wrapper"] = wrapper;
    j["prompt"] = prompt_name ? Json(*prompt_name) : Json(nullptr);
    j["values"] = Json::object();
    for (const auto& [name, value] : values) {
        j["values"][name] = value;
    }
    j["instance_count"] = instance_count;
    return j;
}

MetricReport MetricReport::from_json(const Json& j) {
    MetricReport r;
    r.task = j.at("task").get<std::string>();
    r.model = j.at("model").get<std::string>();
    r.wrapper = j.at("wrapper").get<std::string>();
    if (const auto& p = j.at("prompt"); !p.is_null()) {
        r.prompt_name = p.get<std::string>();
    }
    for (const auto& [name, value] : j.at("values").items()) {
        r.values[name] = value.get<double>();
    }
    r.instance_count = j.at("instance_count").get<std::size_t>();
    return r;
}

std::string MetricReport::csv_header() { return "task,model,wrapper,prompt,instance_count,metric,value"; }

std::string MetricReport::to_csv_row() const {
    std::ostringstream out;
    out.precision(17);
    bool first = true;
    for (const auto& [name, value] : values) {
        if (!first) {
            out << '\n';
        }
        first = false;
        out << task << ',' << model << ',' << wrapper << ',' << prompt_name.value_or("") << ',' << instance_count
            << ',' << name << ',' << value;
    }
    return out.str();
}

double accuracy(std::span<const PredictionRecord> preds) {
    if (preds.empty()) {
        throw Error(ErrorKind::InvalidArgument, "accuracy over zero predictions");
    }
    std::size_t correct = 0;
    for (const auto& p : preds) {
        if (!p.gold_index) {
            throw Error(ErrorKind::MissingGold, "prediction '" + p.instance_id + "' has no gold label");
        }
        if (p.predicted_index == *p.gold_index) {
            ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double random_baseline(std::span<const RcInstance> instances) {
    if (instances.empty()) {
        throw Error(ErrorKind::InvalidArgument, "random baseline over zero instances");
    }
    double sum = 0.0;
    for (const auto& inst : instances) {
        if (inst.choices.size() < 2) {
            throw Error(ErrorKind::InvalidInstance, "instance with fewer than 2 choices");
        }
        sum += 1.0 / static_cast<double>(inst.choices.size());
    }
    return sum / static_cast<double>(instances.size());
}

double random_baseline(std::size_t label_vocabulary_size) {
    if (label_vocabulary_size < 2) {
        throw Error(ErrorKind::InvalidInstance, "label vocabulary needs at least 2 labels");
    }
    return 1.0 / static_cast<double>(label_vocabulary_size);
}

double relative_improvement(double acc, double baseline) {
    if (!(baseline > 0.0 && baseline < 1.0)) {
        throw Error(ErrorKind::DegenerateBaseline, "baseline must lie strictly between 0 and 1");
    }
    return 100.0 * (acc - baseline) / baseline;
}

std::string squad_normalize(std::string_view text) {
    std::string s;
    s.reserve(text.size());
    for (unsigned char c : text) {
        if (is_ascii_punct(c)) {
            continue;
        }
        s += static_cast<char>(c < 0x80 ? std::tolower(c) : c);
    }
    // Articles bounded by non-word characters become a single space.
    std::string no_articles;
    no_articles.reserve(s.size());
    for (std::size_t i = 0; i < s.size();) {
        const bool boundary_before = i == 0 || !is_word(static_cast<unsigned char>(s[i - 1]));
        bool matched = false;
        if (boundary_before) {
            for (std::string_view article : {"the", "an", "a"}) {
                const auto end = i + article.size();
                if (s.compare(i, article.size(), article) == 0 &&
                    (end == s.size() || !is_word(static_cast<unsigned char>(s[end])))) {
                    no_articles += ' ';
                    i = end;
                    matched = true;
                    break;
                }
            }
        }
        if (!matched) {
            no_articles += s[i++];
        }
    }
    std::string out;
    for (const auto& tok : split_ws(no_articles)) {
        if (!out.empty()) {
            out += ' ';
        }
        out += tok;
    }
    return out;
}

SquadScore squad_em_f1(std::string_view prediction, const std::vector<std::string>& golds) {
    if (golds.empty()) {
        throw Error(ErrorKind::NoGolds, "SQuAD scoring needs at least one gold answer");
    }
    const auto pred_norm = squad_normalize(prediction);
    const auto pred_tokens = split_ws(pred_norm);
    SquadScore best;
    for (const auto& gold : golds) {
        const auto gold_norm = squad_normalize(gold);
        if (gold_norm == pred_norm) {
            best.exact_match = 1;
        }
        best.f1 = std::max(best.f1, token_f1(pred_tokens, split_ws(gold_norm)));
    }
    return best;
}

PerplexityMetrics perplexity_metrics(double total_nats, std::size_t words, std::size_t bytes) {
    if (words == 0 || bytes == 0) {
        throw Error(ErrorKind::ZeroDenominator, "perplexity needs at least one word and one byte");
    }
    PerplexityMetrics m;
    m.ppl_word = std::exp(-total_nats / static_cast<double>(words));
    m.bits_per_byte = -total_nats / (static_cast<double>(bytes) * std::numbers::ln2) + 0.0; // no -0
    m.ppl_byte = std::exp2(m.bits_per_byte);
    return m;
}

} // namespace evalnexus
