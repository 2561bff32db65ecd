#include "evalnexus/models.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "evalnexus/error.hpp"
#include "evalnexus/local_models.hpp"
#include "evalnexus/remote_model.hpp"

namespace evalnexus {

namespace fs = std::filesystem;

namespace {

template <class T>
T parse_number(std::string_view text, std::string_view what) {
    T value{};
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end) {
        throw Error(ErrorKind::InvalidArgument, "bad " + std::string(what) + " '" + std::string(text) + "'");
    }
    return value;
}

bool url_well_formed(std::string_view url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string_view::npos) {
        return false;
    }
    const auto scheme = url.substr(0, scheme_end);
    return (scheme == "http" || scheme == "https") && url.size() > scheme_end + 3;
}

} // namespace

std::string_view to_string(ChoiceNormalization norm) noexcept {
    switch (norm) {
    case ChoiceNormalization::Sum: return "sum";
    case ChoiceNormalization::PerToken: return "per_token";
    case ChoiceNormalization::PerByte: return "per_byte";
    }
    return "sum";
}

ChoiceNormalization parse_normalization(std::string_view name) {
    if (name == "sum") return ChoiceNormalization::Sum;
    if (name == "per_token") return ChoiceNormalization::PerToken;
    if (name == "per_byte") return ChoiceNormalization::PerByte;
    throw Error(ErrorKind::InvalidArgument, "unknown normalization '" + std::string(name) + "'");
}

void ModelSpec::validate() const {
    std::visit(
        [](const auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, UniformParams>) {
                if (p.alphabet_size < 2) {
                    throw Error(ErrorKind::InvalidArgument, "uniform alphabet size must be >= 2");
                }
            } else if constexpr (std::is_same_v<P, NgramParams>) {
                if (p.order < 1) {
                    throw Error(ErrorKind::InvalidArgument, "ngram order must be >= 1");
                }
                if (!(p.smoothing > 0.0)) {
                    throw Error(ErrorKind::InvalidArgument, "ngram smoothing must be positive");
                }
            } else {
                if (!url_well_formed(p.base_url)) {
                    throw Error(ErrorKind::InvalidArgument, "malformed base URL '" + p.base_url + "'");
                }
                if (p.model.empty() || p.max_attempts < 1 || p.max_concurrency < 1) {
                    throw Error(ErrorKind::InvalidArgument, "remote spec needs a model, attempts >= 1, concurrency >= 1");
                }
            }
        },
        params);
}

Json ModelSpec::to_json() const {
    Json j = Json::object();
    std::visit(
        [&j](const auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, UniformParams>) {
                j["kind"] = "uniform";
                j["alphabet_size"] = p.alphabet_size;
            } else if constexpr (std::is_same_v<P, NgramParams>) {
                j["kind"] = "ngram";
                j["order"] = p.order;
                j["corpus"] = p.corpus_path.string();
                j["smoothing"] = p.smoothing;
            } else {
                j["kind"] = "remote";
                j["base_url"] = p.base_url;
                j["model"] = p.model;
                j["timeout_ms"] = p.timeout.count();
                j["max_attempts"] = p.max_attempts;
                j["backoff_ms"] = p.backoff_base.count();
                j["max_concurrency"] = p.max_concurrency;
                j["allow_straddle"] = p.allow_straddle;
            }
        },
        params);
    return j;
}

ModelSpec ModelSpec::from_json(std::string name, const Json& j) {
    ModelSpec spec;
    spec.name = std::move(name);
    try {
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "uniform") {
            spec.params = UniformParams{j.value("alphabet_size", 256)};
        } else if (kind == "ngram") {
            spec.params = NgramParams{j.at("order").get<int>(), j.at("corpus").get<std::string>(),
                                      j.value("smoothing", 1.0)};
        } else if (kind == "remote") {
            RemoteParams p;
            p.base_url = j.at("base_url").get<std::string>();
            p.model = j.value("model", spec.name);
            p.timeout = std::chrono::milliseconds(j.value("timeout_ms", p.timeout.count()));
            p.max_attempts = j.value("max_attempts", p.max_attempts);
            p.backoff_base = std::chrono::milliseconds(j.value("backoff_ms", p.backoff_base.count()));
            p.max_concurrency = j.value("max_concurrency", p.max_concurrency);
            p.allow_straddle = j.value("allow_straddle", p.allow_straddle);
            spec.params = std::move(p);
        } else {
            throw Error(ErrorKind::ConfigError, "unknown model kind '" + kind + "'");
        }
    } catch (const Json::exception& e) {
        throw Error(ErrorKind::ConfigError, "model '" + spec.name + "': " + e.what());
    }
    spec.validate();
    return spec;
}

ModelSpec ModelSpec::parse(std::string_view text) {
    ModelSpec spec;
    spec.name = std::string(text);
    const auto colon = text.find(':');
    const auto kind = text.substr(0, colon);
    const auto rest = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
    if (kind == "uniform") {
        spec.params = UniformParams{parse_number<int>(rest, "alphabet size")};
    } else if (kind == "ngram") {
        const auto second = rest.find(':');
        if (second == std::string_view::npos) {
            throw Error(ErrorKind::InvalidArgument, "expected ngram:<order>:<corpus>[:<k>]");
        }
        NgramParams p;
        p.order = parse_number<int>(rest.substr(0, second), "ngram order");
        auto path = rest.substr(second + 1);
        if (const auto last = path.rfind(':'); last != std::string_view::npos) {
            double k = 0.0;
            const auto tail = path.substr(last + 1);
            if (auto [ptr, ec] = std::from_chars(tail.data(), tail.data() + tail.size(), k);
                ec == std::errc{} && ptr == tail.data() + tail.size()) {
                p.smoothing = k;
                path = path.substr(0, last);
            }
        }
        p.corpus_path = std::string(path);
        spec.params = std::move(p);
    } else if (kind == "remote") {
        const auto at = rest.find('@');
        if (at == std::string_view::npos) {
            throw Error(ErrorKind::InvalidArgument, "expected remote:<model>@<base-url>");
        }
        RemoteParams p;
        p.model = std::string(rest.substr(0, at));
        p.base_url = std::string(rest.substr(at + 1));
        spec.params = std::move(p);
    } else {
        throw Error(ErrorKind::UnknownModel, "unknown model '" + std::string(text) + "'");
    }
    spec.validate();
    return spec;
}

ModelRegistry ModelRegistry::from_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::IoError, "cannot open model registry " + path.string());
    }
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw Error(ErrorKind::ParseError, path.string() + ": " + e.what());
    }
    ModelRegistry registry;
    for (const auto& [name, entry] : j.items()) {
        auto spec = ModelSpec::from_json(name, entry);
        // Relative corpus paths are relative to the registry file.
        if (auto* ngram = std::get_if<NgramParams>(&spec.params); ngram && ngram->corpus_path.is_relative()) {
            ngram->corpus_path = path.parent_path() / ngram->corpus_path;
        }
        registry.add(std::move(spec));
    }
    return registry;
}

void ModelRegistry::add(ModelSpec spec) {
    auto name = spec.name;
    specs_.insert_or_assign(std::move(name), std::move(spec));
}

const ModelSpec& ModelRegistry::get(std::string_view name) const {
    if (auto it = specs_.find(name); it != specs_.end()) {
        return it->second;
    }
    throw Error(ErrorKind::UnknownModel, "unknown model '" + std::string(name) + "'");
}

std::vector<std::string> ModelRegistry::names() const {
    std::vector<std::string> out;
    for (const auto& [name, spec] : specs_) {
        out.push_back(name);
    }
    return out;
}

ModelSpec ModelRegistry::resolve(std::string_view name_or_spec) const {
    if (auto it = specs_.find(name_or_spec); it != specs_.end()) {
        return it->second;
    }
    return ModelSpec::parse(name_or_spec);
}

std::vector<TokenScore> LanguageModel::score(std::string_view context, std::string_view continuation) const {
    if (continuation.empty()) {
        throw Error(ErrorKind::InvalidArgument, "continuation must be non-empty");
    }
    ++score_calls_;
    return do_score(context, continuation);
}

std::string LanguageModel::generate(std::string_view, std::size_t, const std::vector<std::string>&) const {
    throw Error(ErrorKind::UnsupportedBackend, "model '" + spec().name + "' does not support generation");
}

void LanguageModel::check_generation_args(std::size_t max_tokens, const std::vector<std::string>& stop) {
    if (max_tokens == 0) {
        throw Error(ErrorKind::InvalidArgument, "max_tokens must be >= 1");
    }
    for (const auto& s : stop) {
        if (s.empty()) {
            throw Error(ErrorKind::InvalidStop, "empty stop string");
        }
    }
}

std::shared_ptr<const LanguageModel> load_model(const ModelSpec& spec) {
    spec.validate();
    switch (spec.kind()) {
    case ModelKind::Uniform:
        return std::make_shared<UniformModel>(spec);
    case ModelKind::Ngram: {
        const auto& p = std::get<NgramParams>(spec.params);
        std::ifstream in(p.corpus_path, std::ios::binary);
        if (!in) {
            throw Error(ErrorKind::IoError, "cannot open ngram corpus " + p.corpus_path.string());
        }
        std::ostringstream ss;
        ss << in.rdbuf();
        return std::make_shared<NgramModel>(spec, ss.str());
    }
    case ModelKind::Remote:
        return std::make_shared<RemoteModel>(spec);
    }
    throw Error(ErrorKind::UnknownModel, "unhandled model kind");
}

double choice_score(const ChoiceScore& choice, ChoiceNormalization norm) {
    switch (norm) {
    case ChoiceNormalization::Sum:
        return choice.sum_logprob;
    case ChoiceNormalization::PerToken:
        return choice.sum_logprob / static_cast<double>(choice.token_count);
    case ChoiceNormalization::PerByte:
        return choice.sum_logprob / static_cast<double>(choice.byte_count);
    }
    return choice.sum_logprob;
}

std::size_t argmax_first(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) {
            best = i;
        }
    }
    return best;
}

ChoiceScore score_choice(const LanguageModel& model, const RcChoice& choice) {
    const auto scores = model.score(choice.context, choice.continuation);
    ChoiceScore out;
    for (const auto& s : scores) {
        out.sum_logprob += s.logprob;
    }
    out.token_count = scores.size();
    out.byte_count = choice.continuation.size();
    if (out.token_count == 0) {
        throw Error(ErrorKind::TokenizationMismatch, "backend returned no continuation tokens");
    }
    return out;
}

PredictionRecord predict_from_scores(std::vector<ChoiceScore> choices, ChoiceNormalization norm,
                                     std::optional<int> gold) {
    PredictionRecord pred;
    std::vector<double> normalized;
    normalized.reserve(choices.size());
    for (const auto& c : choices) {
        normalized.push_back(choice_score(c, norm));
    }
    pred.predicted_index = argmax_first(normalized);
    pred.choices = std::move(choices);
    if (gold) {
        pred.gold_index = static_cast<std::size_t>(*gold);
    }
    return pred;
}

PredictionRecord rc_predict(const LanguageModel& model, const RcInstance& inst, ChoiceNormalization norm,
                            std::string instance_id) {
    inst.validate();
    std::vector<ChoiceScore> choices;
    choices.reserve(inst.choices.size());
    for (const auto& choice : inst.choices) {
        choices.push_back(score_choice(model, choice));
    }
    auto pred = predict_from_scores(std::move(choices), norm, inst.correct_choice);
    pred.instance_id = std::move(instance_id);
    return pred;
}

Json to_json(const PredictionRecord& pred, ChoiceNormalization norm) {
    Json j = Json::object();
    j["instance_id"] = pred.instance_id;
    if (pred.prompt_name) {
        j["prompt"] = *pred.prompt_name;
    }
    j["choices"] = Json::array();
    for (const auto& c : pred.choices) {
        j["choices"].push_back({{"sum_logprob", c.sum_logprob},
                                {"token_count", c.token_count},
                                {"byte_count", c.byte_count},
                                {"score", choice_score(c, norm)}});
    }
    j["predicted_index"] = pred.predicted_index;
    j["gold_index"] = pred.gold_index ? Json(*pred.gold_index) : Json(nullptr);
    return j;
}

} // namespace evalnexus
