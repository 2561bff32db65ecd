#include "evalnexus/remote_model.hpp"

#include <cmath>
#include <thread>

#include "httplib.h"

#include "evalnexus/error.hpp"

namespace evalnexus {

EchoedPrompt parse_echo_response(const Json& response) {
    EchoedPrompt echo;
    try {
        const auto& logprobs = response.at("choices").at(0).at("logprobs");
        echo.tokens = logprobs.at("tokens").get<std::vector<std::string>>();
        for (const auto& lp : logprobs.at("token_logprobs")) {
            echo.logprobs.push_back(lp.is_null() ? std::nullopt : std::optional<double>(lp.get<double>()));
        }
        echo.text_offsets = logprobs.at("text_offset").get<std::vector<std::int64_t>>();
    } catch (const Json::exception& e) {
        throw Error(ErrorKind::ProtocolError, std::string("malformed completions response: ") + e.what());
    }
    if (echo.tokens.size() != echo.logprobs.size() || echo.tokens.size() != echo.text_offsets.size()) {
        throw Error(ErrorKind::ProtocolError, "tokens, token_logprobs and text_offset differ in length");
    }
    return echo;
}

std::size_t code_point_count(std::string_view utf8) {
    std::size_t n = 0;
    for (unsigned char c : utf8) {
        if ((c & 0xC0) != 0x80) {
            ++n;
        }
    }
    return n;
}

std::vector<TokenScore> align_continuation(const EchoedPrompt& echo, std::size_t context_code_points,
                                           std::size_t prompt_code_points, bool allow_straddle) {
    const auto n = echo.tokens.size();
    const auto ctx = static_cast<std::int64_t>(context_code_points);
    std::vector<TokenScore> out;
    for (std::size_t i = 0; i < n; ++i) {
        const auto start = echo.text_offsets[i];
        const auto end = i + 1 < n ? echo.text_offsets[i + 1] : static_cast<std::int64_t>(prompt_code_points);
        if (start < 0 || end < start || end > static_cast<std::int64_t>(prompt_code_points)) {
            throw Error(ErrorKind::ProtocolError, "text_offset values are not monotone within the prompt");
        }
        if (end <= ctx) {
            continue;
        }
        if (start < ctx && !allow_straddle) {
            throw Error(ErrorKind::TokenizationMismatch,
                        "token '" + echo.tokens[i] + "' straddles the context/continuation boundary");
        }
        const auto& lp = echo.logprobs[i];
        if (!lp || !std::isfinite(*lp)) {
            throw Error(ErrorKind::ProtocolError, "no finite logprob for continuation token '" + echo.tokens[i] + "'");
        }
        out.push_back({echo.tokens[i], *lp});
    }
    if (out.empty()) {
        throw Error(ErrorKind::TokenizationMismatch, "no tokens fall inside the continuation");
    }
    return out;
}

Json completion_request(std::string_view model, std::string_view prompt, std::size_t max_tokens, bool echo,
                        const std::vector<std::string>& stop) {
    Json body = Json::object();
    body["model"] = model;
    body["prompt"] = prompt;
    body["max_tokens"] = max_tokens;
    body["echo"] = echo;
    body["logprobs"] = 1;
    body["temperature"] = 0;
    if (!stop.empty()) {
        body["stop"] = stop;
    }
    return body;
}

RemoteModel::RemoteModel(ModelSpec spec)
    : spec_(std::move(spec)), params_(std::get<RemoteParams>(spec_.params)),
      slots_(std::get<RemoteParams>(spec_.params).max_concurrency) {
    spec_.validate();
    const auto& url = params_.base_url;
    const auto scheme_end = url.find("://");
    const auto path_start = url.find('/', scheme_end + 3);
    host_ = url.substr(0, path_start);
    if (path_start != std::string::npos) {
        path_prefix_ = url.substr(path_start);
        while (!path_prefix_.empty() && path_prefix_.back() == '/') {
            path_prefix_.pop_back();
        }
    }
}

RemoteModel::~RemoteModel() = default;

std::string RemoteModel::identity() const { return "remote:" + params_.model; }

Json RemoteModel::post(const Json& body) const {
    const std::string payload = body.dump();
    const std::string path = path_prefix_ + "/v1/completions";
    std::string last_error;
    for (int attempt = 1; attempt <= params_.max_attempts; ++attempt) {
        if (attempt > 1) {
            std::this_thread::sleep_for(params_.backoff_base * (1LL << (attempt - 2)));
        }
        slots_.acquire();
        httplib::Result res = [&] {
            httplib::Client client(host_);
            const auto secs = params_.timeout.count() / 1000;
            const auto usecs = (params_.timeout.count() % 1000) * 1000;
            client.set_connection_timeout(secs, usecs);
            client.set_read_timeout(secs, usecs);
            client.set_write_timeout(secs, usecs);
            ++http_requests_;
            return client.Post(path, payload, "application/json");
        }();
        slots_.release();
        if (!res) {
            last_error = httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200) {
            throw Error(ErrorKind::ProtocolError,
                        host_ + path + " answered HTTP " + std::to_string(res->status) + ": " + res->body);
        }
        try {
            return Json::parse(res->body);
        } catch (const Json::parse_error& e) {
            throw Error(ErrorKind::ProtocolError, std::string("response is not JSON: ") + e.what());
        }
    }
    throw Error(ErrorKind::BackendUnavailable, host_ + path + " unavailable after " +
                                                   std::to_string(params_.max_attempts) + " attempts: " + last_error);
}

const EchoedPrompt& RemoteModel::echo(const std::string& prompt) const {
    {
        std::lock_guard lock(memo_mutex_);
        if (auto it = memo_.find(prompt); it != memo_.end()) {
            return *it->second;
        }
    }
    auto parsed = std::make_shared<const EchoedPrompt>(parse_echo_response(
        post(completion_request(params_.model, prompt, 0, true))));
    std::lock_guard lock(memo_mutex_);
    // First writer wins so every caller sees one response per prompt.
    auto [it, inserted] = memo_.emplace(prompt, std::move(parsed));
    return *it->second;
}

std::vector<TokenScore> RemoteModel::do_score(std::string_view context, std::string_view continuation) const {
    std::string prompt;
    prompt.reserve(context.size() + continuation.size());
    prompt.append(context).append(continuation);
    const auto& echoed = echo(prompt);
    return align_continuation(echoed, code_point_count(context), code_point_count(prompt), params_.allow_straddle);
}

std::vector<std::string> RemoteModel::tokenize(std::string_view text) const {
    return echo(std::string(text)).tokens;
}

std::string RemoteModel::generate(std::string_view prompt, std::size_t max_tokens,
                                  const std::vector<std::string>& stop) const {
    check_generation_args(max_tokens, stop);
    const auto response = post(completion_request(params_.model, prompt, max_tokens, false, stop));
    std::string text;
    try {
        text = response.at("choices").at(0).at("text").get<std::string>();
    } catch (const Json::exception& e) {
        throw Error(ErrorKind::ProtocolError, std::string("malformed completions response: ") + e.what());
    }
    std::size_t cut = text.size();
    for (const auto& s : stop) {
        cut = std::min(cut, text.find(s));
    }
    text.resize(cut);
    return text;
}

} // namespace evalnexus
