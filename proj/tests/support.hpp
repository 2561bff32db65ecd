#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include <sys/wait.h>
#include <unistd.h>

#include "httplib.h"
#include "evalnexus/perplexity.hpp"
#include "evalnexus/record.hpp"

namespace testing {

namespace fs = std::filesystem;

inline fs::path source_dir() { return EVALNEXUS_SOURCE_DIR; }
inline fs::path fixtures() { return source_dir() / "fixtures"; }

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = fs::temp_directory_path() /
                ("evalnexus-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << text;
}

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Recounts the corpus from scratch for every query. Deliberately shares no
// code with the model under test.
struct NgramOracle {
    std::string corpus;
    int order = 1;
    double k = 1.0;

    double prob(const std::string& history, unsigned char c) const {
        const std::size_t m = std::min<std::size_t>(order, history.size());
        const std::string h = history.substr(history.size() - m);
        double count_h = 0;
        double count_hc = 0;
        for (std::size_t i = m; i < corpus.size(); ++i) {
            if (corpus.compare(i - m, m, h) == 0) {
                count_h += 1;
                if (static_cast<unsigned char>(corpus[i]) == c) {
                    count_hc += 1;
                }
            }
        }
        std::set<unsigned char> alphabet(corpus.begin(), corpus.end());
        const double classes = static_cast<double>(alphabet.size() + 1);
        const double denom = count_h + k * classes;
        if (alphabet.count(c)) {
            return (count_hc + k) / denom;
        }
        return k / denom / static_cast<double>(256 - alphabet.size());
    }

    // log P(continuation | context), byte by byte with the full history.
    double loglik(const std::string& context, const std::string& continuation) const {
        std::string history = context;
        double total = 0.0;
        for (char c : continuation) {
            total += std::log(prob(history, static_cast<unsigned char>(c)));
            history.push_back(c);
        }
        return total;
    }
};

// In-process stand-in for a completions endpoint. Tokens are a leading
// space (optional) plus a run of non-space characters; each token's logprob
// is -(0.5 + 0.25 * code points) and the first token gets null, as real
// servers do for an unconditioned position.
class FakeCompletionServer {
public:
    explicit FakeCompletionServer(int fail_first = 0, int always_status = 0)
        : fail_first_(fail_first), always_status_(always_status) {
        server_.Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) {
            ++requests_;
            if (always_status_ != 0) {
                res.status = always_status_;
                return;
            }
            if (failures_ < fail_first_) {
                ++failures_;
                res.status = 503;
                return;
            }
            const auto body = evalnexus::Json::parse(req.body);
            last_request_ = body;
            const std::string prompt = body.at("prompt").get<std::string>();
            evalnexus::Json choice = evalnexus::Json::object();
            if (body.at("echo").get<bool>()) {
                evalnexus::Json tokens = evalnexus::Json::array();
                evalnexus::Json lps = evalnexus::Json::array();
                evalnexus::Json offsets = evalnexus::Json::array();
                std::size_t cp = 0;
                for (const auto& tok : split(prompt)) {
                    tokens.push_back(tok);
                    lps.push_back(offsets.empty() ? evalnexus::Json(nullptr) : evalnexus::Json(token_logprob(tok)));
                    offsets.push_back(cp);
                    cp += code_points(tok);
                }
                choice["text"] = prompt;
                choice["logprobs"] = {{"tokens", tokens}, {"token_logprobs", lps}, {"text_offset", offsets}};
            } else {
                choice["text"] = " Saint Bernadette Soubirous\nand more";
            }
            evalnexus::Json out = {{"choices", evalnexus::Json::array({choice})}};
            res.set_content(out.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    ~FakeCompletionServer() {
        server_.stop();
        thread_.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    int requests() const { return requests_.load(); }
    evalnexus::Json last_request() const { return last_request_; }

    static std::vector<std::string> split(const std::string& text) {
        std::vector<std::string> out;
        std::string cur;
        for (char c : text) {
            if (c == ' ' && !cur.empty() && cur.back() != ' ') {
                out.push_back(cur);
                cur.clear();
            }
            cur.push_back(c);
        }
        if (!cur.empty()) {
            out.push_back(cur);
        }
        return out;
    }

    static std::size_t code_points(const std::string& s) {
        std::size_t n = 0;
        for (unsigned char c : s) {
            n += (c & 0xC0) != 0x80;
        }
        return n;
    }

    static double token_logprob(const std::string& tok) { return -(0.5 + 0.25 * static_cast<double>(code_points(tok))); }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    int fail_first_;
    int always_status_;
    std::atomic<int> failures_{0};
    std::atomic<int> requests_{0};
    evalnexus::Json last_request_;
};

// Empty when the plan's scored ranges tile [0, n) in order, every window
// fits max_len, starts at a multiple of stride and sees at least
// min(max_len - stride, tokens so far) tokens of context before scoring.
inline std::string window_plan_violation(const evalnexus::WindowPlan& plan, std::size_t n, std::size_t max_len,
                                         std::size_t stride) {
    std::size_t next = 0;
    for (std::size_t k = 0; k < plan.size(); ++k) {
        const auto& w = plan[k];
        const std::string where = "window " + std::to_string(k) + ": ";
        if (w.start != k * stride) {
            return where + "start " + std::to_string(w.start);
        }
        if (w.end - w.start > max_len || w.end > n || w.start >= w.end) {
            return where + "bad extent";
        }
        if (w.score_start != next || w.score_start < w.start || w.score_start >= w.end) {
            return where + "scored range does not continue at " + std::to_string(next);
        }
        const auto context = w.score_start - w.start;
        if (k > 0 && context < std::min(max_len - stride, w.score_start)) {
            return where + "context " + std::to_string(context);
        }
        next = w.end;
    }
    if (next != n) {
        return "scored ranges stop at " + std::to_string(next) + " of " + std::to_string(n);
    }
    return {};
}

// Runs a shell command, returning its exit status and captured stdout/stderr.
struct CommandResult {
    int status = -1;
    std::string out;
    std::string err;
};

inline CommandResult run_command(const std::string& args, const fs::path& cwd = source_dir()) {
    static std::atomic<int> counter{0};
    const auto tag = std::to_string(::getpid()) + "-" + std::to_string(counter++);
    const auto out_path = fs::temp_directory_path() / ("evalnexus-cmd-out-" + tag);
    const auto err_path = fs::temp_directory_path() / ("evalnexus-cmd-err-" + tag);
    const std::string cmd = "cd '" + cwd.string() + "' && '" + std::string(EVALNEXUS_CLI_PATH) + "' " + args + " >'" +
                            out_path.string() + "' 2>'" + err_path.string() + "'";
    const int raw = std::system(cmd.c_str());
    CommandResult r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = read_text(out_path);
    r.err = read_text(err_path);
    fs::remove(out_path);
    fs::remove(err_path);
    return r;
}

} // namespace testing
