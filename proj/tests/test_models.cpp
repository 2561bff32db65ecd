#include "doctest.h"
#include "support.hpp"

#include <cmath>
#include <random>

#include "evalnexus/error.hpp"
#include "evalnexus/local_models.hpp"
#include "evalnexus/models.hpp"

using namespace evalnexus;
using testing::NgramOracle;

namespace {

template <class Fn>
ErrorKind kind_of(Fn&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an evalnexus::Error");
    return ErrorKind::InvalidArgument;
}

double total(const std::vector<TokenScore>& scores) {
    double sum = 0.0;
    for (const auto& s : scores) {
        sum += s.logprob;
    }
    return sum;
}

UniformModel uniform() { return UniformModel(ModelSpec::parse("uniform:256")); }

} // namespace

TEST_SUITE("models") {

TEST_CASE("uniform scores are exactly -ln V per byte") {
    const auto model = uniform();
    const auto scores = model.score("context", "abcd");
    REQUIRE(scores.size() == 4);
    for (const auto& s : scores) {
        CHECK(s.logprob == -std::log(256.0));
    }
    CHECK(model.score_calls() == 1);
    CHECK(model.tokenize("h\xc3\xa9") == std::vector<std::string>{"h", "\xc3", "\xa9"});
    CHECK(kind_of([&] { model.generate("a", 3, {}); }) == ErrorKind::UnsupportedBackend);
}

TEST_CASE("ngram matches the count oracle on hand cases") {
    const auto abab = ngram_train("abab", 1, 1.0);
    CHECK(std::exp(abab.score("a", "b")[0].logprob) == doctest::Approx(3.0 / 5.0).epsilon(1e-12));
    const auto aa = ngram_train("aa", 1, 1.0);
    CHECK(aa.alphabet_size() == 1);
    CHECK(std::exp(aa.score("a", "a")[0].logprob) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    const NgramOracle oracle{"abab", 1, 1.0};
    CHECK(abab.score("a", "b")[0].logprob == doctest::Approx(std::log(oracle.prob("a", 'b'))).epsilon(1e-12));
}

TEST_CASE("ngram agrees with the oracle on random queries") {
    std::mt19937 rng(11);
    const std::string corpus = testing::read_text(testing::fixtures() / "corpus.txt");
    for (int order : {1, 2, 3}) {
        for (double k : {0.5, 1.0}) {
            const auto model = ngram_train(corpus, order, k);
            const NgramOracle oracle{corpus, order, k};
            for (int trial = 0; trial < 10; ++trial) {
                const auto start = rng() % (corpus.size() - 20);
                const std::string context = corpus.substr(start, rng() % 6);
                std::string continuation = corpus.substr(start + context.size(), 1 + rng() % 5);
                if (trial % 3 == 0) {
                    continuation.push_back('\x01');
                }
                CHECK(total(model.score(context, continuation)) ==
                      doctest::Approx(oracle.loglik(context, continuation)).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("ngram next-byte distribution is proper") {
    const auto model = ngram_train("the cat sat on the mat", 2, 0.5);
    for (const std::string history : {"", "t", "th", "zz", "at"}) {
        const auto lp = model.next_logprobs(history);
        double sum = 0.0;
        for (double v : lp) {
            sum += std::exp(v);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("chain rule: one call equals byte-by-byte calls") {
    const auto model = ngram_train("banana bandana", 2, 1.0);
    const std::string context = "ba";
    const std::string continuation = "nana";
    double stepwise = 0.0;
    for (std::size_t i = 0; i < continuation.size(); ++i) {
        stepwise += model.score(context + continuation.substr(0, i), continuation.substr(i, 1))[0].logprob;
    }
    CHECK(std::abs(total(model.score(context, continuation)) - stepwise) < 1e-12);
}

TEST_CASE("ngram greedy generation") {
    const auto model = ngram_train("abababab", 1, 1.0);
    CHECK(model.generate("a", 3, {}) == "bab");
    CHECK(model.generate("a", 1, {}) == "b");
    CHECK(model.generate("a", 5, {"ab"}) == "b");
    CHECK(model.generate("a", 5, {"ba"}).empty());
    CHECK(kind_of([&] { model.generate("a", 3, {""}); }) == ErrorKind::InvalidStop);

    const auto z = ngram_train("zzzz", 1, 1.0);
    CHECK(z.generate("", 4, {}) == "zzzz");
    CHECK(z.generate("abc", 2, {}) == "zz");
}

TEST_CASE("ngram construction errors") {
    CHECK(kind_of([] { ngram_train("", 1, 1.0); }) == ErrorKind::EmptyCorpus);
    CHECK(kind_of([] { ngram_train("ab", 0, 1.0); }) == ErrorKind::InvalidArgument);
    CHECK(kind_of([] { ngram_train("ab", 1, 0.0); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("rc_predict ties and normalization") {
    const auto model = uniform();
    const RcInstance equal{{{"ctx", " aa"}, {"ctx", " bb"}, {"ctx", " cc"}}, 2};
    const auto pred = rc_predict(model, equal, ChoiceNormalization::Sum);
    CHECK(pred.predicted_index == 0);
    CHECK(pred.gold_index == 2);

    const RcInstance lengths{{{"c", "a"}, {"c", "abcde"}}, std::nullopt};
    const auto per_token = rc_predict(model, lengths, ChoiceNormalization::PerToken);
    CHECK(choice_score(per_token.choices[0], ChoiceNormalization::PerToken) ==
          choice_score(per_token.choices[1], ChoiceNormalization::PerToken));
    CHECK(per_token.predicted_index == 0);

    const RcInstance shorter_last{{{"c", "abcde"}, {"c", "a"}}, std::nullopt};
    CHECK(rc_predict(model, shorter_last, ChoiceNormalization::Sum).predicted_index == 1);
    CHECK(rc_predict(model, shorter_last, ChoiceNormalization::PerByte).predicted_index == 0);
}

TEST_CASE("rc_predict matches oracle enumeration") {
    const std::string corpus = "the dog ran to the park and the cat sat";
    const auto model = ngram_train(corpus, 1, 1.0);
    const NgramOracle oracle{corpus, 1, 1.0};
    const RcInstance inst{{{"the ", "dog"}, {"the ", "cat"}}, 0};
    const auto pred = rc_predict(model, inst, ChoiceNormalization::Sum);
    const auto expected = oracle.loglik("the ", "dog") >= oracle.loglik("the ", "cat") ? 0u : 1u;
    CHECK(pred.predicted_index == expected);
}

TEST_CASE("argmax_first") {
    const std::vector<double> v{1.0, 3.0, 3.0, -1.0};
    CHECK(argmax_first(v) == 1);
    const std::vector<double> flat{0.0, 0.0};
    CHECK(argmax_first(flat) == 0);
}

TEST_CASE("model spec grammar and registry") {
    const auto u = ModelSpec::parse("uniform:100");
    CHECK(u.kind() == ModelKind::Uniform);
    CHECK(std::get<UniformParams>(u.params).alphabet_size == 100);
    const auto n = ModelSpec::parse("ngram:3:corpus.txt:0.5");
    CHECK(std::get<NgramParams>(n.params).order == 3);
    CHECK(std::get<NgramParams>(n.params).smoothing == 0.5);
    const auto r = ModelSpec::parse("remote:gpt2@http://localhost:8000");
    CHECK(std::get<RemoteParams>(r.params).model == "gpt2");
    CHECK(std::get<RemoteParams>(r.params).base_url == "http://localhost:8000");
    CHECK(kind_of([] { ModelSpec::parse("mystery"); }) == ErrorKind::UnknownModel);

    const auto registry = ModelRegistry::from_file(testing::fixtures() / "models.json");
    CHECK(registry.get("uniform-bytes").kind() == ModelKind::Uniform);
    CHECK(registry.resolve("uniform:256").kind() == ModelKind::Uniform);
    CHECK(kind_of([&] { registry.get("nope"); }) == ErrorKind::UnknownModel);
}

TEST_CASE("normalization names") {
    CHECK(parse_normalization("per_byte") == ChoiceNormalization::PerByte);
    CHECK(to_string(ChoiceNormalization::PerToken) == "per_token");
    CHECK(kind_of([] { parse_normalization("mean"); }) == ErrorKind::InvalidArgument);
}

}
