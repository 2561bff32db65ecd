#include "doctest.h"
#include "golden.hpp"

#include <numeric>

#include "evalnexus/error.hpp"
#include "evalnexus/prompting.hpp"

using namespace evalnexus;

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

PromptTemplate constant(std::string name, std::vector<std::string> verbalizers = {}) {
    PromptTemplate t;
    t.name = std::move(name);
    t.context_template = "Is it?";
    t.verbalizers = std::move(verbalizers);
    return t;
}

TokenSeq iota(std::size_t n, std::int32_t from) {
    TokenSeq out(n);
    std::iota(out.begin(), out.end(), from);
    return out;
}

} // namespace

TEST_SUITE("prompting") {

TEST_CASE("render_text substitution") {
    const auto raw = RawRecord::parse(R"({"a": "x", "n": {"b": 3}})");
    CHECK(render_text("{a}-{n.b} {{lit}}", raw) == "x-3 {lit}");
    CHECK(render_text("pick {choice}", raw, std::string("y")) == "pick y");
    CHECK(kind_of([&] { render_text("{premise}", raw); }) == ErrorKind::UnresolvedPlaceholder);
    CHECK(kind_of([&] { render_text("{a", raw); }) == ErrorKind::TemplateSyntax);
    CHECK(kind_of([&] { render_text("a}", raw); }) == ErrorKind::TemplateSyntax);
    CHECK(kind_of([&] { render_text("{choice}", raw); }) == ErrorKind::UnresolvedPlaceholder);
}

TEST_CASE("render with a constant template uses the verbalizers") {
    const auto raw = RawRecord::parse(R"({"label": 0})");
    const auto rc = render(constant("c", {" yes", " no"}), raw, golden::kRteLabels);
    CHECK(rc.choices[0].context == "Is it?");
    CHECK(rc.choices[1].context == "Is it?");
    CHECK(rc.choices[0].continuation == " yes");
    CHECK(rc.choices[1].continuation == " no");
    CHECK(rc.correct_choice == 0);

    const auto vocab = render(constant("v"), RawRecord::parse("{}"), golden::kRteLabels);
    CHECK(vocab.choices[1].continuation == "not_entailment");
    CHECK_FALSE(vocab.correct_choice.has_value());
}

TEST_CASE("render with a missing field") {
    PromptTemplate t = constant("p", {"a", "b"});
    t.context_template = "{premise}";
    CHECK(kind_of([&] { render(t, RawRecord::parse(golden::kRteRaw), golden::kRteLabels); }) ==
          ErrorKind::UnresolvedPlaceholder);
}

TEST_CASE("render with a choice form") {
    PromptTemplate t;
    t.name = "mc";
    t.context_template = "Q: {q}\nA:";
    t.choice_form = ChoiceForm{"opts", " {choice}"};
    const auto rc = render(t, RawRecord::parse(R"({"q": "2+2?", "opts": ["3", "4", "5"], "label": 1})"), {});
    REQUIRE(rc.choices.size() == 3);
    CHECK(rc.choices[2].continuation == " 5");
    CHECK(rc.correct_choice == 1);
}

TEST_CASE("render_all") {
    const auto raw = RawRecord::parse(golden::kRteRaw);
    const auto single = render_all({golden::rc_template()}, raw, golden::kRteLabels);
    REQUIRE(single.size() == 1);
    CHECK(single.at("true_false") == render(golden::rc_template(), raw, golden::kRteLabels));
    CHECK(kind_of([&] {
              render_all({constant("same", {"a", "b"}), constant("same", {"c", "d"})}, raw, golden::kRteLabels);
          }) == ErrorKind::DuplicateTemplateName);
    auto unlabeled = constant("u", {"a", "b"});
    unlabeled.label_field = "nothing";
    CHECK(kind_of([&] { render_all({constant("l", {"a", "b"}), unlabeled}, raw, golden::kRteLabels); }) ==
          ErrorKind::InconsistentGold);
}

TEST_CASE("few-shot assembly") {
    RcInstance target{{{"Q2", " a"}, {"Q2", " b"}}, 0};
    CHECK(assemble_fewshot({}, target, "\n\n") == target);
    const auto two = assemble_fewshot({"Q1 A1"}, target, "\n\n");
    CHECK(two.choices[0].context == "Q1 A1\n\nQ2");
    CHECK(two.choices[1].context == "Q1 A1\n\nQ2");
    CHECK(two.choices[1].continuation == " b");
    const auto spaced = assemble_fewshot({"d1", "d2"}, target, " ");
    CHECK(spaced.choices[0].context == "d1 d2 Q2");

    CHECK(render_demo(RcInstance{{{"c", " x"}, {"c", " y"}}, 1}) == "c y");
    CHECK(kind_of([] { render_demo(RcInstance{{{"c", " x"}, {"c", " y"}}, std::nullopt}); }) ==
          ErrorKind::MissingGold);
}

TEST_CASE("MetaICL truncation") {
    const TokenBudget budget{5, 100};
    CHECK(metaicl_truncate({iota(7, 0)}, {}, budget) == iota(5, 2));

    const TokenBudget roomy{10, 100};
    const auto unchanged = metaicl_truncate({iota(3, 0), iota(4, 10)}, iota(2, 50), roomy);
    CHECK(unchanged == TokenSeq{0, 1, 2, 10, 11, 12, 13, 50, 51});

    // 3 + 4 + 2 = 9 against a cap of 6 drops exactly the first demo; a cap
    // of 5 also cuts one token from the front of the second.
    CHECK(metaicl_truncate({iota(3, 0), iota(4, 10)}, iota(2, 50), TokenBudget{6, 6}) ==
          TokenSeq{10, 11, 12, 13, 50, 51});
    CHECK(metaicl_truncate({iota(3, 0), iota(4, 10)}, iota(2, 50), TokenBudget{5, 5}) ==
          TokenSeq{11, 12, 13, 50, 51});

    CHECK(kind_of([] { metaicl_truncate({}, iota(6, 0), TokenBudget{4, 6}); }) == ErrorKind::TargetTooLong);
    CHECK(kind_of([] { metaicl_truncate({}, iota(1, 0), TokenBudget{0, 6}); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("MetaICL truncation bounds") {
    for (std::size_t cap = 2; cap < 12; ++cap) {
        for (std::size_t per = 1; per <= std::min<std::size_t>(cap, 5); ++per) {
            const auto out = metaicl_truncate({iota(4, 0), iota(5, 10), iota(2, 20)}, iota(1, 99), TokenBudget{per, cap});
            CHECK(out.size() <= cap);
            CHECK(out.back() == 99);
        }
    }
}

TEST_CASE("template JSON round trip") {
    auto t = golden::rc_template();
    t.choice_form = ChoiceForm{"choices.text", " {choice}"};
    const auto back = PromptTemplate::from_json(t.to_json());
    CHECK(back.to_json() == t.to_json());
    CHECK(back.context_template == t.context_template);
}

}
