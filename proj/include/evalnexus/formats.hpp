#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "evalnexus/record.hpp"

namespace evalnexus {

// Instance formats. Model code depends on these, never on dataset layouts.
enum class InstanceFormat {
    HfDict,
    MultipleChoice,
    QuestionAnswering,
    Classification,
    Eleuther, // reserved tag, no converter
    T5,
    RankedClassification,
    PromptSource,
    Perplexity,
};

std::string_view to_string(InstanceFormat format) noexcept;
InstanceFormat parse_instance_format(std::string_view name);

struct McInstance {
    std::string id;
    std::string question;
    std::vector<std::string> answer_choices;
    std::optional<int> correct_answer_index;

    friend bool operator==(const McInstance&, const McInstance&) = default;
};

struct QaAnswers {
    std::vector<std::string> texts;
    std::vector<std::int64_t> answer_starts;

    friend bool operator==(const QaAnswers&, const QaAnswers&) = default;
};

struct QaInstance {
    std::string id;
    std::string question;
    std::string context;
    QaAnswers answers;

    friend bool operator==(const QaInstance&, const QaInstance&) = default;
};

using ClassificationText = std::variant<std::string, std::pair<std::string, std::string>>;

struct ClassificationInstance {
    ClassificationText text;
    std::optional<int> label;

    friend bool operator==(const ClassificationInstance&, const ClassificationInstance&) = default;
};

struct T5Instance {
    std::string input;
    std::string target;

    friend bool operator==(const T5Instance&, const T5Instance&) = default;
};

struct RcChoice {
    std::string context;
    std::string continuation;

    friend bool operator==(const RcChoice&, const RcChoice&) = default;
};

/// Ranked-classification instance: the lingua franca for scoring.
struct RcInstance {
    std::vector<RcChoice> choices;
    std::optional<int> correct_choice;

    // Throws InvalidInstance on < 2 choices, empty continuations or an
    // out-of-range gold index.
    void validate() const;

    friend bool operator==(const RcInstance&, const RcInstance&) = default;
};

/// One RcInstance per prompt, kept in template declaration order.
struct PromptedRcSet {
    std::vector<std::pair<std::string, RcInstance>> by_prompt;

    const RcInstance& at(std::string_view prompt_name) const;
    std::size_t size() const noexcept { return by_prompt.size(); }
};

/// Maps the slots of one target format to raw field paths. Slot order is
/// the declaration order of the config file.
struct FieldSchema {
    std::vector<std::pair<std::string, std::string>> slots;
    std::map<std::int64_t, std::string> verbalizer;

    const std::string* slot(std::string_view name) const noexcept;
    const std::string& require_slot(std::string_view name) const;

    static FieldSchema from_json(const Json& j);
    Json to_json() const;
};

McInstance to_mc(const RawRecord& raw, const FieldSchema& schema);
QaInstance to_qa(const RawRecord& raw, const FieldSchema& schema);
ClassificationInstance to_classification(const RawRecord& raw, const FieldSchema& schema);
T5Instance to_t5(const RawRecord& raw, std::string_view task_name, const std::vector<std::string>& field_order,
                 const FieldSchema& schema);
RcInstance mc_to_rc(const McInstance& mc, std::string_view question_prefix, std::string_view answer_prefix);

// Indices of answers whose start offset does not locate their text in the
// context. -1 starts are never reported.
std::vector<std::size_t> unlocated_answers(const QaInstance& qa);

// Python-style one-line renderings, matching the listing notation.
std::string repr(const McInstance& mc);
std::string repr(const QaInstance& qa);
std::string repr(const ClassificationInstance& inst);
std::string repr(const T5Instance& t5);
std::string repr(const RcInstance& rc);
std::string repr(const PromptedRcSet& set);

Json to_json(const RcInstance& rc);
RcInstance rc_from_json(const Json& j);

} // namespace evalnexus
