#include "evalnexus/formats.hpp"

#include <array>
#include <charconv>

#include "evalnexus/error.hpp"

namespace evalnexus {

namespace {

constexpr std::array<std::pair<InstanceFormat, std::string_view>, 9> kFormatNames{{
    {InstanceFormat::HfDict, "hf_dict"},
    {InstanceFormat::MultipleChoice, "multiple_choice"},
    {InstanceFormat::QuestionAnswering, "question_answering"},
    {InstanceFormat::Classification, "classification"},
    {InstanceFormat::Eleuther, "eleuther"},
    {InstanceFormat::T5, "t5"},
    {InstanceFormat::RankedClassification, "ranked_classification"},
    {InstanceFormat::PromptSource, "promptsource"},
    {InstanceFormat::Perplexity, "perplexity"},
}};

std::optional<int> read_label(const RawRecord& raw, const FieldSchema& schema, std::size_t n_choices) {
    const std::string* label_field = schema.slot("label");
    if (label_field == nullptr) {
        return std::nullopt;
    }
    const Json* value = raw.find(*label_field);
    if (value == nullptr || value->is_null()) {
        return std::nullopt;
    }
    if (value->is_number_integer()) {
        const auto label = value->get<std::int64_t>();
        // GLUE-style test splits mark unlabeled rows with -1.
        if (label < 0) {
            return std::nullopt;
        }
        return static_cast<int>(label);
    }
    if (value->is_string()) {
        const auto key = value->get<std::string>();
        if (const std::string* keys_field = schema.slot("choice_labels")) {
            const auto keys = raw.string_list(*keys_field);
            for (std::size_t i = 0; i < keys.size(); ++i) {
                if (keys[i] == key) {
                    return static_cast<int>(i);
                }
            }
            throw Error(ErrorKind::InvalidInstance, "label '" + key + "' is not among the choice labels");
        }
        int parsed = 0;
        const auto* end = key.data() + key.size();
        if (auto [ptr, ec] = std::from_chars(key.data(), end, parsed); ec == std::errc{} && ptr == end) {
            return parsed;
        }
    }
    (void)n_choices;
    throw Error(ErrorKind::InvalidInstance, "label field '" + *label_field + "' has unsupported value " + value->dump());
}

void append_quoted(std::string& out, std::string_view s) {
    out += '"';
    for (char c : s) {
        switch (c) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\t': out += "\\t"; break;
        default: out += c;
        }
    }
    out += '"';
}

std::string py_quoted(std::string_view s) {
    std::string out;
    append_quoted(out, s);
    return out;
}

template <class T, class F>
std::string list_repr(const std::vector<T>& items, F&& each) {
    std::string out = "[";
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) {
            out += ", ";
        }
        out += each(items[i]);
    }
    return out + "]";
}

} // namespace

std::string_view to_string(InstanceFormat format) noexcept {
    for (const auto& [f, name] : kFormatNames) {
        if (f == format) {
            return name;
        }
    }
    return "unknown";
}

InstanceFormat parse_instance_format(std::string_view name) {
    for (const auto& [f, n] : kFormatNames) {
        if (n == name) {
            return f;
        }
    }
    throw Error(ErrorKind::ConfigError, "unknown instance format '" + std::string(name) + "'");
}

void RcInstance::validate() const {
    if (choices.size() < 2) {
        throw Error(ErrorKind::InvalidInstance, "ranked classification needs at least 2 choices");
    }
    for (const auto& choice : choices) {
        if (choice.continuation.empty()) {
            throw Error(ErrorKind::InvalidInstance, "empty continuation");
        }
    }
    if (correct_choice && (*correct_choice < 0 || static_cast<std::size_t>(*correct_choice) >= choices.size())) {
        throw Error(ErrorKind::InvalidInstance, "correct_choice out of range");
    }
}

const RcInstance& PromptedRcSet::at(std::string_view prompt_name) const {
    for (const auto& [name, inst] : by_prompt) {
        if (name == prompt_name) {
            return inst;
        }
    }
    throw Error(ErrorKind::InvalidArgument, "no prompt named '" + std::string(prompt_name) + "'");
}

const std::string* FieldSchema::slot(std::string_view name) const noexcept {
    for (const auto& [slot_name, field] : slots) {
        if (slot_name == name) {
            return &field;
        }
    }
    return nullptr;
}

const std::string& FieldSchema::require_slot(std::string_view name) const {
    if (const std::string* field = slot(name)) {
        return *field;
    }
    throw Error(ErrorKind::ConfigError, "schema declares no '" + std::string(name) + "' slot");
}

FieldSchema FieldSchema::from_json(const Json& j) {
    FieldSchema schema;
    if (!j.is_object()) {
        throw Error(ErrorKind::ConfigError, "schema must be an object");
    }
    if (auto it = j.find("slots"); it != j.end()) {
        for (const auto& [slot_name, field] : it->items()) {
            schema.slots.emplace_back(slot_name, field.get<std::string>());
        }
    }
    if (auto it = j.find("verbalizer"); it != j.end()) {
        for (const auto& [key, text] : it->items()) {
            std::int64_t label = 0;
            const auto* end = key.data() + key.size();
            if (auto [ptr, ec] = std::from_chars(key.data(), end, label); ec != std::errc{} || ptr != end) {
                throw Error(ErrorKind::ConfigError, "verbalizer key '" + key + "' is not an integer");
            }
            schema.verbalizer.emplace(label, text.get<std::string>());
        }
    }
    return schema;
}

Json FieldSchema::to_json() const {
    Json j = Json::object();
    j["slots"] = Json::object();
    for (const auto& [slot_name, field] : slots) {
        j["slots"][slot_name] = field;
    }
    if (!verbalizer.empty()) {
        j["verbalizer"] = Json::object();
        for (const auto& [label, text] : verbalizer) {
            j["verbalizer"][std::to_string(label)] = text;
        }
    }
    return j;
}

McInstance to_mc(const RawRecord& raw, const FieldSchema& schema) {
    McInstance mc;
    if (const std::string* id_field = schema.slot("id")) {
        mc.id = raw.text(*id_field);
    }
    mc.question = raw.text(schema.require_slot("question"));
    mc.answer_choices = raw.string_list(schema.require_slot("choices"));
    if (mc.answer_choices.size() < 2) {
        throw Error(ErrorKind::BadChoiceCount,
                    "multiple choice needs at least 2 choices, got " + std::to_string(mc.answer_choices.size()));
    }
    for (const auto& choice : mc.answer_choices) {
        if (choice.empty()) {
            throw Error(ErrorKind::InvalidInstance, "empty answer choice");
        }
    }
    mc.correct_answer_index = read_label(raw, schema, mc.answer_choices.size());
    if (mc.correct_answer_index && static_cast<std::size_t>(*mc.correct_answer_index) >= mc.answer_choices.size()) {
        throw Error(ErrorKind::InvalidInstance, "correct_answer_index out of range");
    }
    return mc;
}

QaInstance to_qa(const RawRecord& raw, const FieldSchema& schema) {
    QaInstance qa;
    if (const std::string* id_field = schema.slot("id")) {
        qa.id = raw.text(*id_field);
    }
    qa.question = raw.text(schema.require_slot("question"));
    qa.context = raw.text(schema.require_slot("context"));
    const std::string& answers_field = schema.require_slot("answers");
    const Json& answers = raw.at(answers_field);
    if (!answers.is_object() || !answers.contains("text") || !answers.contains("answer_start")) {
        throw Error(ErrorKind::MissingField, "answers field '" + answers_field + "' needs 'text' and 'answer_start'");
    }
    for (const auto& text : answers.at("text")) {
        qa.answers.texts.push_back(scalar_text(text));
    }
    for (const auto& start : answers.at("answer_start")) {
        qa.answers.answer_starts.push_back(start.get<std::int64_t>());
    }
    if (qa.answers.texts.size() != qa.answers.answer_starts.size()) {
        throw Error(ErrorKind::RaggedAnswers, std::to_string(qa.answers.texts.size()) + " answer texts but " +
                                                  std::to_string(qa.answers.answer_starts.size()) + " starts");
    }
    return qa;
}

std::vector<std::size_t> unlocated_answers(const QaInstance& qa) {
    std::vector<std::size_t> bad;
    for (std::size_t i = 0; i < qa.answers.texts.size(); ++i) {
        const auto start = qa.answers.answer_starts[i];
        if (start == -1) {
            continue;
        }
        const auto& text = qa.answers.texts[i];
        if (start < 0 || static_cast<std::size_t>(start) + text.size() > qa.context.size() ||
            qa.context.compare(static_cast<std::size_t>(start), text.size(), text) != 0) {
            bad.push_back(i);
        }
    }
    return bad;
}

ClassificationInstance to_classification(const RawRecord& raw, const FieldSchema& schema) {
    std::vector<std::string> texts;
    for (const auto& [slot_name, field] : schema.slots) {
        if (slot_name.starts_with("text")) {
            texts.push_back(raw.text(field));
        }
    }
    ClassificationInstance inst;
    if (texts.size() == 1) {
        inst.text = std::move(texts[0]);
    } else if (texts.size() == 2) {
        inst.text = std::make_pair(std::move(texts[0]), std::move(texts[1]));
    } else {
        throw Error(ErrorKind::ConfigError, "classification schema needs one or two text slots");
    }
    inst.label = read_label(raw, schema, 0);
    return inst;
}

T5Instance to_t5(const RawRecord& raw, std::string_view task_name, const std::vector<std::string>& field_order,
                 const FieldSchema& schema) {
    T5Instance t5;
    t5.input = std::string(task_name);
    for (const auto& field : field_order) {
        t5.input += ' ';
        t5.input += field;
        t5.input += ": ";
        t5.input += raw.text(field);
    }
    if (const auto label = read_label(raw, schema, 0)) {
        auto it = schema.verbalizer.find(*label);
        if (it == schema.verbalizer.end()) {
            throw Error(ErrorKind::MissingVerbalizer, "no verbalizer for label " + std::to_string(*label));
        }
        t5.target = it->second;
    }
    return t5;
}

RcInstance mc_to_rc(const McInstance& mc, std::string_view question_prefix, std::string_view answer_prefix) {
    std::string context;
    context.reserve(question_prefix.size() + mc.question.size() + answer_prefix.size());
    context.append(question_prefix).append(mc.question).append(answer_prefix);
    RcInstance rc;
    rc.choices.reserve(mc.answer_choices.size());
    for (const auto& choice : mc.answer_choices) {
        rc.choices.push_back({context, " " + choice});
    }
    rc.correct_choice = mc.correct_answer_index;
    return rc;
}

std::string repr(const McInstance& mc) {
    std::string out = "HFMCInstance(id=" + py_quoted(mc.id) + ", question=" + py_quoted(mc.question) + ", answer_choices=";
    out += list_repr(mc.answer_choices, [](const std::string& s) { return py_quoted(s); });
    out += ", correct_answer_index=";
    out += mc.correct_answer_index ? std::to_string(*mc.correct_answer_index) : "None";
    return out + ")";
}

std::string repr(const QaInstance& qa) {
    std::string out = "HFQAInstance(id=" + py_quoted(qa.id) + ", question=" + py_quoted(qa.question) +
                      ", context=" + py_quoted(qa.context) + ", answers={\"text\": ";
    out += list_repr(qa.answers.texts, [](const std::string& s) { return py_quoted(s); });
    out += ", \"answer_start\": ";
    out += list_repr(qa.answers.answer_starts, [](std::int64_t v) { return std::to_string(v); });
    return out + "})";
}

std::string repr(const ClassificationInstance& inst) {
    std::string out = "HFClassificationInstance(text=";
    if (const auto* single = std::get_if<std::string>(&inst.text)) {
        out += py_quoted(*single);
    } else {
        const auto& pair = std::get<std::pair<std::string, std::string>>(inst.text);
        out += "(" + py_quoted(pair.first) + ", " + py_quoted(pair.second) + ")";
    }
    out += ", label=";
    out += inst.label ? std::to_string(*inst.label) : "None";
    return out + ")";
}

std::string repr(const T5Instance& t5) {
    return "(" + py_quoted(t5.input) + ", " + py_quoted(t5.target) + ")";
}

std::string repr(const RcInstance& rc) {
    std::string out = "RankClassificationInstance(choices=";
    out += list_repr(rc.choices, [](const RcChoice& c) {
        return "(" + py_quoted(c.context) + ", " + py_quoted(c.continuation) + ")";
    });
    out += ", correct_choice=";
    out += rc.correct_choice ? std::to_string(*rc.correct_choice) : "None";
    return out + ")";
}

std::string repr(const PromptedRcSet& set) {
    std::string out = "{";
    for (std::size_t i = 0; i < set.by_prompt.size(); ++i) {
        if (i) {
            out += ", ";
        }
        out += py_quoted(set.by_prompt[i].first) + ": " + repr(set.by_prompt[i].second);
    }
    return out + "}";
}

Json to_json(const RcInstance& rc) {
    Json j = Json::object();
    j["choices"] = Json::array();
    for (const auto& c : rc.choices) {
        j["choices"].push_back(Json::array({c.context, c.continuation}));
    }
    j["correct_choice"] = rc.correct_choice ? Json(*rc.correct_choice) : Json(nullptr);
    return j;
}

RcInstance rc_from_json(const Json& j) {
    RcInstance rc;
    for (const auto& c : j.at("choices")) {
        rc.choices.push_back({c.at(0).get<std::string>(), c.at(1).get<std::string>()});
    }
    if (const auto& gold = j.at("correct_choice"); !gold.is_null()) {
        rc.correct_choice = gold.get<int>();
    }
    return rc;
}

} // namespace evalnexus
