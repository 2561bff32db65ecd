#include "evalnexus/prompting.hpp"

#include <algorithm>
#include <set>

#include "evalnexus/error.hpp"

namespace evalnexus {

PromptTemplate PromptTemplate::from_json(const Json& j) {
    PromptTemplate tpl;
    tpl.name = j.at("name").get<std::string>();
    tpl.context_template = j.at("context").get<std::string>();
    if (auto it = j.find("continuations"); it != j.end()) {
        tpl.verbalizers = it->get<std::vector<std::string>>();
    }
    if (auto it = j.find("choices_field"); it != j.end()) {
        ChoiceForm form;
        form.choices_field = it->get<std::string>();
        form.continuation_template = j.value("continuation", std::string("{choice}"));
        tpl.choice_form = std::move(form);
    }
    tpl.label_field = j.value("label_field", std::string("label"));
    tpl.demo_separator = j.value("demo_separator", std::string("\n\n"));
    if (tpl.name.empty()) {
        throw Error(ErrorKind::ConfigError, "template without a name");
    }
    return tpl;
}

Json PromptTemplate::to_json() const {
    Json j = Json::object();
    j["name"] = name;
    j["context"] = context_template;
    if (!verbalizers.empty()) {
        j["continuations"] = verbalizers;
    }
    if (choice_form) {
        j["choices_field"] = choice_form->choices_field;
        j["continuation"] = choice_form->continuation_template;
    }
    j["label_field"] = label_field;
    j["demo_separator"] = demo_separator;
    return j;
}

void TokenBudget::validate() const {
    if (per_demo_cap == 0 || total_cap == 0 || per_demo_cap > total_cap) {
        throw Error(ErrorKind::InvalidArgument, "token budget needs 0 < per_demo_cap <= total_cap");
    }
}

std::string render_text(std::string_view text, const RawRecord& raw, const std::optional<std::string>& choice) {
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '{') {
            if (i + 1 < text.size() && text[i + 1] == '{') {
                out += '{';
                ++i;
                continue;
            }
            const auto close = text.find('}', i + 1);
            if (close == std::string_view::npos) {
                throw Error(ErrorKind::TemplateSyntax, "unterminated placeholder in '" + std::string(text) + "'");
            }
            const auto name = text.substr(i + 1, close - i - 1);
            if (name.empty() || name.find('{') != std::string_view::npos) {
                throw Error(ErrorKind::TemplateSyntax, "malformed placeholder in '" + std::string(text) + "'");
            }
            if (name == "choice") {
                if (!choice) {
                    throw Error(ErrorKind::UnresolvedPlaceholder, "{choice} used outside a choice continuation");
                }
                out += *choice;
            } else {
                const Json* value = raw.find(name);
                if (value == nullptr) {
                    throw Error(ErrorKind::UnresolvedPlaceholder,
                                "placeholder {" + std::string(name) + "} has no matching field");
                }
                out += scalar_text(*value);
            }
            i = close;
        } else if (c == '}') {
            if (i + 1 < text.size() && text[i + 1] == '}') {
                out += '}';
                ++i;
                continue;
            }
            throw Error(ErrorKind::TemplateSyntax, "stray '}' in '" + std::string(text) + "'");
        } else {
            out += c;
        }
    }
    return out;
}

RcInstance render(const PromptTemplate& tpl, const RawRecord& raw, const std::vector<std::string>& labels) {
    RcInstance rc;
    const std::string context = render_text(tpl.context_template, raw);
    if (tpl.choice_form) {
        for (const auto& choice : raw.string_list(tpl.choice_form->choices_field)) {
            rc.choices.push_back({context, render_text(tpl.choice_form->continuation_template, raw, choice)});
        }
    } else {
        const auto& verbalizers = tpl.verbalizers.empty() ? labels : tpl.verbalizers;
        for (const auto& verbalizer : verbalizers) {
            rc.choices.push_back({context, render_text(verbalizer, raw)});
        }
    }
    if (const Json* label = raw.find(tpl.label_field); label != nullptr && label->is_number_integer()) {
        if (const auto value = label->get<std::int64_t>(); value >= 0) {
            rc.correct_choice = static_cast<int>(value);
        }
    }
    rc.validate();
    return rc;
}

PromptedRcSet render_all(const std::vector<PromptTemplate>& templates, const RawRecord& raw,
                         const std::vector<std::string>& labels) {
    if (templates.empty()) {
        throw Error(ErrorKind::InvalidArgument, "render_all needs at least one template");
    }
    std::set<std::string_view> seen;
    for (const auto& tpl : templates) {
        if (!seen.insert(tpl.name).second) {
            throw Error(ErrorKind::DuplicateTemplateName, "template name '" + tpl.name + "' used twice");
        }
    }
    PromptedRcSet set;
    for (const auto& tpl : templates) {
        set.by_prompt.emplace_back(tpl.name, render(tpl, raw, labels));
    }
    const bool gold = set.by_prompt.front().second.correct_choice.has_value();
    for (const auto& [name, inst] : set.by_prompt) {
        if (inst.correct_choice.has_value() != gold) {
            throw Error(ErrorKind::InconsistentGold, "prompt '" + name + "' disagrees on gold label presence");
        }
    }
    return set;
}

std::string render_demo(const RcInstance& rendered) {
    if (!rendered.correct_choice) {
        throw Error(ErrorKind::MissingGold, "few-shot demonstrations need a gold label");
    }
    const auto& gold = rendered.choices.at(static_cast<std::size_t>(*rendered.correct_choice));
    return gold.context + gold.continuation;
}

RcInstance assemble_fewshot(const std::vector<std::string>& demos, const RcInstance& target,
                            std::string_view separator) {
    if (demos.empty()) {
        return target;
    }
    std::string prefix;
    for (const auto& demo : demos) {
        prefix += demo;
        prefix += separator;
    }
    RcInstance out = target;
    for (auto& choice : out.choices) {
        choice.context = prefix + choice.context;
    }
    return out;
}

TokenSeq metaicl_truncate(const std::vector<TokenSeq>& demo_token_seqs, const TokenSeq& target_tokens,
                          const TokenBudget& budget) {
    budget.validate();
    if (target_tokens.size() >= budget.total_cap) {
        throw Error(ErrorKind::TargetTooLong, "target has " + std::to_string(target_tokens.size()) +
                                                  " tokens, total cap is " + std::to_string(budget.total_cap));
    }
    std::vector<TokenSeq> demos;
    demos.reserve(demo_token_seqs.size());
    std::size_t total = target_tokens.size();
    for (const auto& demo : demo_token_seqs) {
        const auto keep = std::min(demo.size(), budget.per_demo_cap);
        demos.emplace_back(demo.end() - static_cast<std::ptrdiff_t>(keep), demo.end());
        total += keep;
    }
    // Drop demos lying entirely inside the excess, then trim the front of
    // the first survivor.
    std::size_t excess = total > budget.total_cap ? total - budget.total_cap : 0;
    std::size_t first = 0;
    while (first < demos.size() && excess >= demos[first].size()) {
        excess -= demos[first].size();
        ++first;
    }
    TokenSeq out;
    out.reserve(std::min(total, budget.total_cap));
    for (std::size_t i = first; i < demos.size(); ++i) {
        const auto skip = i == first ? excess : 0;
        out.insert(out.end(), demos[i].begin() + static_cast<std::ptrdiff_t>(skip), demos[i].end());
    }
    out.insert(out.end(), target_tokens.begin(), target_tokens.end());
    return out;
}

} // namespace evalnexus
