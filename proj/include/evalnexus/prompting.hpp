#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "evalnexus/formats.hpp"
#include "evalnexus/record.hpp"

namespace evalnexus {

/// Continuations drawn from a list field of the record, one per element,
/// each rendered through `continuation_template` with `{choice}` bound.
struct ChoiceForm {
    std::string choices_field;
    std::string continuation_template = "{choice}";
};

/// A named PromptSource-style template. Placeholders are `{field}` (dotted
/// paths allowed), `{{` and `}}` are literal braces.
struct PromptTemplate {
    std::string name;
    std::string context_template;
    // Per-label continuations; empty means "use the task label vocabulary".
    std::vector<std::string> verbalizers;
    std::optional<ChoiceForm> choice_form;
    std::string label_field = "label";
    std::string demo_separator = "\n\n";

    static PromptTemplate from_json(const Json& j);
    Json to_json() const;
};

struct TokenBudget {
    std::size_t per_demo_cap = 256;
    std::size_t total_cap = 1024;

    void validate() const;
};

using TokenSeq = std::vector<std::int32_t>;

// Substitutes record fields into `text`. `choice` binds the reserved
// `{choice}` placeholder when present.
std::string render_text(std::string_view text, const RawRecord& raw,
                        const std::optional<std::string>& choice = std::nullopt);

RcInstance render(const PromptTemplate& tpl, const RawRecord& raw, const std::vector<std::string>& labels);
PromptedRcSet render_all(const std::vector<PromptTemplate>& templates, const RawRecord& raw,
                         const std::vector<std::string>& labels);

// Context followed by the gold continuation; throws MissingGold for
// unlabeled records.
std::string render_demo(const RcInstance& rendered);

RcInstance assemble_fewshot(const std::vector<std::string>& demos, const RcInstance& target,
                            std::string_view separator);

// Two-stage truncation: each demo keeps its last per_demo_cap tokens, then
// the earliest demos (and, if needed, earliest tokens) are dropped until the
// whole sequence fits total_cap. The target is never cut.
TokenSeq metaicl_truncate(const std::vector<TokenSeq>& demo_token_seqs, const TokenSeq& target_tokens,
                          const TokenBudget& budget);

} // namespace evalnexus
