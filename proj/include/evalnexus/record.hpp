#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace evalnexus {

using Json = nlohmann::ordered_json;

/// A dataset row as ingested: an ordered field mapping whose key order is
/// preserved through parse/dump. Fields are addressed by name or by a dotted
/// path into nested mappings ("choices.text").
class RawRecord {
public:
    RawRecord() : fields_(Json::object()) {}
    explicit RawRecord(Json fields);

    static RawRecord parse(std::string_view text);

    const Json& fields() const noexcept { return fields_; }

    // nullptr when the path does not resolve.
    const Json* find(std::string_view path) const noexcept;
    bool contains(std::string_view path) const noexcept { return find(path) != nullptr; }

    // Throws MissingField when the path does not resolve.
    const Json& at(std::string_view path) const;

    // Scalar rendered as text: strings verbatim, numbers in shortest form.
    std::string text(std::string_view path) const;
    std::vector<std::string> string_list(std::string_view path) const;
    std::int64_t integer(std::string_view path) const;

    std::string dump(int indent = -1) const { return fields_.dump(indent); }

    friend bool operator==(const RawRecord&, const RawRecord&) = default;

private:
    Json fields_;
};

std::string scalar_text(const Json& value);

} // namespace evalnexus
