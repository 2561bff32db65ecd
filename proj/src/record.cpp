#include "evalnexus/record.hpp"

#include "evalnexus/error.hpp"

namespace evalnexus {

RawRecord::RawRecord(Json fields) : fields_(std::move(fields)) {
    if (!fields_.is_object()) {
        throw Error(ErrorKind::ParseError, "record must be a JSON object");
    }
}

RawRecord RawRecord::parse(std::string_view text) {
    Json parsed;
    try {
        parsed = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw Error(ErrorKind::ParseError, e.what());
    }
    return RawRecord(std::move(parsed));
}

const Json* RawRecord::find(std::string_view path) const noexcept {
    // A literal key containing dots wins over path traversal.
    if (auto it = fields_.find(std::string(path)); it != fields_.end()) {
        return &*it;
    }
    const Json* node = &fields_;
    std::size_t pos = 0;
    while (pos <= path.size()) {
        const auto dot = path.find('.', pos);
        const auto part = path.substr(pos, dot == std::string_view::npos ? std::string_view::npos : dot - pos);
        if (!node->is_object()) {
            return nullptr;
        }
        auto it = node->find(std::string(part));
        if (it == node->end()) {
            return nullptr;
        }
        node = &*it;
        if (dot == std::string_view::npos) {
            return node;
        }
        pos = dot + 1;
    }
    return nullptr;
}

const Json& RawRecord::at(std::string_view path) const {
    if (const Json* value = find(path)) {
        return *value;
    }
    throw Error(ErrorKind::MissingField, "record has no field '" + std::string(path) + "'");
}

std::string scalar_text(const Json& value) {
    if (value.is_string()) {
        return value.get<std::string>();
    }
    if (value.is_number() || value.is_boolean()) {
        return value.dump();
    }
    throw Error(ErrorKind::InvalidInstance, "expected a scalar value, got " + std::string(value.type_name()));
}

std::string RawRecord::text(std::string_view path) const {
    return scalar_text(at(path));
}

std::vector<std::string> RawRecord::string_list(std::string_view path) const {
    const Json& value = at(path);
    if (!value.is_array()) {
        throw Error(ErrorKind::InvalidInstance, "field '" + std::string(path) + "' is not a list");
    }
    std::vector<std::string> out;
    out.reserve(value.size());
    for (const auto& item : value) {
        out.push_back(scalar_text(item));
    }
    return out;
}

std::int64_t RawRecord::integer(std::string_view path) const {
    const Json& value = at(path);
    if (!value.is_number_integer()) {
        throw Error(ErrorKind::InvalidInstance, "field '" + std::string(path) + "' is not an integer");
    }
    return value.get<std::int64_t>();
}

} // namespace evalnexus
