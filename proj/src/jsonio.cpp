#include "recserve/jsonio.hpp"

#include <charconv>
#include <cmath>
#include <stdexcept>

#include "recserve/hash.hpp"

namespace recserve {

std::string format_double(double value) {
    if (!std::isfinite(value))
        throw std::invalid_argument("non-finite value has no JSON form");
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), value);
    std::string out(buf, res.ptr);
    if (out.find('.') == std::string::npos && out.find('e') == std::string::npos &&
        out.find("inf") == std::string::npos && out.find("nan") == std::string::npos) {
        out += ".0";
    }
    return out;
}

namespace {

void dump_into(const Json& value, std::string& out) {
    switch (value.type()) {
    case Json::value_t::null:
        out += "null";
        break;
    case Json::value_t::boolean:
        out += value.get<bool>() ? "true" : "false";
        break;
    case Json::value_t::number_integer:
        out += std::to_string(value.get<std::int64_t>());
        break;
    case Json::value_t::number_unsigned:
        out += std::to_string(value.get<std::uint64_t>());
        break;
    case Json::value_t::number_float:
        out += format_double(value.get<double>());
        break;
    case Json::value_t::string:
        out += Json(value.get<std::string>()).dump(); // reuse nlohmann escaping
        break;
    case Json::value_t::array: {
        out += '[';
        bool first = true;
        for (const auto& element : value) {
            if (!first) out += ',';
            first = false;
            dump_into(element, out);
        }
        out += ']';
        break;
    }
    case Json::value_t::object: {
        out += '{';
        bool first = true;
        for (auto it = value.begin(); it != value.end(); ++it) {
            if (!first) out += ',';
            first = false;
            out += Json(it.key()).dump();
            out += ':';
            dump_into(it.value(), out);
        }
        out += '}';
        break;
    }
    default:
        throw std::invalid_argument("unsupported JSON value type");
    }
}

} // namespace

std::string canonical_dump(const Json& value) {
    std::string out;
    dump_into(value, out);
    return out;
}

std::string hex64(std::uint64_t value) {
    static const char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[value & 0xF];
        value >>= 4;
    }
    return out;
}

std::string payload_digest(const Json& value) {
    return hex64(fnv1a64(canonical_dump(value)));
}

} // namespace recserve
