#pragma once

#include "sf2m/core.hpp"

#include <json.hpp>

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace sf2m {

// Minimal TOML-subset reader mapping onto JSON. Supported: comments, [table]
// and [table.sub] headers, key = value with string/integer/float/boolean
// scalars and flat arrays of scalars. Enough to describe experiment configs;
// anything else is a ParseError.
namespace toml {

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

inline nlohmann::json parse_scalar(const std::string& raw, std::size_t line_no) {
    const std::string v = trim(raw);
    if (v.empty()) throw ParseError("toml line " + std::to_string(line_no) + ": empty value");
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"')
            throw ParseError("toml line " + std::to_string(line_no) + ": unterminated string");
        std::string out;
        for (std::size_t i = 1; i + 1 < v.size(); ++i) {
            if (v[i] == '\\' && i + 2 < v.size()) {
                ++i;
                out.push_back(v[i] == 'n' ? '\n' : v[i] == 't' ? '\t' : v[i]);
            } else {
                out.push_back(v[i]);
            }
        }
        return out;
    }
    if (v == "true") return true;
    if (v == "false") return false;
    {
        long long iv = 0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), iv);
        if (ec == std::errc{} && p == v.data() + v.size()) return iv;
    }
    {
        double dv = 0.0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), dv);
        if (ec == std::errc{} && p == v.data() + v.size()) return dv;
    }
    throw ParseError("toml line " + std::to_string(line_no) + ": cannot parse value '" + v + "'");
}

inline nlohmann::json parse_value(const std::string& raw, std::size_t line_no) {
    const std::string v = trim(raw);
    if (!v.empty() && v.front() == '[') {
        if (v.back() != ']') throw ParseError("toml line " + std::to_string(line_no) + ": unterminated array");
        nlohmann::json arr = nlohmann::json::array();
        std::string inner = v.substr(1, v.size() - 2);
        std::string token;
        bool in_string = false;
        int depth = 0;
        auto flush = [&]() {
            const std::string t = trim(token);
            if (!t.empty()) arr.push_back(parse_value(t, line_no));
            token.clear();
        };
        for (const char c : inner) {
            if (c == '"') in_string = !in_string;
            if (!in_string) {
                if (c == '[') ++depth;
                if (c == ']') --depth;
                if (c == ',' && depth == 0) {
                    flush();
                    continue;
                }
            }
            token.push_back(c);
        }
        flush();
        return arr;
    }
    return parse_scalar(v, line_no);
}

} // namespace detail

inline nlohmann::json parse(const std::string& text) {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* table = &root;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string body = detail::trim(detail::strip_comment(line));
        if (body.empty()) continue;
        if (body.front() == '[') {
            if (body.back() != ']')
                throw ParseError("toml line " + std::to_string(line_no) + ": malformed table header");
            const std::string path = detail::trim(body.substr(1, body.size() - 2));
            if (path.empty()) throw ParseError("toml line " + std::to_string(line_no) + ": empty table name");
            table = &root;
            std::size_t start = 0;
            while (start <= path.size()) {
                const std::size_t dot = path.find('.', start);
                const std::string part =
                    detail::trim(path.substr(start, dot == std::string::npos ? std::string::npos : dot - start));
                if (part.empty())
                    throw ParseError("toml line " + std::to_string(line_no) + ": empty table segment");
                table = &(*table)[part];
                if (dot == std::string::npos) break;
                start = dot + 1;
            }
            if (!table->is_object() && !table->is_null())
                throw ParseError("toml line " + std::to_string(line_no) + ": table redefines a value");
            continue;
        }
        const std::size_t eq = body.find('=');
        if (eq == std::string::npos)
            throw ParseError("toml line " + std::to_string(line_no) + ": expected key = value");
        const std::string key = detail::trim(body.substr(0, eq));
        if (key.empty()) throw ParseError("toml line " + std::to_string(line_no) + ": empty key");
        (*table)[key] = detail::parse_value(body.substr(eq + 1), line_no);
    }
    return root;
}

} // namespace toml

/// Load a config file: .toml through the subset reader, .json verbatim.
inline nlohmann::json load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("config: cannot open " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    const std::string text = buffer.str();
    if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") {
        try {
            return nlohmann::json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(std::string("config: ") + e.what());
        }
    }
    return toml::parse(text);
}

} // namespace sf2m
