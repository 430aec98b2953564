#pragma once

#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "reltrans/data.hpp"

namespace reltrans {

/// Flat key-tree configuration.
///
///   # comment (also after a value)
///   key = value
///   outer.inner.key = value
///   [outer.inner]            prefixes following keys with "outer.inner."
///   list = [a, b, 3.5]
///   text = "quoted # not a comment"
///
/// Values are kept as text and converted on access.
class Config {
public:
    using Value = std::variant<std::string, std::vector<std::string>>;

    static Config parse(std::istream& in, const std::string& source = "<config>")
    {
        Config c;
        std::string line, section;
        std::size_t lineno = 0;
        auto fail = [&](const std::string& msg) {
            throw Error(ErrorCode::ConfigError, "cli", source + ":" + std::to_string(lineno) + ": " + msg);
        };
        while (std::getline(in, line)) {
            ++lineno;
            const auto text = detail::trim(strip_comment(line));
            if (text.empty()) continue;
            if (text.front() == '[' && text.find('=') == std::string::npos) {
                if (text.back() != ']') fail("unterminated section header");
                section = detail::trim(text.substr(1, text.size() - 2));
                if (!valid_key(section)) fail("invalid section name '" + section + "'");
                continue;
            }
            const auto eq = text.find('=');
            if (eq == std::string::npos) fail("expected 'key = value'");
            auto key = detail::trim(text.substr(0, eq));
            if (!valid_key(key)) fail("invalid key '" + key + "'");
            if (!section.empty()) key = section + "." + key;
            const auto raw = detail::trim(text.substr(eq + 1));
            if (raw.empty()) fail("missing value for '" + key + "'");
            if (c.values_.count(key)) fail("duplicate key '" + key + "'");
            if (raw.front() == '[') {
                if (raw.back() != ']') fail("unterminated list for '" + key + "'");
                std::vector<std::string> items;
                const auto body = detail::trim(raw.substr(1, raw.size() - 2));
                if (!body.empty())
                    for (const auto& item : split_list(body)) {
                        const auto v = unquote(detail::trim(item));
                        if (v.empty()) fail("empty list element in '" + key + "'");
                        items.push_back(v);
                    }
                c.values_[key] = items;
            } else {
                c.values_[key] = unquote(raw);
            }
        }
        return c;
    }

    static Config parse_string(const std::string& text)
    {
        std::istringstream in(text);
        return parse(in);
    }

    static Config load(const std::string& path)
    {
        std::ifstream in(path);
        if (!in) throw Error(ErrorCode::IoError, "cli", "cannot open config '" + path + "'");
        return parse(in, path);
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::vector<std::string> keys() const
    {
        std::vector<std::string> out;
        for (const auto& [k, v] : values_) out.push_back(k);
        return out;
    }

    /// Keys that start with `prefix` + '.', with the prefix removed.
    std::vector<std::string> children(const std::string& prefix) const
    {
        std::vector<std::string> out;
        const auto p = prefix + ".";
        for (const auto& [k, v] : values_)
            if (k.compare(0, p.size(), p) == 0) out.push_back(k.substr(p.size()));
        return out;
    }

    std::string get_string(const std::string& key) const
    {
        const auto& v = at(key);
        if (auto s = std::get_if<std::string>(&v)) return *s;
        throw Error(ErrorCode::ConfigError, "cli", "'" + key + "' must be a single value, not a list");
    }
    std::string get_string(const std::string& key, const std::string& fallback) const
    {
        return has(key) ? get_string(key) : fallback;
    }

    double get_double(const std::string& key) const { return to_double(key, get_string(key)); }
    double get_double(const std::string& key, double fallback) const { return has(key) ? get_double(key) : fallback; }

    long long get_int(const std::string& key) const { return to_int(key, get_string(key)); }
    long long get_int(const std::string& key, long long fallback) const { return has(key) ? get_int(key) : fallback; }

    bool get_bool(const std::string& key, bool fallback) const
    {
        if (!has(key)) return fallback;
        const auto v = get_string(key);
        if (v == "true" || v == "yes" || v == "1") return true;
        if (v == "false" || v == "no" || v == "0") return false;
        throw Error(ErrorCode::ConfigError, "cli", "'" + key + "' must be true or false");
    }

    /// A list value; a single value reads as a one-element list.
    std::vector<std::string> get_list(const std::string& key) const
    {
        const auto& v = at(key);
        if (auto s = std::get_if<std::string>(&v)) return {*s};
        return std::get<std::vector<std::string>>(v);
    }

    std::vector<double> get_doubles(const std::string& key) const
    {
        std::vector<double> out;
        for (const auto& s : get_list(key)) out.push_back(to_double(key, s));
        return out;
    }

    std::vector<long long> get_ints(const std::string& key) const
    {
        std::vector<long long> out;
        for (const auto& s : get_list(key)) out.push_back(to_int(key, s));
        return out;
    }

    /// Fails on any key outside `allowed`; entries ending in ".*" match a prefix.
    void check_keys(const std::vector<std::string>& allowed) const
    {
        for (const auto& [k, v] : values_) {
            bool ok = false;
            for (const auto& a : allowed) {
                if (a.size() > 2 && a.compare(a.size() - 2, 2, ".*") == 0) {
                    const auto p = a.substr(0, a.size() - 1);
                    ok = k.compare(0, p.size(), p) == 0;
                } else {
                    ok = k == a;
                }
                if (ok) break;
            }
            if (!ok) throw Error(ErrorCode::ConfigError, "cli", "unknown config key '" + k + "'");
        }
    }

private:
    std::map<std::string, Value> values_;

    const Value& at(const std::string& key) const
    {
        auto it = values_.find(key);
        if (it == values_.end()) throw Error(ErrorCode::ConfigError, "cli", "missing config key '" + key + "'");
        return it->second;
    }

    static std::string strip_comment(const std::string& line)
    {
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') quoted = !quoted;
            if (line[i] == '#' && !quoted) return line.substr(0, i);
        }
        return line;
    }

    static bool valid_key(const std::string& k)
    {
        if (k.empty() || k.front() == '.' || k.back() == '.' || k.find("..") != std::string::npos) return false;
        for (char ch : k)
            if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '.' || ch == '-')) return false;
        return true;
    }

    static std::vector<std::string> split_list(const std::string& body)
    {
        std::vector<std::string> out;
        std::string cur;
        bool quoted = false;
        for (char ch : body) {
            if (ch == '"') quoted = !quoted;
            if (ch == ',' && !quoted) {
                out.push_back(cur);
                cur.clear();
            } else {
                cur += ch;
            }
        }
        out.push_back(cur);
        return out;
    }

    static std::string unquote(const std::string& v)
    {
        if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
        return v;
    }

    static double to_double(const std::string& key, const std::string& s)
    {
        if (auto v = detail::parse_number(s)) return *v;
        throw Error(ErrorCode::ConfigError, "cli", "'" + key + "': '" + s + "' is not a number");
    }

    static long long to_int(const std::string& key, const std::string& s)
    {
        const auto v = to_double(key, s);
        if (v != std::floor(v) || std::abs(v) > 9.0e15)
            throw Error(ErrorCode::ConfigError, "cli", "'" + key + "': '" + s + "' is not an integer");
        return static_cast<long long>(v);
    }
};

} // namespace reltrans
