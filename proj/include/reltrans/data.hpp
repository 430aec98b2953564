#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "reltrans/error.hpp"

namespace reltrans {

enum class Scenario { One = 1, Two = 2, Three = 3 };

inline int to_int(Scenario s) { return static_cast<int>(s); }

inline Scenario scenario_from_int(int v)
{
    if (v < 1 || v > 3)
        throw Error(ErrorCode::ConfigError, "data", "scenario must be 1, 2 or 3, got " + std::to_string(v));
    return static_cast<Scenario>(v);
}

/// One unit as supplied by a caller. `w` is empty when the unit carries no
/// target-only covariates.
struct Observation {
    double y = 0.0;
    int s = 0;
    int a = 0;
    std::vector<double> x;
    std::vector<double> w;
};

/// Read-only view of one stored row.
struct UnitRef {
    std::size_t row = 0;
    double y = 0.0;
    int s = 0;
    int a = 0;
    std::span<const double> x;
    std::span<const double> w;   // empty when w is absent
};

/// Immutable columnar table of observations.
///
/// Scenario flags are derived from the rows at construction:
///   - scenario 1 iff every s = 0 row has a = 0;
///   - scenario 2 whenever both sources are present (empirical arm coverage
///     is reported by `validate`);
///   - scenario 3 iff every s = 0 row carries w (and q >= 1).
/// w values on s = 1 rows are discarded.
class Dataset {
public:
    Dataset() = default;

    static Dataset from_observations(const std::vector<Observation>& rows,
                                     std::vector<std::string> x_names = {},
                                     std::vector<std::string> w_names = {})
    {
        Dataset d;
        if (rows.empty())
            throw Error(ErrorCode::StructuralError, "data", "dataset has no rows");
        d.p_ = rows.front().x.size();
        d.q_ = 0;
        for (const auto& r : rows)
            if (r.s == 0 && !r.w.empty()) { d.q_ = r.w.size(); break; }

        d.n_ = rows.size();
        d.y_.reserve(d.n_);
        d.s_.reserve(d.n_);
        d.a_.reserve(d.n_);
        d.x_.reserve(d.n_ * d.p_);
        d.w_.assign(d.n_ * d.q_, 0.0);
        d.has_w_.assign(d.n_, 0);

        std::size_t target_with_w = 0;
        for (std::size_t i = 0; i < d.n_; ++i) {
            const auto& r = rows[i];
            if (r.s != 0 && r.s != 1)
                throw Error(ErrorCode::ParseError, "data", "row " + std::to_string(i) + ": s must be 0 or 1");
            if (r.a != 0 && r.a != 1)
                throw Error(ErrorCode::ParseError, "data", "row " + std::to_string(i) + ": a must be 0 or 1");
            if (r.x.size() != d.p_)
                throw Error(ErrorCode::DimensionError, "data",
                            "row " + std::to_string(i) + ": covariate length " + std::to_string(r.x.size())
                                + " differs from " + std::to_string(d.p_));
            d.y_.push_back(r.y);
            d.s_.push_back(r.s);
            d.a_.push_back(r.a);
            d.x_.insert(d.x_.end(), r.x.begin(), r.x.end());
            if (r.s == 1) {
                ++d.n1_;
                continue;
            }
            ++d.n0_;
            if (!r.w.empty()) {
                if (r.w.size() != d.q_)
                    throw Error(ErrorCode::DimensionError, "data",
                                "row " + std::to_string(i) + ": w length differs within target sample");
                std::copy(r.w.begin(), r.w.end(), d.w_.begin() + static_cast<std::ptrdiff_t>(i * d.q_));
                d.has_w_[i] = 1;
                ++target_with_w;
            }
        }
        if (d.n1_ == 0 || d.n0_ == 0)
            throw Error(ErrorCode::StructuralError, "data",
                        "both sources need at least one row (n1 = " + std::to_string(d.n1_)
                            + ", n0 = " + std::to_string(d.n0_) + ")");
        if (target_with_w != 0 && target_with_w != d.n0_)
            throw Error(ErrorCode::StructuralError, "data",
                        "w is present for some but not all target rows");

        d.supports_[0] = true;
        for (std::size_t i = 0; i < d.n_; ++i)
            if (d.s_[i] == 0 && d.a_[i] != 0) { d.supports_[0] = false; break; }
        d.supports_[1] = true;
        d.supports_[2] = d.q_ > 0 && target_with_w == d.n0_;

        if (x_names.empty())
            for (std::size_t j = 0; j < d.p_; ++j) x_names.push_back("x" + std::to_string(j + 1));
        if (w_names.empty())
            for (std::size_t j = 0; j < d.q_; ++j) w_names.push_back("w" + std::to_string(j + 1));
        if (x_names.size() != d.p_ || w_names.size() != d.q_)
            throw Error(ErrorCode::SchemaError, "data", "covariate name count does not match data");
        d.x_names_ = std::move(x_names);
        d.w_names_ = std::move(w_names);
        return d;
    }

    std::size_t size() const noexcept { return n_; }
    std::size_t n1() const noexcept { return n1_; }
    std::size_t n0() const noexcept { return n0_; }
    std::size_t p() const noexcept { return p_; }
    std::size_t q() const noexcept { return q_; }

    double y(std::size_t i) const { return y_[i]; }
    int s(std::size_t i) const { return s_[i]; }
    int a(std::size_t i) const { return a_[i]; }
    bool has_w(std::size_t i) const { return has_w_[i] != 0; }
    std::span<const double> x(std::size_t i) const { return {x_.data() + i * p_, p_}; }
    std::span<const double> w(std::size_t i) const
    {
        if (!has_w_[i]) return {};
        return {w_.data() + i * q_, q_};
    }

    UnitRef unit(std::size_t i) const { return {i, y_[i], s_[i], a_[i], x(i), w(i)}; }

    Observation observation(std::size_t i) const
    {
        auto xi = x(i);
        auto wi = w(i);
        return {y_[i], s_[i], a_[i], {xi.begin(), xi.end()}, {wi.begin(), wi.end()}};
    }

    bool supports(Scenario sc) const { return supports_[static_cast<std::size_t>(to_int(sc) - 1)]; }

    const std::vector<std::string>& x_names() const noexcept { return x_names_; }
    const std::vector<std::string>& w_names() const noexcept { return w_names_; }

    /// Same data with rows reordered by `order` (a permutation of 0..n-1).
    Dataset permuted(std::span<const std::size_t> order) const
    {
        std::vector<Observation> rows;
        rows.reserve(order.size());
        for (auto i : order) rows.push_back(observation(i));
        return from_observations(rows, x_names_, w_names_);
    }

    /// Rows satisfying `pred(UnitRef)`.
    template <class Pred>
    std::vector<std::size_t> indices_where(Pred&& pred) const
    {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < n_; ++i)
            if (pred(unit(i))) out.push_back(i);
        return out;
    }

private:
    std::size_t n_ = 0, n1_ = 0, n0_ = 0, p_ = 0, q_ = 0;
    std::vector<double> y_;
    std::vector<int> s_, a_;
    std::vector<double> x_, w_;
    std::vector<char> has_w_;
    bool supports_[3] = {false, false, false};
    std::vector<std::string> x_names_, w_names_;
};

/// Column selection for CSV ingestion. Empty `x`/`w` lists mean: take every
/// header column named x<k> (resp. w<k>), ordered by k.
struct Schema {
    std::string y = "y";
    std::string s = "s";
    std::string a = "a";
    std::vector<std::string> x;
    std::vector<std::string> w;
};

namespace detail {

inline std::string trim(std::string_view v)
{
    auto b = v.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = v.find_last_not_of(" \t\r\n");
    std::string out(v.substr(b, e - b + 1));
    if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
    return out;
}

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') quoted = !quoted;
        if (c == ',' && !quoted) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

inline std::optional<double> parse_number(const std::string& text)
{
    if (text.empty()) return std::nullopt;
    double v = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) return std::nullopt;
    return v;
}

inline std::string format_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Header columns named <prefix><k> with k a positive integer, ordered by k.
inline std::vector<std::string> numbered_columns(const std::vector<std::string>& header, char prefix)
{
    std::vector<std::pair<long, std::string>> found;
    for (const auto& h : header) {
        if (h.size() < 2 || h[0] != prefix) continue;
        if (!std::all_of(h.begin() + 1, h.end(), [](char c) { return c >= '0' && c <= '9'; })) continue;
        found.emplace_back(std::stol(h.substr(1)), h);
    }
    std::sort(found.begin(), found.end());
    std::vector<std::string> out;
    for (auto& f : found) out.push_back(f.second);
    return out;
}

} // namespace detail

inline Dataset parse_csv(std::istream& in, const Schema& schema_in, const std::string& source = "<stream>")
{
    std::string line;
    if (!std::getline(in, line))
        throw Error(ErrorCode::ParseError, "data", source + ": missing header row");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);  // BOM
    const auto header = detail::split_csv_line(line);

    Schema schema = schema_in;
    if (schema.x.empty()) schema.x = detail::numbered_columns(header, 'x');
    if (schema.w.empty()) schema.w = detail::numbered_columns(header, 'w');

    auto column = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            throw Error(ErrorCode::SchemaError, "data", source + ": missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    const auto iy = column(schema.y), is = column(schema.s), ia = column(schema.a);
    std::vector<std::size_t> ix, iw;
    for (const auto& n : schema.x) ix.push_back(column(n));
    for (const auto& n : schema.w) iw.push_back(column(n));

    std::vector<Observation> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (cells.size() != header.size())
            throw Error(ErrorCode::ParseError, "data",
                        source + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size())
                            + " fields, got " + std::to_string(cells.size()));
        auto num = [&](std::size_t col) {
            auto v = detail::parse_number(cells[col]);
            if (!v)
                throw Error(ErrorCode::ParseError, "data",
                            source + ":" + std::to_string(line_no) + ": column '" + header[col]
                                + "' is not a number: '" + cells[col] + "'");
            return *v;
        };
        auto binary = [&](std::size_t col) {
            double v = num(col);
            if (v != 0.0 && v != 1.0)
                throw Error(ErrorCode::ParseError, "data",
                            source + ":" + std::to_string(line_no) + ": column '" + header[col] + "' must be 0 or 1");
            return static_cast<int>(v);
        };
        Observation o;
        o.y = num(iy);
        o.s = binary(is);
        o.a = binary(ia);
        for (auto c : ix) o.x.push_back(num(c));
        if (o.s == 0 && !iw.empty()) {
            std::size_t blanks = 0;
            for (auto c : iw) blanks += cells[c].empty() ? 1 : 0;
            if (blanks != 0 && blanks != iw.size()) {
                throw Error(ErrorCode::ParseError, "data",
                            source + ":" + std::to_string(line_no) + ": w columns partially blank");
            } else if (blanks == 0) {
                for (auto c : iw) o.w.push_back(num(c));
            }
        }
        rows.push_back(std::move(o));
    }
    bool any_w = std::any_of(rows.begin(), rows.end(), [](const Observation& o) { return !o.w.empty(); });
    return Dataset::from_observations(rows, schema.x, any_w ? schema.w : std::vector<std::string>{});
}

inline Dataset load_csv(const std::string& path, const Schema& schema = {})
{
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "data", "cannot open '" + path + "'");
    return parse_csv(in, schema, path);
}

/// Writes with 17 significant digits so that `parse_csv` restores every value exactly.
inline void write_csv(std::ostream& out, const Dataset& d)
{
    out << "y,s,a";
    for (const auto& n : d.x_names()) out << ',' << n;
    for (const auto& n : d.w_names()) out << ',' << n;
    out << '\n';
    for (std::size_t i = 0; i < d.size(); ++i) {
        out << detail::format_double(d.y(i)) << ',' << d.s(i) << ',' << d.a(i);
        for (double v : d.x(i)) out << ',' << detail::format_double(v);
        auto w = d.w(i);
        for (std::size_t j = 0; j < d.q(); ++j) {
            out << ',';
            if (!w.empty()) out << detail::format_double(w[j]);
        }
        out << '\n';
    }
}

struct ValidationReport {
    std::vector<std::string> violations;
    std::vector<std::string> warnings;

    bool ok() const noexcept { return violations.empty(); }
};

/// Empirical positivity screening for one scenario. Throws ScenarioMismatch
/// when the data cannot structurally support the scenario.
inline ValidationReport validate(const Dataset& d, Scenario scenario)
{
    if (!d.supports(scenario))
        throw Error(ErrorCode::ScenarioMismatch, "data",
                    "data does not structurally support scenario " + std::to_string(to_int(scenario))
                        + (scenario == Scenario::Three ? " (target rows lack w)"
                                                       : " (target rows include a = 1)"));
    ValidationReport rep;
    std::size_t cells[2][2] = {{0, 0}, {0, 0}};
    for (std::size_t i = 0; i < d.size(); ++i) ++cells[d.s(i)][d.a(i)];
    if (cells[1][1] == 0) rep.violations.emplace_back("treated arm empty in trial");
    if (cells[1][0] == 0) rep.violations.emplace_back("control arm empty in trial");
    if (scenario != Scenario::One) {
        if (cells[0][0] == 0) rep.violations.emplace_back("control arm empty in target");
        if (cells[0][1] == 0) rep.violations.emplace_back("treated arm empty in target");
    }

    struct Stratum {
        const char* label;
        int s;
        int a;  // -1: any
    };
    std::vector<Stratum> strata = {{"s=1,a=1", 1, 1}, {"s=1,a=0", 1, 0}};
    if (scenario == Scenario::One) strata.push_back({"s=0", 0, -1});
    else strata.push_back({"s=0,a=0", 0, 0});

    for (const auto& st : strata) {
        auto idx = d.indices_where([&](const UnitRef& u) { return u.s == st.s && (st.a < 0 || u.a == st.a); });
        if (idx.size() < 2) continue;
        for (std::size_t j = 0; j < d.p(); ++j) {
            const double first = d.x(idx.front())[j];
            bool constant = std::all_of(idx.begin(), idx.end(), [&](std::size_t i) { return d.x(i)[j] == first; });
            if (constant)
                rep.warnings.push_back("covariate '" + d.x_names()[j] + "' is constant in stratum " + st.label);
        }
    }
    return rep;
}

} // namespace reltrans
