#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include <reltrans/data.hpp>

using namespace reltrans;

namespace {

Dataset parse(const std::string& text, const Schema& schema = {})
{
    std::istringstream in(text);
    return parse_csv(in, schema);
}

ErrorCode code_of(const std::function<void()>& f)
{
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorCode::IoError;
}

} // namespace

TEST(Data, CountsAndScenarioOneFlag)
{
    auto d = parse("y,s,a,x1\n1,1,1,0.5\n0,1,0,0.2\n1,0,0,0.1\n0,0,0,0.9\n");
    EXPECT_EQ(d.n1(), 2u);
    EXPECT_EQ(d.n0(), 2u);
    EXPECT_TRUE(d.supports(Scenario::One));
    EXPECT_TRUE(d.supports(Scenario::Two));
    EXPECT_FALSE(d.supports(Scenario::Three));
}

TEST(Data, TreatedTargetUnitClearsScenarioOne)
{
    auto d = parse("y,s,a,x1\n1,1,1,0.5\n0,1,0,0.2\n1,0,1,0.1\n0,0,0,0.9\n");
    EXPECT_FALSE(d.supports(Scenario::One));
    EXPECT_TRUE(d.supports(Scenario::Two));
}

TEST(Data, BlankTargetWClearsScenarioThree)
{
    auto d = parse("y,s,a,x1,w1\n1,1,1,0.5,\n0,1,0,0.2,\n1,0,0,0.1,\n0,0,0,0.9,\n");
    EXPECT_FALSE(d.supports(Scenario::Three));
    auto e = parse("y,s,a,x1,w1\n1,1,1,0.5,\n0,1,0,0.2,\n1,0,0,0.1,3\n0,0,0,0.9,4\n");
    EXPECT_TRUE(e.supports(Scenario::Three));
    EXPECT_EQ(e.q(), 1u);
    EXPECT_TRUE(e.w(0).empty());
    EXPECT_DOUBLE_EQ(e.w(3)[0], 4.0);
}

TEST(Data, PartialTargetWIsStructuralError)
{
    EXPECT_EQ(code_of([] { parse("y,s,a,x1,w1\n1,1,1,0.5,\n0,1,0,0.2,\n1,0,0,0.1,3\n0,0,0,0.9,\n"); }),
              ErrorCode::StructuralError);
}

TEST(Data, ColumnErrors)
{
    EXPECT_EQ(code_of([] { parse("y,a,x1\n1,1,0.5\n"); }), ErrorCode::SchemaError);
    EXPECT_EQ(code_of([] { parse("y,s,a,x1\n1,2,1,0.5\n0,0,0,1\n"); }), ErrorCode::ParseError);
    EXPECT_EQ(code_of([] { parse("y,s,a,x1\n1,1,0.5,0.5\n0,0,0,1\n"); }), ErrorCode::ParseError);
    EXPECT_EQ(code_of([] { parse("y,s,a,x1\nabc,1,1,0.5\n0,0,0,1\n"); }), ErrorCode::ParseError);
    EXPECT_EQ(code_of([] { parse("y,s,a,x1\n1,1,1,\n0,0,0,1\n"); }), ErrorCode::ParseError);
    EXPECT_EQ(code_of([] { parse("y,s,a,x1\n1,1,1,0.5\n0,1,0,1\n"); }), ErrorCode::StructuralError);
    EXPECT_EQ(code_of([] { load_csv("/nonexistent/file.csv"); }), ErrorCode::IoError);
}

TEST(Data, SchemaRenamesColumns)
{
    Schema s;
    s.y = "outcome";
    s.s = "trial";
    s.a = "treat";
    s.x = {"age", "bmi"};
    auto d = parse("bmi,outcome,trial,treat,age\n20,1,1,1,50\n25,0,1,0,60\n30,1,0,0,70\n", s);
    EXPECT_EQ(d.p(), 2u);
    EXPECT_DOUBLE_EQ(d.x(2)[0], 70.0);
    EXPECT_DOUBLE_EQ(d.x(2)[1], 30.0);
    EXPECT_EQ(d.x_names(), (std::vector<std::string>{"age", "bmi"}));
}

TEST(Data, AutoDetectedCovariatesOrderedNumerically)
{
    auto d = parse("x10,y,x2,s,a\n1,0,2,1,1\n3,1,4,0,0\n");
    EXPECT_EQ(d.x_names(), (std::vector<std::string>{"x2", "x10"}));
    EXPECT_DOUBLE_EQ(d.x(1)[0], 4.0);
}

TEST(Data, WriteThenParseRoundTrips)
{
    std::mt19937_64 rng(3);
    std::normal_distribution<double> z;
    std::vector<Observation> rows;
    for (int i = 0; i < 40; ++i) {
        Observation o{z(rng), i % 3 == 0, i % 2, {z(rng) * 1e-7, z(rng) * 1e9}, {}};
        if (!o.s) {
            o.a = 0;
            o.w = {z(rng)};
        }
        rows.push_back(o);
    }
    auto d = Dataset::from_observations(rows);
    std::ostringstream out;
    write_csv(out, d);
    auto back = parse(out.str());
    ASSERT_EQ(back.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        EXPECT_EQ(back.y(i), d.y(i));
        EXPECT_EQ(back.s(i), d.s(i));
        EXPECT_EQ(back.a(i), d.a(i));
        for (std::size_t j = 0; j < d.p(); ++j) EXPECT_EQ(back.x(i)[j], d.x(i)[j]);
        ASSERT_EQ(back.has_w(i), d.has_w(i));
        if (d.has_w(i)) {
            EXPECT_EQ(back.w(i)[0], d.w(i)[0]);
        }
    }
}

TEST(Data, FlagsInvariantUnderPermutation)
{
    auto d = load_csv(std::string(RELTRANS_DATA_DIR) + "/fixture_s3.csv");
    std::vector<std::size_t> order(d.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 5; ++rep) {
        std::shuffle(order.begin(), order.end(), rng);
        auto p = d.permuted(order);
        for (auto sc : {Scenario::One, Scenario::Two, Scenario::Three}) EXPECT_EQ(p.supports(sc), d.supports(sc));
        EXPECT_EQ(p.n1(), d.n1());
    }
}

TEST(Data, ValidateReportsEmptyCells)
{
    auto two = parse("y,s,a,x1\n1,1,1,0.5\n0,1,0,0.2\n1,0,1,0.1\n0,0,1,0.9\n");
    auto rep = validate(two, Scenario::Two);
    ASSERT_EQ(rep.violations.size(), 1u);
    EXPECT_EQ(rep.violations[0], "control arm empty in target");

    auto one = parse("y,s,a,x1\n1,1,1,0.5\n0,1,0,0.2\n1,0,0,0.1\n0,0,0,0.9\n");
    auto ok = validate(one, Scenario::One);
    EXPECT_TRUE(ok.ok());
    EXPECT_TRUE(ok.warnings.empty());

    auto trial_gap = parse("y,s,a,x1\n1,1,1,0.5\n0,1,1,0.2\n1,0,0,0.1\n0,0,0,0.9\n");
    EXPECT_FALSE(validate(trial_gap, Scenario::One).ok());
}

TEST(Data, ValidateWarnsOnConstantCovariate)
{
    auto d = parse("y,s,a,x1\n1,1,1,0.5\n0,1,1,0.5\n0,1,0,0.2\n1,1,0,0.3\n1,0,0,0.1\n0,0,0,0.9\n");
    auto rep = validate(d, Scenario::One);
    EXPECT_TRUE(rep.ok());
    ASSERT_EQ(rep.warnings.size(), 1u);
    EXPECT_NE(rep.warnings[0].find("s=1,a=1"), std::string::npos);
}

TEST(Data, ValidateScenarioThreeWithoutW)
{
    auto d = parse("y,s,a,x1\n1,1,1,0.5\n0,1,0,0.2\n1,0,0,0.1\n0,0,0,0.9\n");
    EXPECT_EQ(code_of([&] { validate(d, Scenario::Three); }), ErrorCode::ScenarioMismatch);
}
