#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "nestedcp/benchmark.hpp"

using namespace nestedcp;

namespace {

BenchmarkSpec tiny_spec(std::size_t reps) {
    BenchmarkSpec s;
    s.sim1.n1 = 40;
    s.sim1.n2 = 55;
    s.sim1.n3 = 6;
    s.sim1.m1 = 4;
    s.sim1.m2 = 5;
    s.sim1.m3 = 2;
    s.methods = {Method::REM, Method::CPD, Method::GCPD, Method::MF, Method::GMI};
    s.lambda_grid = {1.0, 4.0};
    s.replications = reps;
    s.base_seed = 30;
    s.fit.max_iterations = 200;
    return s;
}

}  // namespace

TEST(DeriveSeed, StreamsDiffer) {
    EXPECT_EQ(derive_seed(5, 1), derive_seed(5, 1));
    EXPECT_NE(derive_seed(5, 1), derive_seed(5, 2));
    EXPECT_NE(derive_seed(5, 1), derive_seed(6, 1));
}

TEST(Summarize, SampleSdConvention) {
    const auto s = summarize({1.0, 2.0, 3.0, 4.0});
    EXPECT_DOUBLE_EQ(s.mean, 2.5);
    EXPECT_DOUBLE_EQ(*s.sd, std::sqrt(5.0 / 3.0));
    EXPECT_DOUBLE_EQ(*s.se, std::sqrt(5.0 / 3.0) / 2.0);
    const auto one = summarize({7.0});
    EXPECT_EQ(one.mean, 7.0);
    EXPECT_FALSE(one.sd);
    EXPECT_FALSE(one.se);
    EXPECT_THROW(summarize({}), std::invalid_argument);
}

TEST(Summarize, MeanInvariantUnderReordering) {
    std::vector<double> xs{4.25, 1.5, 9.0, 2.75, 3.125};
    const auto a = summarize(xs);
    std::reverse(xs.begin(), xs.end());
    const auto b = summarize(xs);
    EXPECT_DOUBLE_EQ(a.mean, b.mean);
    EXPECT_DOUBLE_EQ(*a.sd, *b.sd);
}

TEST(BenchmarkSpecTest, Validation) {
    auto s = tiny_spec(1);
    s.replications = 0;
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s = tiny_spec(1);
    s.lambda_grid.clear();
    EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(PrepareReplication, ColdFractionAndSplitSizes) {
    const auto s = tiny_spec(1);
    const auto r = prepare_replication(s, 0);
    const std::size_t n = r.data.tensor.nnz();
    EXPECT_EQ(r.split.validation.nnz() + r.split.test.nnz(), n - std::llround(0.5 * static_cast<double>(n)));
    EXPECT_NEAR(cold_fraction(r.split), 0.3, 0.01);
}

TEST(RunBenchmark, SingleReplicationHasNoSpread) {
    const auto rep = run_benchmark(tiny_spec(1));
    ASSERT_EQ(rep.methods.size(), 5u);
    ASSERT_EQ(rep.runs.size(), 5u);
    for (std::size_t m = 0; m < 5; ++m) {
        const auto& s = rep.methods[m];
        EXPECT_EQ(s.runs, 1u);
        EXPECT_FALSE(s.rmse.sd);
        EXPECT_FALSE(s.rmse.se);
        EXPECT_EQ(s.rmse.mean, rep.runs[m].rmse);
        EXPECT_EQ(s.mae.mean, rep.runs[m].mae);
        EXPECT_LE(rep.runs[m].mae, rep.runs[m].rmse);
    }
    EXPECT_EQ(rep.runs[4].lambda, 0.0);  // GMI is not tuned
    EXPECT_NE(std::find(tiny_spec(1).lambda_grid.begin(), tiny_spec(1).lambda_grid.end(), rep.runs[0].lambda),
              tiny_spec(1).lambda_grid.end());
}

TEST(RunBenchmark, ThreadCountDoesNotChangeResults) {
    auto s = tiny_spec(3);
    s.methods = {Method::REM, Method::GMI};
    const auto a = run_benchmark(s);
    s.threads = 3;
    const auto b = run_benchmark(s);
    ASSERT_EQ(a.runs.size(), b.runs.size());
    for (std::size_t i = 0; i < a.runs.size(); ++i) {
        EXPECT_EQ(a.runs[i].rmse, b.runs[i].rmse);
        EXPECT_EQ(a.runs[i].lambda, b.runs[i].lambda);
    }
    EXPECT_EQ(a.of(Method::REM).rmse.mean, b.of(Method::REM).rmse.mean);
    EXPECT_TRUE(a.of(Method::REM).rmse.sd.has_value());
    EXPECT_THROW(a.of(Method::MF), std::out_of_range);
}

TEST(RunBenchmark, SimulationTwoRuns) {
    BenchmarkSpec s;
    s.generator = Generator::Sim2;
    s.sim2.n = 30;
    s.sim2.user_groups = 3;
    s.sim2.pi0 = 0.8;
    s.methods = {Method::REM, Method::MF};
    s.lambda_grid = {2.0};
    s.replications = 1;
    s.fit.max_iterations = 100;
    const auto rep = run_benchmark(s);
    EXPECT_EQ(rep.runs.size(), 2u);
    EXPECT_TRUE(rep.runs[0].ok);
}

TEST(Report, WritersProduceOneLinePerMethod) {
    auto s = tiny_spec(2);
    s.methods = {Method::GMI, Method::MF};
    const auto rep = run_benchmark(s);
    std::ostringstream tsv, runs, table, manifest;
    write_report_tsv(tsv, rep);
    write_runs_tsv(runs, rep);
    write_report_table(table, rep);
    write_manifest(manifest, s);
    auto lines = [](const std::string& x) { return std::count(x.begin(), x.end(), '\n'); };
    EXPECT_EQ(lines(tsv.str()), 3);
    EXPECT_EQ(lines(runs.str()), 5);
    EXPECT_EQ(lines(table.str()), 3);
    EXPECT_NE(table.str().find(" ("), std::string::npos);
    EXPECT_NE(manifest.str().find("generator=sim1"), std::string::npos);
    EXPECT_NE(manifest.str().find("methods=GMI,MF"), std::string::npos);
}
