#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "nestedcp/tensor_io.hpp"
#include "oracles.hpp"

using namespace nestedcp;

TEST(TensorIo, ParsesCommaRecords) {
    std::istringstream in("dims: 2,3,1\n1,1,1,5.0\n2,3,1,-1.5\n");
    const auto t = read_sparse_tensor(in);
    EXPECT_EQ(t.nnz(), 2u);
    EXPECT_EQ(t.order(), 3u);
    EXPECT_EQ(t.dim(1), 3u);
    EXPECT_EQ(t.index(1)[1], 2u);
    EXPECT_DOUBLE_EQ(t.value(1), -1.5);
}

TEST(TensorIo, ParsesTabsAndDeclaredDims) {
    std::istringstream in("# comment\n1\t1\t1\t5.0\n\n2\t3\t1\t-1.5\n");
    const auto t = read_sparse_tensor(in, {std::vector<std::size_t>{2, 3, 1}});
    EXPECT_EQ(t.nnz(), 2u);
    EXPECT_EQ(t.dim(0), 2u);
}

TEST(TensorIo, ZeroIndexIsOutOfBoundsWhenOneBased) {
    std::istringstream in("dims: 2,3,1\n0,1,1,5.0\n");
    try {
        read_sparse_tensor(in);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_EQ(e.line(), 2u);
        EXPECT_NE(std::string(e.what()).find("index out of bounds"), std::string::npos);
    }
}

TEST(TensorIo, IndexAboveDeclaredDim) {
    std::istringstream in("dims: 2,3,1\n3,1,1,5.0\n");
    EXPECT_THROW(read_sparse_tensor(in), DataError);
}

TEST(TensorIo, MalformedRecordReportsLine) {
    std::istringstream in("dims: 2,2\n1,1,1.0\n1,x,2.0\n");
    try {
        read_sparse_tensor(in);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
    std::istringstream wrong_width("dims: 2,2\n1,1,1,1.0\n");
    EXPECT_THROW(read_sparse_tensor(wrong_width), DataError);
    std::istringstream bad_value("dims: 2,2\n1,1,nan\n");
    EXPECT_THROW(read_sparse_tensor(bad_value), DataError);
}

TEST(TensorIo, DuplicateReportsLaterLine) {
    std::istringstream in("dims: 2,2\n1,1,1.0\n2,2,3.0\n1,1,2.0\n");
    try {
        read_sparse_tensor(in);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_EQ(e.line(), 4u);
        EXPECT_NE(std::string(e.what()).find("duplicate"), std::string::npos);
    }
}

TEST(TensorIo, WriteThenReadIsExact) {
    std::mt19937_64 rng(9);
    const auto t = oracle::random_tensor({7, 5, 3}, 40, rng);
    std::stringstream buf;
    write_sparse_tensor(buf, t);
    const auto back = read_sparse_tensor(buf);
    ASSERT_EQ(back.nnz(), t.nnz());
    EXPECT_TRUE(std::equal(t.coords().begin(), t.coords().end(), back.coords().begin()));
    EXPECT_TRUE(std::equal(t.values().begin(), t.values().end(), back.values().begin()));
    EXPECT_TRUE(std::equal(t.dims().begin(), t.dims().end(), back.dims().begin()));
}

TEST(TensorIo, MissingFileIsIoError) {
    EXPECT_THROW(load_sparse_tensor("/nonexistent/tensor.tsv"), IoError);
}

TEST(SubgroupIo, SectionsPerMode) {
    std::istringstream in("mode: 1\n1\t1\n2\t1\n3\t2\nmode: 2\n1,1\n2,1\n");
    const std::vector<std::size_t> dims{3, 2};
    const auto g = read_subgroups(in, dims);
    EXPECT_EQ(g.groups(0), 2u);
    EXPECT_EQ(g.groups(1), 1u);
    EXPECT_EQ(g.group_of(0, 2), 1u);
    EXPECT_EQ(g.members(0, 0).size(), 2u);

    std::stringstream buf;
    write_subgroups(buf, g);
    EXPECT_EQ(read_subgroups(buf, dims), g);
}

TEST(SubgroupIo, EverySubjectNeedsAGroup) {
    std::istringstream in("mode: 1\n1\t1\nmode: 2\n1\t1\n2\t1\n");
    const std::vector<std::size_t> dims{2, 2};
    EXPECT_THROW(read_subgroups(in, dims), DataError);
}

TEST(LabelIo, TwoColumns) {
    std::istringstream in("1\t10\n3\t-2\n");
    const auto labels = read_labels(in, 3);
    EXPECT_EQ(labels[0], 10);
    EXPECT_FALSE(labels[1].has_value());
    EXPECT_EQ(labels[2], -2);
    std::istringstream bad("4\t1\n");
    EXPECT_THROW(read_labels(bad, 3), DataError);
}
