#include "fedsim/dataio.hpp"
#include "fedsim/distmatrix.hpp"
#include "fedsim/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

using namespace fedsim;
namespace fs = std::filesystem;

namespace {

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::uint8_t pixel_at(std::size_t i) { return static_cast<std::uint8_t>((i * 131u + 7u) % 256u); }

struct IdxFiles {
    fs::path images, labels;
};

class IdxTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("fedsim_idx_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    IdxFiles write(std::uint32_t n, std::uint32_t rows, std::uint32_t cols, std::uint32_t label_n,
                   std::uint32_t image_magic = 2051, std::uint32_t label_magic = 2049) {
        std::vector<std::uint8_t> img{0, 0, 8, 3};
        img.clear();
        put_be32(img, image_magic);
        put_be32(img, n);
        put_be32(img, rows);
        put_be32(img, cols);
        for (std::size_t i = 0; i < std::size_t{n} * rows * cols; ++i) img.push_back(pixel_at(i));
        std::vector<std::uint8_t> lab;
        put_be32(lab, label_magic);
        put_be32(lab, label_n);
        for (std::uint32_t i = 0; i < label_n; ++i) lab.push_back(static_cast<std::uint8_t>(i % 10));
        IdxFiles f{dir_ / "images.idx", dir_ / "labels.idx"};
        write_bytes(f.images, img);
        write_bytes(f.labels, lab);
        return f;
    }

    fs::path dir_;
};

Dataset balanced(std::size_t classes, std::size_t per_class) {
    Dataset ds;
    ds.num_classes = classes;
    ds.dim = 1;
    for (std::size_t k = 0; k < classes; ++k)
        for (std::size_t i = 0; i < per_class; ++i) {
            ds.labels.push_back(static_cast<int>(k));
            ds.features.push_back(static_cast<double>(k));
        }
    return ds;
}

double mean_entropy(const LabelMatrix& p) {
    double total = 0.0;
    for (std::size_t i = 0; i < p.rows(); ++i)
        for (std::size_t k = 0; k < p.cols(); ++k)
            if (p(i, k) > 0) total -= p(i, k) * std::log(p(i, k));
    return total / static_cast<double>(p.rows());
}

}  // namespace

TEST_F(IdxTest, ReadsMnistShapedFile) {
    const auto f = write(10000, 28, 28, 10000);
    {
        std::ifstream in(f.images, std::ios::binary);
        unsigned char head[4];
        in.read(reinterpret_cast<char*>(head), 4);
        EXPECT_EQ(head[0], 0x00);
        EXPECT_EQ(head[1], 0x00);
        EXPECT_EQ(head[2], 0x08);
        EXPECT_EQ(head[3], 0x03);
    }
    const auto ds = load_idx(f.images.string(), f.labels.string());
    EXPECT_EQ(ds.size(), 10000u);
    EXPECT_EQ(ds.dim, 784u);
    EXPECT_EQ(ds.image_rows, 28u);
    EXPECT_EQ(ds.image_cols, 28u);
    EXPECT_EQ(ds.num_classes, 10u);
    for (std::size_t i : {std::size_t{0}, std::size_t{1}, std::size_t{783}, std::size_t{784}, std::size_t{7839999}})
        EXPECT_EQ(ds.features[i], pixel_at(i) / 255.0);
    EXPECT_EQ(ds.labels[9999], 9);
    EXPECT_NO_THROW(validate_dataset(ds));
}

TEST_F(IdxTest, CountMismatch) {
    const auto f = write(20, 4, 4, 19);
    EXPECT_THROW(load_idx(f.images.string(), f.labels.string()), idx_count_mismatch_error);
}

TEST_F(IdxTest, TruncatedPayload) {
    const auto f = write(20, 4, 4, 20);
    fs::resize_file(f.images, 16 + 20 * 16 - 5);
    EXPECT_THROW(load_idx(f.images.string(), f.labels.string()), idx_truncated_error);
    const auto g = write(20, 4, 4, 20);
    fs::resize_file(g.labels, 8 + 10);
    EXPECT_THROW(load_idx(g.images.string(), g.labels.string()), idx_truncated_error);
    fs::resize_file(g.images, 10);
    EXPECT_THROW(load_idx(g.images.string(), g.labels.string()), idx_truncated_error);
}

TEST_F(IdxTest, BadMagic) {
    const auto f = write(20, 4, 4, 20, 2049, 2049);
    EXPECT_THROW(load_idx(f.images.string(), f.labels.string()), idx_magic_error);
    const auto g = write(20, 4, 4, 20, 2051, 2051);
    EXPECT_THROW(load_idx(g.images.string(), g.labels.string()), idx_magic_error);
}

TEST_F(IdxTest, MissingFile) {
    EXPECT_THROW(load_idx((dir_ / "nope").string(), (dir_ / "nope2").string()), idx_error);
}

TEST_F(IdxTest, MissingLabelValueRejected) {
    // Only labels 0..4 occur in 5 samples, but label 9 never appears when K = 10 is implied elsewhere;
    // here K is inferred, so craft a gap: labels {0, 2}.
    std::vector<std::uint8_t> img, lab;
    put_be32(img, 2051), put_be32(img, 2), put_be32(img, 1), put_be32(img, 1);
    img.push_back(1), img.push_back(2);
    put_be32(lab, 2049), put_be32(lab, 2);
    lab.push_back(0), lab.push_back(2);
    write_bytes(dir_ / "i", img);
    write_bytes(dir_ / "l", lab);
    EXPECT_THROW(load_idx((dir_ / "i").string(), (dir_ / "l").string()), idx_error);
}

TEST(Synthetic, Deterministic) {
    EXPECT_EQ(generate_synthetic(10, 16, 100, 0.5, 1), generate_synthetic(10, 16, 100, 0.5, 1));
    EXPECT_NE(generate_synthetic(10, 16, 100, 0.5, 1), generate_synthetic(10, 16, 100, 0.5, 2));
}

TEST(Synthetic, ZeroSpreadSitsOnMeans) {
    const auto ds = generate_synthetic(2, 2, 1, 0.0, 7);
    ASSERT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds.labels, (std::vector<int>{0, 1}));
    const auto again = generate_synthetic(2, 2, 5, 0.0, 7);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_EQ(again.row(i)[0], ds.row(0)[0]);
        EXPECT_EQ(again.row(5 + i)[1], ds.row(1)[1]);
    }
    EXPECT_NE(ds.row(0)[0], ds.row(1)[0]);
}

TEST(Synthetic, HoldoutSharesMeans) {
    const auto train = generate_synthetic(3, 4, 2000, 0.1, 3);
    const auto test = generate_synthetic_holdout(3, 4, 2000, 0.1, 3);
    EXPECT_NE(train, test);
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t f = 0; f < 4; ++f) {
            double a = 0, b = 0;
            for (std::size_t i = 0; i < 2000; ++i) a += train.row(k * 2000 + i)[f], b += test.row(k * 2000 + i)[f];
            EXPECT_NEAR(a / 2000, b / 2000, 0.02);
        }
}

// Oracle: full-batch gradient descent on the convex softmax loss.
TEST(Synthetic, LinearlySeparableEnough) {
    const auto ds = generate_synthetic(3, 4, 50, 0.3, 2);
    const Network net(shape_for({ArchKind::linear}, ds));
    auto w = net.init(1);
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    std::vector<double> grad;
    Network::Workspace ws;
    for (int it = 0; it < 500; ++it) {
        batch_loss_and_gradient(net, w.values, ds, all, grad, ws);
        for (std::size_t j = 0; j < grad.size(); ++j) w.values[j] -= 0.5 * grad[j];
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i)
        correct += net.predict(w.values, ds.row(i), ws) == static_cast<std::size_t>(ds.labels[i]);
    EXPECT_GT(static_cast<double>(correct) / ds.size(), 0.95);
}

TEST(Synthetic, Errors) {
    EXPECT_THROW(generate_synthetic(1, 2, 5, 0.1, 1), std::invalid_argument);
    EXPECT_THROW(generate_synthetic(3, 0, 5, 0.1, 1), std::invalid_argument);
    EXPECT_THROW(generate_synthetic(3, 2, 0, 0.1, 1), std::invalid_argument);
    EXPECT_THROW(generate_synthetic(3, 2, 5, -0.1, 1), std::invalid_argument);
}

TEST(Partition, RejectsBadArguments) {
    const auto ds = balanced(10, 10);
    EXPECT_THROW(partition_dirichlet(ds, 1, 0.5, 1), partition_error);
    EXPECT_THROW(partition_dirichlet(ds, 5, 0.0, 1), partition_error);
    EXPECT_THROW(partition_dirichlet(ds, 101, 0.5, 1), partition_error);
}

TEST(Partition, ConservesLabelsAndCoversEveryIndex) {
    const auto ds = generate_synthetic(10, 2, 300, 1.0, 3);
    for (double beta : {0.05, 0.5, 2.0, 100.0})
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            const auto shards = partition_dirichlet(ds, 20, beta, seed);
            ASSERT_EQ(shards.size(), 20u);
            std::vector<std::size_t> seen;
            std::vector<std::size_t> per_label(10, 0);
            for (std::size_t c = 0; c < shards.size(); ++c) {
                EXPECT_EQ(shards[c].client_id, c);
                EXPECT_FALSE(shards[c].sample_indices.empty());
                EXPECT_TRUE(std::is_sorted(shards[c].sample_indices.begin(), shards[c].sample_indices.end()));
                for (auto i : shards[c].sample_indices) {
                    seen.push_back(i);
                    ++per_label[static_cast<std::size_t>(ds.labels[i])];
                }
            }
            std::sort(seen.begin(), seen.end());
            std::vector<std::size_t> all(ds.size());
            std::iota(all.begin(), all.end(), 0);
            EXPECT_EQ(seen, all);
            for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(per_label[k], 300u);
        }
}

TEST(Partition, Deterministic) {
    const auto ds = generate_synthetic(10, 2, 100, 1.0, 3);
    EXPECT_EQ(partition_dirichlet(ds, 20, 0.05, 9), partition_dirichlet(ds, 20, 0.05, 9));
    EXPECT_NE(partition_dirichlet(ds, 20, 0.05, 9), partition_dirichlet(ds, 20, 0.05, 10));
}

TEST(Partition, LargeBetaIsNearUniform) {
    const auto ds = balanced(10, 1000);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto shards = partition_dirichlet(ds, 10, 1000.0, seed);
        const auto p = build_distribution_matrix(shards, ds);
        for (std::size_t i = 0; i < 10; ++i)
            for (std::size_t k = 0; k < 10; ++k) EXPECT_LT(std::abs(p(i, k) - 0.1), 0.05);
    }
}

TEST(Partition, SmallBetaSkewsLabels) {
    const auto ds = generate_synthetic(10, 2, 300, 1.0, 3);
    double low = 0, high = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        low += mean_entropy(build_distribution_matrix(partition_dirichlet(ds, 20, 0.05, seed), ds));
        high += mean_entropy(build_distribution_matrix(partition_dirichlet(ds, 20, 2.0, seed), ds));
    }
    EXPECT_LT(low, high);
}

TEST(Partition, TinyDatasetStillFillsEveryClient) {
    const auto ds = balanced(2, 3);
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto shards = partition_dirichlet(ds, 6, 0.01, seed);
        for (const auto& s : shards) EXPECT_EQ(s.sample_indices.size(), 1u);
    }
}

TEST(Subsets, RandomSubsetKeepsOrder) {
    const auto ds = generate_synthetic(3, 2, 50, 1.0, 3);
    const auto sub = random_subset(ds, 40, 5);
    EXPECT_EQ(sub.size(), 40u);
    EXPECT_EQ(sub, random_subset(ds, 40, 5));
    EXPECT_THROW(random_subset(ds, 0, 5), std::invalid_argument);
    EXPECT_THROW(random_subset(ds, 151, 5), std::invalid_argument);
    const std::vector<std::size_t> rows{2, 0};
    const auto picked = select_rows(ds, rows);
    EXPECT_EQ(picked.labels, (std::vector<int>{ds.labels[2], ds.labels[0]}));
    EXPECT_EQ(picked.row(1)[1], ds.row(0)[1]);
}

TEST(Dataset, Validation) {
    Dataset ds = balanced(3, 2);
    EXPECT_NO_THROW(validate_dataset(ds));
    ds.labels[0] = 3;
    EXPECT_THROW(validate_dataset(ds), std::invalid_argument);
    ds = balanced(3, 2);
    ds.features.pop_back();
    EXPECT_THROW(validate_dataset(ds), std::invalid_argument);
    EXPECT_THROW(validate_dataset(Dataset{}), std::invalid_argument);
    ds = balanced(3, 2);
    ds.num_classes = 4;
    EXPECT_THROW(validate_dataset(ds), std::invalid_argument);
}
