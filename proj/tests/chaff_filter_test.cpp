#include <gtest/gtest.h>

#include <cmath>
#include <tuple>

#include "cmix/chaff_filter.hpp"

using namespace cmix;
using namespace cmix::filter;

namespace {

CredentialId id_from(Rng& rng) { return CredentialId::random(rng); }

}  // namespace

// Filter sizes reported for the scheme, in KiB.
struct TableRow {
    std::uint64_t n;
    double p;
    double kib;
};

class PaperSizeModel : public ::testing::TestWithParam<TableRow> {};

TEST_P(PaperSizeModel, ReproducesReportedSize) {
    const auto row = GetParam();
    const double kib = static_cast<double>(paper_size_model(row.n, row.p)) / 1024.0;
    EXPECT_NEAR(kib, row.kib, row.kib * 0.005) << "n=" << row.n << " p=" << row.p;
}

INSTANTIATE_TEST_SUITE_P(ReportedSizes, PaperSizeModel,
                         ::testing::Values(TableRow{500, 1e-25, 7.31}, TableRow{1000, 1e-25, 14.63},
                                           TableRow{5000, 1e-25, 73.13}, TableRow{10000, 1e-25, 146.26},
                                           TableRow{20000, 1e-25, 292.51}, TableRow{500, 1e-30, 8.78},
                                           TableRow{1000, 1e-30, 17.55}, TableRow{5000, 1e-30, 87.75},
                                           TableRow{10000, 1e-30, 175.51}, TableRow{20000, 1e-30, 351.02}));

TEST(PaperSizeModelExact, FrozenByteCounts) {
    // ceil(n ln(1/p) / ln^2 2 / 8), evaluated independently with Python's math module.
    EXPECT_EQ(paper_size_model(1000, 1e-25), 14977u);
    EXPECT_EQ(paper_size_model(500, 1e-25), 7489u);
    EXPECT_EQ(paper_size_model(20000, 1e-30), 359440u);
}

TEST(PaperSizeModelExact, MonotoneInNAndLogP) {
    std::uint64_t prev = 0;
    for (std::uint64_t n = 1; n < 3000; n += 37) {
        const auto s = paper_size_model(n, 1e-6);
        EXPECT_GT(s, prev);
        prev = s;
    }
    prev = 0;
    for (int e = 1; e <= 40; ++e) {
        const auto s = paper_size_model(5000, std::pow(10.0, -e));
        EXPECT_GT(s, prev);
        prev = s;
    }
}

TEST(PaperSizeModelExact, RejectsBadArguments) {
    EXPECT_THROW(paper_size_model(0, 0.1), std::invalid_argument);
    EXPECT_THROW(paper_size_model(10, 0.0), std::invalid_argument);
    EXPECT_THROW(paper_size_model(10, 1.0), std::invalid_argument);
}

TEST(DigestList, Sizes) {
    EXPECT_EQ(digest_list_size(5000, DigestAlgorithm::SHA256), 160000u);
    EXPECT_DOUBLE_EQ(digest_list_size(5000, DigestAlgorithm::SHA256) / 1024.0, 156.25);
    EXPECT_EQ(digest_list_size(0, DigestAlgorithm::SHA1), 0u);
    EXPECT_EQ(digest_list_size(1000, DigestAlgorithm::SHA512), 64000u);
    EXPECT_GT(digest_list_size(5000, DigestAlgorithm::SHA256), paper_size_model(5000, 1e-25));
}

TEST(ChaffFilterCreate, Sizing) {
    auto f = ChaffFilter::create(1000, 1e-3);
    EXPECT_EQ(f.fingerprint_bits(), 13u);  // ceil(log2(1000) + 3)
    EXPECT_EQ(f.bucket_capacity(), 4u);
    EXPECT_EQ(f.bucket_count(), 512u);  // smallest power of two >= 1000 / 3.8
    EXPECT_EQ(f.item_count(), 0u);
    EXPECT_GE(f.fingerprint_bits(), static_cast<std::uint32_t>(std::ceil(std::log2(1.0 / f.target_fpr()))));
}

TEST(ChaffFilterCreate, EmptyContainsNothing) {
    auto f = ChaffFilter::create(1000, 1e-3);
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) EXPECT_FALSE(f.contains(id_from(rng)));
}

TEST(ChaffFilterCreate, DegenerateCapacity) {
    auto f = ChaffFilter::create(1, 0.5);
    EXPECT_EQ(f.bucket_count(), 1u);
    EXPECT_EQ(f.fingerprint_bits(), 4u);
    Rng rng(2);
    auto x = id_from(rng);
    f.insert(x);
    EXPECT_TRUE(f.contains(x));
}

TEST(ChaffFilterCreate, TooSmallFprForSixtyFourBitFingerprints) {
    EXPECT_THROW(ChaffFilter::create(1000, 1e-25), std::invalid_argument);
    EXPECT_THROW(ChaffFilter::create(0, 1e-3), std::invalid_argument);
}

TEST(ChaffFilterOps, InsertThenContains) {
    auto f = ChaffFilter::create(100, 1e-4);
    Rng rng(3);
    auto x = id_from(rng);
    f.insert(x);
    EXPECT_TRUE(f.contains(x));
    EXPECT_EQ(f.item_count(), 1u);
}

TEST(ChaffFilterOps, RemoveRestoresPriorState) {
    auto f = ChaffFilter::create(100, 1e-4);
    Rng rng(4);
    for (int i = 0; i < 50; ++i) f.insert(id_from(rng));
    const auto before = f.serialize();
    auto x = id_from(rng);
    f.insert(x);
    f.remove(x);
    EXPECT_FALSE(f.contains(x));
    EXPECT_EQ(f.serialize(), before);
}

TEST(ChaffFilterOps, RemoveAbsentThrows) {
    auto f = ChaffFilter::create(100, 1e-4);
    Rng rng(5);
    try {
        f.remove(id_from(rng));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::RemoveAbsent);
    }
}

TEST(ChaffFilterOps, SaturationLeavesFilterUnchanged) {
    auto f = ChaffFilter::create(8, 1e-3);  // 4 buckets, 16 slots
    Rng rng(6);
    std::vector<CredentialId> inserted;
    bool saturated = false;
    for (int i = 0; i < 64 && !saturated; ++i) {
        const auto x = id_from(rng);
        const auto snapshot = f.serialize();
        try {
            f.insert(x);
            inserted.push_back(x);
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), Errc::FilterSaturated);
            EXPECT_EQ(f.serialize(), snapshot);
            saturated = true;
        }
    }
    EXPECT_TRUE(saturated);
    EXPECT_LE(f.item_count(), f.bucket_count() * f.bucket_capacity());
    for (const auto& x : inserted) EXPECT_TRUE(f.contains(x));
}

TEST(ChaffFilterProperty, NoFalseNegativesOverRandomSequences) {
    Rng rng(7);
    for (int seq = 0; seq < 10000; ++seq) {
        auto f = ChaffFilter::create(64, 1e-3);
        const auto n = 1 + rng.below(60);
        std::vector<CredentialId> ids;
        for (std::uint64_t i = 0; i < n; ++i) {
            ids.push_back(id_from(rng));
            f.insert(ids.back());
        }
        for (const auto& x : ids) ASSERT_TRUE(f.contains(x)) << "sequence " << seq;
    }
}

TEST(ChaffFilterProperty, DeletionSoundness) {
    Rng rng(8);
    for (int seq = 0; seq < 2000; ++seq) {
        auto f = ChaffFilter::create(128, 1e-4);
        for (int i = 0; i < 80; ++i) f.insert(id_from(rng));
        const auto x = id_from(rng);
        const bool before = f.contains(x);
        f.insert(x);
        f.remove(x);
        ASSERT_EQ(f.contains(x), before);
    }
}

TEST(ChaffFilterProperty, EmpiricalFalsePositiveRate) {
    auto f = ChaffFilter::create(100000, 1e-3);
    Rng members(11);
    for (int i = 0; i < 100000; ++i) f.insert(id_from(members));
    Rng probes(12);
    int hits = 0;
    for (int i = 0; i < 100000; ++i) hits += f.contains(id_from(probes)) ? 1 : 0;
    EXPECT_LE(hits / 100000.0, 2e-3);
}

TEST(ChaffFilterSerialize, RoundTripBehavesIdentically) {
    auto f = ChaffFilter::create(1000, 1e-3);
    Rng rng(13);
    std::vector<CredentialId> ids;
    for (int i = 0; i < 700; ++i) {
        ids.push_back(id_from(rng));
        f.insert(ids.back());
    }
    f.set_epoch(9);
    const auto bytes = f.serialize();
    EXPECT_EQ(bytes.size(), f.serialized_size());
    auto g = ChaffFilter::deserialize(bytes);
    EXPECT_EQ(g.epoch(), 9u);
    EXPECT_EQ(g.item_count(), f.item_count());
    EXPECT_EQ(g.serialize(), bytes);
    for (const auto& x : ids) EXPECT_TRUE(g.contains(x));
    for (int i = 0; i < 1000; ++i) {
        const auto q = id_from(rng);
        EXPECT_EQ(f.contains(q), g.contains(q));
    }
}

TEST(ChaffFilterSerialize, EmptyLengthIsHeaderPlusBuckets) {
    auto f = ChaffFilter::create(1000, 1e-3);
    // 512 buckets x 4 slots x 13 bits = 26624 bits = 3328 bytes
    EXPECT_EQ(f.serialize().size(), 16u + 3328u);
    EXPECT_EQ(size_filter(1000, 1e-3, SizeModel::Deletable).size_bytes, 16u + 3328u);
    EXPECT_EQ(size_filter(1000, 1e-25, SizeModel::PaperReported).size_bytes, 14977u);
}

TEST(ChaffFilterSerialize, MalformedInputRejected) {
    auto f = ChaffFilter::create(100, 1e-3);
    Rng rng(14);
    f.insert(id_from(rng));
    auto bytes = f.serialize();

    auto expect_deserialize_error = [](std::span<const std::uint8_t> b) {
        try {
            ChaffFilter::deserialize(b);
            FAIL() << "expected DeserializeError";
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), Errc::DeserializeError);
        }
    };
    expect_deserialize_error(std::span(bytes).first(bytes.size() - 1));
    expect_deserialize_error(std::span(bytes).first(8));
    auto bad_magic = bytes;
    bad_magic[0] = 0;
    expect_deserialize_error(bad_magic);
    auto bad_count = bytes;
    bad_count[8] = 7;  // item_count no longer matches the occupied slots
    expect_deserialize_error(bad_count);
}

TEST(ChaffFilterSerialize, WideFingerprintsRoundTrip) {
    auto f = ChaffFilter::create(50, std::exp2(-60.0));
    EXPECT_EQ(f.fingerprint_bits(), 63u);
    Rng rng(15);
    std::vector<CredentialId> ids;
    for (int i = 0; i < 40; ++i) {
        ids.push_back(id_from(rng));
        f.insert(ids.back());
    }
    auto g = ChaffFilter::deserialize(f.serialize());
    for (const auto& x : ids) EXPECT_TRUE(g.contains(x));
    EXPECT_EQ(g.serialize(), f.serialize());
}
