#pragma once

// Deletable membership structure over chaff-credential fingerprints
// (partial-key cuckoo hashing) and the two sizing models used for overhead
// accounting.

#include <cstdint>
#include <span>
#include <vector>

#include "cmix/core.hpp"

namespace cmix::filter {

inline constexpr std::size_t kHeaderBytes = 16;
inline constexpr std::uint32_t kBucketCapacity = 4;
inline constexpr double kLoadFactor = 0.95;
inline constexpr int kMaxKicks = 500;
inline constexpr std::uint8_t kMagic = 0xCF;
inline constexpr std::uint8_t kFormatVersion = 1;

enum class SizeModel { PaperReported, Deletable };

/// Classical single-bit-array sizing, ceil(n ln(1/p) / ln^2 2 / 8) bytes.
/// Requires n >= 1 and 0 < p < 1.
std::uint64_t paper_size_model(std::uint64_t n, double p);

enum class DigestAlgorithm { SHA1, SHA224, SHA256, SHA384, SHA512 };

std::uint32_t digest_length(DigestAlgorithm algo) noexcept;

/// Size of shipping a plain list of credential digests instead of a filter.
inline std::uint64_t digest_list_size(std::uint64_t n, DigestAlgorithm algo) noexcept {
    return n * digest_length(algo);
}

struct FilterSizing {
    std::uint64_t n = 0;
    double p = 0.0;
    SizeModel model = SizeModel::PaperReported;
    std::uint64_t size_bytes = 0;
};

FilterSizing size_filter(std::uint64_t n, double p, SizeModel model);

class ChaffFilter {
public:
    /// Empty filter sized for `n_capacity` items at false-positive target `p`.
    /// fingerprint_bits = ceil(log2(1/p) + log2(2b)); bucket_count is the
    /// smallest power of two >= n / (0.95 b). Fingerprints wider than 64 bits
    /// are not supported (std::invalid_argument).
    static ChaffFilter create(std::uint64_t n_capacity, double p, EntityId issuer = {});

    /// Errc::FilterSaturated if no slot is found within 500 relocations; the
    /// filter is left unchanged in that case.
    void insert(const CredentialId& id);

    /// Removes one copy of the id's fingerprint; Errc::RemoveAbsent otherwise.
    void remove(const CredentialId& id);

    [[nodiscard]] bool contains(const CredentialId& id) const noexcept;

    [[nodiscard]] Bytes serialize() const;
    static ChaffFilter deserialize(std::span<const std::uint8_t> bytes);
    [[nodiscard]] std::size_t serialized_size() const noexcept;

    [[nodiscard]] std::uint32_t fingerprint_bits() const noexcept { return fingerprint_bits_; }
    [[nodiscard]] std::uint32_t bucket_capacity() const noexcept { return bucket_capacity_; }
    [[nodiscard]] std::uint32_t bucket_count() const noexcept { return bucket_count_; }
    [[nodiscard]] std::uint32_t item_count() const noexcept { return item_count_; }
    [[nodiscard]] double target_fpr() const noexcept { return target_fpr_; }
    [[nodiscard]] EntityId issuer() const noexcept { return issuer_; }
    [[nodiscard]] std::uint32_t epoch() const noexcept { return epoch_; }
    void set_epoch(std::uint32_t epoch) noexcept { epoch_ = epoch; }
    void set_issuer(EntityId issuer) noexcept { issuer_ = issuer; }

    friend bool operator==(const ChaffFilter&, const ChaffFilter&) = default;

private:
    ChaffFilter() = default;

    struct Hashed {
        std::uint32_t index = 0;
        std::uint64_t fingerprint = 0;
    };

    [[nodiscard]] Hashed hash(const CredentialId& id) const noexcept;
    [[nodiscard]] std::uint32_t alt_index(std::uint32_t index, std::uint64_t fingerprint) const noexcept;
    [[nodiscard]] bool bucket_has(std::uint32_t bucket, std::uint64_t fingerprint) const noexcept;
    bool try_place(std::uint32_t bucket, std::uint64_t fingerprint) noexcept;

    std::vector<std::uint64_t> slots_;  // 0 marks an empty slot
    std::uint32_t fingerprint_bits_ = 0;
    std::uint32_t bucket_capacity_ = kBucketCapacity;
    std::uint32_t bucket_count_ = 0;
    std::uint32_t item_count_ = 0;
    double target_fpr_ = 0.0;
    EntityId issuer_;
    std::uint32_t epoch_ = 0;
};

}  // namespace cmix::filter
