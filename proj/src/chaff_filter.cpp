#include "cmix/chaff_filter.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

namespace cmix::filter {

namespace {

constexpr std::uint64_t kFingerprintSalt = 0x5851f42d4c957f2dULL;
constexpr std::uint64_t kAltSalt = 0x14057b7ef767814fULL;

std::uint64_t mask_bits(std::uint32_t bits) {
    return bits >= 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << bits) - 1;
}

void check_probability(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("false positive rate must lie in (0, 1)");
}

}  // namespace

std::uint64_t paper_size_model(std::uint64_t n, double p) {
    if (n < 1) throw std::invalid_argument("paper_size_model needs n >= 1");
    check_probability(p);
    const double ln2 = std::log(2.0);
    const double bits = static_cast<double>(n) * -std::log(p) / (ln2 * ln2);
    return static_cast<std::uint64_t>(std::ceil(bits / 8.0));
}

std::uint32_t digest_length(DigestAlgorithm algo) noexcept {
    switch (algo) {
        case DigestAlgorithm::SHA1: return 20;
        case DigestAlgorithm::SHA224: return 28;
        case DigestAlgorithm::SHA256: return 32;
        case DigestAlgorithm::SHA384: return 48;
        case DigestAlgorithm::SHA512: return 64;
    }
    return 0;
}

FilterSizing size_filter(std::uint64_t n, double p, SizeModel model) {
    FilterSizing s{n, p, model, 0};
    s.size_bytes = model == SizeModel::PaperReported ? paper_size_model(n, p)
                                                     : ChaffFilter::create(n, p).serialized_size();
    return s;
}

ChaffFilter ChaffFilter::create(std::uint64_t n_capacity, double p, EntityId issuer) {
    if (n_capacity < 1) throw std::invalid_argument("filter capacity must be >= 1");
    check_probability(p);

    ChaffFilter f;
    f.bucket_capacity_ = kBucketCapacity;
    const double bits = std::log2(1.0 / p) + std::log2(2.0 * kBucketCapacity);
    const auto fp_bits = static_cast<std::uint32_t>(std::ceil(bits - 1e-12));
    if (fp_bits > 64) throw std::invalid_argument("target false positive rate needs more than 64 fingerprint bits");
    f.fingerprint_bits_ = fp_bits;

    const double min_buckets = static_cast<double>(n_capacity) / (kLoadFactor * kBucketCapacity);
    std::uint64_t buckets = 1;
    while (static_cast<double>(buckets) < min_buckets) buckets <<= 1;
    if (buckets > (std::uint64_t{1} << 30)) throw std::invalid_argument("filter capacity too large");
    f.bucket_count_ = static_cast<std::uint32_t>(buckets);
    f.slots_.assign(static_cast<std::size_t>(buckets) * kBucketCapacity, 0);
    f.target_fpr_ = p;
    f.issuer_ = issuer;
    return f;
}

ChaffFilter::Hashed ChaffFilter::hash(const CredentialId& id) const noexcept {
    const std::uint64_t h = Rng::mix(id.lo() ^ Rng::mix(id.hi()));
    std::uint64_t fp = Rng::mix(h ^ kFingerprintSalt) & mask_bits(fingerprint_bits_);
    if (fp == 0) fp = 1;
    return {static_cast<std::uint32_t>(h & (bucket_count_ - 1)), fp};
}

std::uint32_t ChaffFilter::alt_index(std::uint32_t index, std::uint64_t fingerprint) const noexcept {
    return index ^ static_cast<std::uint32_t>(Rng::mix(fingerprint ^ kAltSalt) & (bucket_count_ - 1));
}

bool ChaffFilter::bucket_has(std::uint32_t bucket, std::uint64_t fingerprint) const noexcept {
    const std::size_t base = std::size_t{bucket} * bucket_capacity_;
    for (std::uint32_t s = 0; s < bucket_capacity_; ++s) {
        if (slots_[base + s] == fingerprint) return true;
    }
    return false;
}

bool ChaffFilter::try_place(std::uint32_t bucket, std::uint64_t fingerprint) noexcept {
    const std::size_t base = std::size_t{bucket} * bucket_capacity_;
    for (std::uint32_t s = 0; s < bucket_capacity_; ++s) {
        if (slots_[base + s] == 0) {
            slots_[base + s] = fingerprint;
            return true;
        }
    }
    return false;
}

void ChaffFilter::insert(const CredentialId& id) {
    const auto [i1, fp] = hash(id);
    const std::uint32_t i2 = alt_index(i1, fp);
    if (try_place(i1, fp) || try_place(i2, fp)) {
        ++item_count_;
        return;
    }

    struct Swap {
        std::size_t slot;
        std::uint64_t previous;
    };
    std::vector<Swap> undo;
    undo.reserve(kMaxKicks);

    std::uint32_t bucket = (Rng::mix(fp) & 1) ? i2 : i1;
    std::uint64_t carried = fp;
    for (int kick = 0; kick < kMaxKicks; ++kick) {
        const auto victim = static_cast<std::uint32_t>(Rng::mix(carried ^ static_cast<std::uint64_t>(kick)) %
                                                       bucket_capacity_);
        const std::size_t slot = std::size_t{bucket} * bucket_capacity_ + victim;
        undo.push_back({slot, slots_[slot]});
        std::swap(carried, slots_[slot]);
        bucket = alt_index(bucket, carried);
        if (try_place(bucket, carried)) {
            ++item_count_;
            return;
        }
    }
    for (auto it = undo.rbegin(); it != undo.rend(); ++it) slots_[it->slot] = it->previous;
    throw Error(Errc::FilterSaturated, "relocation chain exceeded " + std::to_string(kMaxKicks) + " kicks");
}

void ChaffFilter::remove(const CredentialId& id) {
    const auto [i1, fp] = hash(id);
    for (const std::uint32_t bucket : {i1, alt_index(i1, fp)}) {
        const std::size_t base = std::size_t{bucket} * bucket_capacity_;
        for (std::uint32_t s = 0; s < bucket_capacity_; ++s) {
            if (slots_[base + s] == fp) {
                slots_[base + s] = 0;
                --item_count_;
                return;
            }
        }
    }
    throw Error(Errc::RemoveAbsent, "fingerprint of " + id.hex() + " not present");
}

bool ChaffFilter::contains(const CredentialId& id) const noexcept {
    const auto [i1, fp] = hash(id);
    return bucket_has(i1, fp) || bucket_has(alt_index(i1, fp), fp);
}

std::size_t ChaffFilter::serialized_size() const noexcept {
    const std::uint64_t bits = std::uint64_t{bucket_count_} * bucket_capacity_ * fingerprint_bits_;
    return kHeaderBytes + static_cast<std::size_t>((bits + 7) / 8);
}

// Header: magic u8, version u8, fingerprint_bits u8, bucket_capacity u8,
// bucket_count u32, item_count u32, epoch u32; then slot fingerprints packed
// LSB-first.
Bytes ChaffFilter::serialize() const {
    Bytes out;
    out.reserve(serialized_size());
    ByteWriter w(out);
    w.u8(kMagic);
    w.u8(kFormatVersion);
    w.u8(static_cast<std::uint8_t>(fingerprint_bits_));
    w.u8(static_cast<std::uint8_t>(bucket_capacity_));
    w.u32(bucket_count_);
    w.u32(item_count_);
    w.u32(epoch_);

    std::uint64_t acc = 0;
    unsigned held = 0;
    for (const std::uint64_t fp : slots_) {
        unsigned remaining = fingerprint_bits_;
        std::uint64_t value = fp;
        while (remaining > 0) {
            const unsigned take = std::min(remaining, 8u - held);
            acc |= (value & ((1u << take) - 1)) << held;
            held += take;
            value = take >= 64 ? 0 : value >> take;
            remaining -= take;
            if (held == 8) {
                out.push_back(static_cast<std::uint8_t>(acc));
                acc = 0;
                held = 0;
            }
        }
    }
    if (held > 0) out.push_back(static_cast<std::uint8_t>(acc));
    return out;
}

ChaffFilter ChaffFilter::deserialize(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    if (r.remaining() < kHeaderBytes) throw Error(Errc::DeserializeError, "filter shorter than header");
    if (r.u8() != kMagic) throw Error(Errc::DeserializeError, "bad filter magic");
    if (r.u8() != kFormatVersion) throw Error(Errc::DeserializeError, "unsupported filter version");

    ChaffFilter f;
    f.fingerprint_bits_ = r.u8();
    f.bucket_capacity_ = r.u8();
    f.bucket_count_ = r.u32();
    f.item_count_ = r.u32();
    f.epoch_ = r.u32();
    if (f.fingerprint_bits_ < 1 || f.fingerprint_bits_ > 64) throw Error(Errc::DeserializeError, "bad fingerprint width");
    if (f.bucket_capacity_ < 1) throw Error(Errc::DeserializeError, "bad bucket capacity");
    if (f.bucket_count_ == 0 || !std::has_single_bit(f.bucket_count_) || f.bucket_count_ > (1u << 30)) {
        throw Error(Errc::DeserializeError, "bucket count must be a power of two");
    }
    const std::size_t expected = f.serialized_size() - kHeaderBytes;
    if (r.remaining() != expected) throw Error(Errc::DeserializeError, "filter body length mismatch");
    auto body = r.raw(expected);

    f.slots_.assign(std::size_t{f.bucket_count_} * f.bucket_capacity_, 0);
    std::size_t byte = 0;
    unsigned used = 0;  // bits consumed from body[byte]
    std::uint32_t occupied = 0;
    for (auto& slot : f.slots_) {
        std::uint64_t value = 0;
        unsigned got = 0;
        while (got < f.fingerprint_bits_) {
            const unsigned take = std::min(f.fingerprint_bits_ - got, 8u - used);
            const std::uint64_t chunk = (body[byte] >> used) & ((1u << take) - 1);
            value |= chunk << got;
            got += take;
            used += take;
            if (used == 8) {
                used = 0;
                ++byte;
            }
        }
        slot = value;
        if (value != 0) ++occupied;
    }
    if (occupied != f.item_count_) throw Error(Errc::DeserializeError, "item count disagrees with occupied slots");
    const double overhead_bits = std::log2(2.0 * f.bucket_capacity_);
    f.target_fpr_ = std::exp2(-(static_cast<double>(f.fingerprint_bits_) - overhead_bits));
    return f;
}

}  // namespace cmix::filter
