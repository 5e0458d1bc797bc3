#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include <Eigen/Dense>

namespace transma::rng {

namespace detail {

// murmur3 64-bit finalizer; full avalanche on the state word
inline constexpr std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 33;
    z *= 0xff51afd7ed558ccdULL;
    z ^= z >> 33;
    z *= 0xc4ceb9fe1a85ec53ULL;
    z ^= z >> 33;
    return z;
}

inline constexpr std::uint32_t mulhi32(std::uint32_t a, std::uint32_t b) {
    return static_cast<std::uint32_t>((static_cast<std::uint64_t>(a) * b) >> 32);
}

}  // namespace detail

/// Philox4x32-10 block cipher (Salmon et al.): 4x32-bit counter, 2x32-bit key.
struct Philox4x32 {
    static constexpr std::uint32_t kMul0 = 0xD2511F53u;
    static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

    static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                              std::array<std::uint32_t, 2> key) {
        for (int round = 0; round < 10; ++round) {
            const std::uint32_t hi0 = detail::mulhi32(kMul0, ctr[0]);
            const std::uint32_t lo0 = kMul0 * ctr[0];
            const std::uint32_t hi1 = detail::mulhi32(kMul1, ctr[2]);
            const std::uint32_t lo1 = kMul1 * ctr[2];
            ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
            key[0] += kWeyl0;
            key[1] += kWeyl1;
        }
        return ctr;
    }
};

/// Hierarchical stream key. Children are derived by hashing a salt word into
/// the parent state, so streams keyed by (seed, replicate, domain, purpose)
/// are independent regardless of draw order or thread schedule.
class StreamKey {
  public:
    StreamKey() = default;
    explicit constexpr StreamKey(std::uint64_t seed)
        : state_(detail::mix64(seed ^ 0x5851F42D4C957F2DULL)) {}

    constexpr StreamKey child(std::uint64_t salt) const {
        StreamKey k;
        k.state_ = detail::mix64(state_ ^ detail::mix64(salt + 0x632BE59BD9B4E019ULL));
        return k;
    }

    constexpr std::uint64_t value() const { return state_; }

  private:
    std::uint64_t state_ = 0;
};

/// Counter-based stream of uniforms and normals. Copyable; each copy
/// continues independently from the copied counter position.
class Stream {
  public:
    explicit Stream(StreamKey key)
        : key_{static_cast<std::uint32_t>(key.value()),
               static_cast<std::uint32_t>(key.value() >> 32)} {}

    std::uint32_t next_u32() {
        if (pos_ == 4) {
            buf_ = Philox4x32::block({static_cast<std::uint32_t>(counter_),
                                      static_cast<std::uint32_t>(counter_ >> 32), 0u, 0u},
                                     key_);
            ++counter_;
            pos_ = 0;
        }
        return buf_[pos_++];
    }

    std::uint64_t next_u64() {
        const std::uint64_t lo = next_u32();
        const std::uint64_t hi = next_u32();
        return lo | (hi << 32);
    }

    /// Uniform on (0, 1]; strictly positive so log() is always finite.
    double uniform01() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller; pairs are cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform01();
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    Eigen::VectorXd normal_vector(Eigen::Index n) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

    Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols) {
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal();
        return m;
    }

    /// Uniform integer in [0, bound) by rejection; bound must be positive.
    std::uint64_t below(std::uint64_t bound) {
        const std::uint64_t threshold = (~bound + 1) % bound;  // 2^64 mod bound
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

  private:
    std::array<std::uint32_t, 2> key_;
    std::uint64_t counter_ = 0;
    std::array<std::uint32_t, 4> buf_{};
    int pos_ = 4;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace transma::rng
