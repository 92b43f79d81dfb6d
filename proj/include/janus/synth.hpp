#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "janus/genome.hpp"
#include "janus/rng.hpp"

namespace janus {

enum class SynthKind { markov3, planted_motif, bidir_motif };

inline SynthKind synth_kind_from(const std::string& s) {
    if (s == "markov3") return SynthKind::markov3;
    if (s == "planted_motif") return SynthKind::planted_motif;
    if (s == "bidir_motif") return SynthKind::bidir_motif;
    throw std::runtime_error("synth: unknown corpus kind '" + s + "'");
}

/// The fixed order-3 transition table behind the markov3 corpus: 64 contexts
/// (c2*16 + c1*4 + c0, c0 most recent) by 4 next-base probabilities. Derived
/// once from a hard-coded seed so the chain itself never varies.
inline const std::array<std::array<double, 4>, 64>& markov3_table() {
    static const std::array<std::array<double, 4>, 64> table = [] {
        std::array<std::array<double, 4>, 64> t{};
        Rng rng(0x4a414e5553444eull);  // chain identity, independent of sampling seed
        for (auto& row : t) {
            double sum = 0;
            for (double& p : row) {
                const double u = rng.uniform();
                p = 0.05 + u * u;
                sum += p;
            }
            for (double& p : row) p /= sum;
        }
        return t;
    }();
    return table;
}

/// Published lookup behind bidir_motif: the determined token is
/// table[left][right] with left = x_{t-2}, right = x_{t+2}.
inline const std::array<std::array<int, 4>, 4>& bidir_motif_table() {
    static const std::array<std::array<int, 4>, 4> table = [] {
        std::array<std::array<int, 4>, 4> t{};
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b) t[static_cast<size_t>(a)][static_cast<size_t>(b)] = (a + b) % 4;
        return t;
    }();
    return table;
}

/// Positions whose token is a function of both neighbors (record coordinates).
inline bool bidir_motif_is_determined(long pos) { return pos % 5 == 2; }

/// Background chain of bidir_motif: circulant order-1 over A,C,G,T with
/// offset probabilities chosen so the determined-position marginal is exactly
/// uniform (zero second Fourier mode).
inline const std::array<double, 4>& bidir_motif_background() {
    static const std::array<double, 4> c = {0.4, 0.25, 0.1, 0.25};
    return c;
}

namespace detail {

inline int sample_categorical(Rng& rng, const double* p, int n) {
    double u = rng.uniform();
    for (int i = 0; i < n - 1; ++i) {
        u -= p[i];
        if (u < 0) return i;
    }
    return n - 1;
}

inline std::string gen_markov3(Rng& rng, long len) {
    const auto& table = markov3_table();
    std::string s;
    s.reserve(static_cast<size_t>(len));
    int c2 = static_cast<int>(rng.below(4)), c1 = static_cast<int>(rng.below(4)),
        c0 = static_cast<int>(rng.below(4));
    for (long i = 0; i < len; ++i) {
        int next;
        if (i == 0) next = c2;
        else if (i == 1) next = c1;
        else if (i == 2) next = c0;
        else {
            next = sample_categorical(rng, table[static_cast<size_t>(c2 * 16 + c1 * 4 + c0)].data(), 4);
            c2 = c1;
            c1 = c0;
            c0 = next;
        }
        s.push_back(Vocabulary::symbol_of(next));
    }
    return s;
}

inline std::string gen_planted_motif(Rng& rng, long len, double density) {
    static const std::string motif = "GATA";
    std::string s;
    s.reserve(static_cast<size_t>(len));
    while (static_cast<long>(s.size()) < len) {
        if (static_cast<long>(s.size()) + static_cast<long>(motif.size()) <= len && rng.uniform() < density) {
            s += motif;
        } else {
            s.push_back(Vocabulary::symbol_of(static_cast<int>(rng.below(4))));
        }
    }
    return s;
}

inline std::string gen_bidir_motif(Rng& rng, long len) {
    const auto& c = bidir_motif_background();
    const auto& lut = bidir_motif_table();
    std::vector<int> ids(static_cast<size_t>(len));
    int cur = static_cast<int>(rng.below(4));
    for (long i = 0; i < len; ++i) {
        if (i > 0) cur = (cur + sample_categorical(rng, c.data(), 4)) % 4;
        ids[static_cast<size_t>(i)] = cur;
    }
    for (long t = 2; t + 2 < len; ++t)
        if (bidir_motif_is_determined(t))
            ids[static_cast<size_t>(t)] =
                lut[static_cast<size_t>(ids[static_cast<size_t>(t - 2)])][static_cast<size_t>(ids[static_cast<size_t>(t + 2)])];
    std::string s(static_cast<size_t>(len), 'A');
    for (long i = 0; i < len; ++i) s[static_cast<size_t>(i)] = Vocabulary::symbol_of(ids[static_cast<size_t>(i)]);
    return s;
}

}  // namespace detail

/// Seeded synthetic corpus; the desk-scale stand-in for a reference genome.
inline std::vector<FastaRecord> synth_corpus(SynthKind kind, uint64_t seed, long n_records, long record_len,
                                             double motif_density = 0.02) {
    if (n_records < 1 || record_len < 1) throw std::runtime_error("synth: need n_records >= 1 and record_len >= 1");
    Rng rng(seed);
    std::vector<FastaRecord> records;
    records.reserve(static_cast<size_t>(n_records));
    const char* prefix = kind == SynthKind::markov3 ? "markov3"
                         : kind == SynthKind::planted_motif ? "planted"
                                                            : "bidir";
    for (long r = 0; r < n_records; ++r) {
        FastaRecord rec;
        rec.id = std::string(prefix) + "-" + std::to_string(seed) + "-" + std::to_string(r);
        switch (kind) {
            case SynthKind::markov3: rec.seq = detail::gen_markov3(rng, record_len); break;
            case SynthKind::planted_motif: rec.seq = detail::gen_planted_motif(rng, record_len, motif_density); break;
            case SynthKind::bidir_motif: rec.seq = detail::gen_bidir_motif(rng, record_len); break;
        }
        records.push_back(std::move(rec));
    }
    return records;
}

inline std::vector<FastaRecord> synth_corpus(const std::string& kind, uint64_t seed, long n_records,
                                             long record_len, double motif_density = 0.02) {
    return synth_corpus(synth_kind_from(kind), seed, n_records, record_len, motif_density);
}

}  // namespace janus
