#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace janus {

/// Fixed single-nucleotide token table: A=0 C=1 G=2 T=3 N=4 PAD=5 MASK=6.
/// N doubles as the unknown symbol; every non-ACGT letter folds to it.
struct Vocabulary {
    static constexpr int A = 0;
    static constexpr int C = 1;
    static constexpr int G = 2;
    static constexpr int T = 3;
    static constexpr int N = 4;
    static constexpr int PAD = 5;
    static constexpr int MASK = 6;
    static constexpr int UNK = N;
    static constexpr int size = 7;
    static constexpr int n_bases = 4;  // A,C,G,T

    static int id_of(char c) {
        switch (std::toupper(static_cast<unsigned char>(c))) {
            case 'A': return A;
            case 'C': return C;
            case 'G': return G;
            case 'T': return T;
            case 'N': return N;
            default: return -1;
        }
    }
    static char symbol_of(int id) {
        static constexpr char table[size + 1] = "ACGTN_?";  // PAD='_', MASK='?'
        if (id < 0 || id >= size) throw std::runtime_error("vocabulary: id out of range");
        return table[id];
    }
    /// Serialized table for checkpoints; a loaded checkpoint must match it.
    static std::string canonical() { return "A=0,C=1,G=2,T=3,N=4,PAD=5,MASK=6"; }
};

enum class Strand : uint8_t { forward = 0, reverse_complement = 1 };

struct TokenSequence {
    std::vector<int> ids;
    std::string record_id;
    long offset = 0;  // position of ids[0] within the source record
    Strand strand = Strand::forward;

    long length() const { return static_cast<long>(ids.size()); }
};

/// One token per character; letters outside {A,C,G,T,N} are rejected
/// (parse_fasta already folds them to N).
inline TokenSequence tokenize(const std::string& s, std::string record_id = "", long offset = 0) {
    if (s.empty()) throw std::runtime_error("tokenize: empty sequence");
    TokenSequence t;
    t.ids.reserve(s.size());
    t.record_id = std::move(record_id);
    t.offset = offset;
    for (size_t i = 0; i < s.size(); ++i) {
        const int id = Vocabulary::id_of(s[i]);
        if (id < 0)
            throw std::runtime_error("tokenize: symbol '" + std::string(1, s[i]) + "' at position " +
                                     std::to_string(i) + " not in vocabulary");
        t.ids.push_back(id);
    }
    return t;
}

inline std::string detokenize(const TokenSequence& t) {
    std::string s;
    s.reserve(t.ids.size());
    for (int id : t.ids) s.push_back(Vocabulary::symbol_of(id));
    return s;
}

/// Opposite strand: order reversed, A<->T and C<->G swapped, N fixed.
/// An involution; refuses special tokens.
inline TokenSequence reverse_complement(const TokenSequence& t) {
    static constexpr int comp[5] = {Vocabulary::T, Vocabulary::G, Vocabulary::C, Vocabulary::A, Vocabulary::N};
    TokenSequence r;
    r.ids.resize(t.ids.size());
    r.record_id = t.record_id;
    r.offset = t.offset;
    r.strand = t.strand == Strand::forward ? Strand::reverse_complement : Strand::forward;
    for (size_t i = 0; i < t.ids.size(); ++i) {
        const int id = t.ids[t.ids.size() - 1 - i];
        if (id < 0 || id > Vocabulary::N)
            throw std::runtime_error("reverse_complement: special token at position " +
                                     std::to_string(t.ids.size() - 1 - i));
        r.ids[i] = comp[id];
    }
    return r;
}

struct SequenceBatch {
    std::vector<TokenSequence> sequences;  // uniform length T
    std::vector<std::vector<uint8_t>> include;  // per sequence, per position; 0 wherever PAD

    long seq_len() const { return sequences.empty() ? 0 : sequences.front().length(); }
    long size() const { return static_cast<long>(sequences.size()); }
};

struct FastaRecord {
    std::string id;
    std::string seq;
};

/// Sliding windows over one record. The final short window is padded with PAD;
/// PAD positions are excluded from loss. Records shorter than 2 yield nothing
/// (the caller counts them as warnings).
inline std::vector<TokenSequence> chunk_record(const FastaRecord& rec, long T, long stride) {
    if (T < 2) throw std::runtime_error("chunk: window length must be >= 2");
    if (stride < 1) throw std::runtime_error("chunk: stride must be >= 1");
    std::vector<TokenSequence> out;
    const long len = static_cast<long>(rec.seq.size());
    if (len < 2) return out;
    for (long off = 0; off < len; off += stride) {
        const long real = std::min(T, len - off);
        TokenSequence w = tokenize(rec.seq.substr(static_cast<size_t>(off), static_cast<size_t>(real)),
                                   rec.id, off);
        w.ids.resize(static_cast<size_t>(T), Vocabulary::PAD);
        out.push_back(std::move(w));
    }
    return out;
}

/// Record stream -> batches of B windows. Returns the number of skipped
/// too-short records through `n_skipped` when given.
inline std::vector<SequenceBatch> chunk_dataset(const std::vector<FastaRecord>& records, long T, long stride,
                                                long batch_size, long* n_skipped = nullptr) {
    if (batch_size < 1) throw std::runtime_error("chunk: batch size must be >= 1");
    std::vector<TokenSequence> windows;
    long skipped = 0;
    for (const FastaRecord& r : records) {
        auto w = chunk_record(r, T, stride);
        if (w.empty()) {
            ++skipped;
            continue;
        }
        windows.insert(windows.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
    }
    if (n_skipped) *n_skipped = skipped;
    std::vector<SequenceBatch> batches;
    for (size_t i = 0; i < windows.size(); i += static_cast<size_t>(batch_size)) {
        SequenceBatch b;
        for (size_t j = i; j < std::min(windows.size(), i + static_cast<size_t>(batch_size)); ++j)
            b.sequences.push_back(std::move(windows[j]));
        for (const TokenSequence& s : b.sequences) {
            std::vector<uint8_t> inc(s.ids.size());
            for (size_t k = 0; k < s.ids.size(); ++k) inc[k] = s.ids[k] != Vocabulary::PAD;
            b.include.push_back(std::move(inc));
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

}  // namespace janus
