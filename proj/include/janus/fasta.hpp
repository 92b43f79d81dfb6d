#pragma once

#include <cctype>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "janus/genome.hpp"

namespace janus {

struct FastaError : std::runtime_error {
    long line;
    FastaError(long line_, const std::string& what)
        : std::runtime_error("fasta: line " + std::to_string(line_) + ": " + what), line(line_) {}
};

/// FASTA reader. Headers start with '>'; sequence lines are concatenated,
/// whitespace stripped, lowercase folded to uppercase, and any letter outside
/// {A,C,G,T} mapped to N. Total on arbitrary bytes: returns records or throws
/// a located FastaError, never crashes.
inline std::vector<FastaRecord> parse_fasta(std::istream& in) {
    std::vector<FastaRecord> records;
    std::string line;
    long line_no = 0;
    long header_line = 0;
    bool in_record = false;
    auto close_record = [&]() {
        if (in_record && records.back().seq.empty()) throw FastaError(header_line, "empty record");
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        size_t first = line.find_first_not_of(" \t");
        if (first == std::string::npos) continue;  // blank line
        if (line[first] == '>') {
            close_record();
            std::string id = line.substr(first + 1);
            // id = text up to first whitespace
            size_t ws = id.find_first_of(" \t");
            if (ws != std::string::npos) id.resize(ws);
            records.push_back(FastaRecord{std::move(id), ""});
            header_line = line_no;
            in_record = true;
            continue;
        }
        if (!in_record) throw FastaError(line_no, "sequence data before any header");
        for (char c : line) {
            if (std::isspace(static_cast<unsigned char>(c))) continue;
            const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
            records.back().seq.push_back((u == 'A' || u == 'C' || u == 'G' || u == 'T') ? u : 'N');
        }
    }
    close_record();
    return records;
}

inline std::vector<FastaRecord> parse_fasta(const std::string& text) {
    std::istringstream is(text);
    return parse_fasta(is);
}

inline std::vector<FastaRecord> load_fasta(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("fasta: cannot open " + path);
    return parse_fasta(f);
}

inline void write_fasta(std::ostream& out, const std::vector<FastaRecord>& records, size_t wrap = 70) {
    for (const FastaRecord& r : records) {
        out << '>' << r.id << '\n';
        for (size_t i = 0; i < r.seq.size(); i += wrap) out << r.seq.substr(i, wrap) << '\n';
    }
}

inline void save_fasta(const std::string& path, const std::vector<FastaRecord>& records) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("fasta: cannot write " + path);
    write_fasta(f, records);
}

}  // namespace janus
