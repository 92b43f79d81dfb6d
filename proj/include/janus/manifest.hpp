#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "janus/config.hpp"

namespace janus {

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string content_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("manifest: cannot hash missing file " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    const std::string s = buf.str();
    std::ostringstream hex;
    hex << std::hex << fnv1a64(s.data(), s.size());
    return hex.str();
}

/// Every command drops a manifest in its output directory: the exact argv, the
/// fully resolved config (also written as a runnable snapshot), seeds, and a
/// content hash per input file. A run is reproducible from the snapshot alone.
inline void write_manifest(const std::string& outdir, const std::string& command,
                           const std::vector<std::string>& argv, const RunConfig& cfg,
                           const std::vector<std::string>& input_files) {
    std::filesystem::create_directories(outdir);
    const std::string snapshot = outdir + "/config_snapshot.cfg";
    {
        std::ofstream f(snapshot);
        if (!f) throw std::runtime_error("manifest: cannot write " + snapshot);
        f << serialize(cfg);
    }
    std::ofstream m(outdir + "/manifest.txt");
    if (!m) throw std::runtime_error("manifest: cannot write " + outdir + "/manifest.txt");
    m << "command = " << command << "\n";
    m << "argv =";
    for (const std::string& a : argv) m << ' ' << a;
    m << "\n";
    m << "seed.model = " << cfg.model.seed << "\n";
    m << "seed.train = " << cfg.train.seed << "\n";
    m << "seed.data = " << cfg.data.seed << "\n";
    m << "config_snapshot = config_snapshot.cfg\n";
    for (const std::string& path : input_files) m << "input " << path << " = " << content_hash(path) << "\n";
}

}  // namespace janus
