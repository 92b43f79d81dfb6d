#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace janus {

enum class Objective : uint8_t { janus = 0, mlm = 1 };

inline std::string to_string(Objective o) { return o == Objective::janus ? "janus" : "mlm"; }
inline Objective objective_from(const std::string& s) {
    if (s == "janus") return Objective::janus;
    if (s == "mlm") return Objective::mlm;
    throw std::runtime_error("config: objective must be 'janus' or 'mlm', got '" + s + "'");
}

struct ModelConfig {
    long d_model = 32;
    long n_layers = 8;
    long vocab_size = 7;
    long ffn_mult = 4;
    long n_experts = 16;
    long n_heads = 4;
    double moe_ratio = 0.5;
    double alpha_aux = 0.2;
    long mid_attention = -1;  // -1 = off, else 0-indexed layer whose mixer is causal attention
    uint64_t seed = 1;

    void validate() const {
        if (d_model < 1 || n_layers < 1 || vocab_size < 2 || ffn_mult < 1 || n_heads < 1)
            throw std::runtime_error("config: model dimensions must be positive");
        if (d_model % n_heads != 0) throw std::runtime_error("config: d_model must be divisible by n_heads");
        if (moe_ratio < 0.0 || moe_ratio > 1.0) throw std::runtime_error("config: moe_ratio must be in [0,1]");
        if (moe_ratio > 0.0 && n_experts < 1) throw std::runtime_error("config: n_experts must be >= 1");
        if (mid_attention >= n_layers)
            throw std::runtime_error("config: mid_attention index must be < n_layers");
    }

    /// Layer l hosts an MoE channel block iff the cumulative replacement
    /// quota crosses an integer at l; reproduces odd layers at ratio 0.5.
    bool layer_is_moe(long l) const {
        auto q = [&](long k) { return static_cast<long>(std::floor(static_cast<double>(k) * moe_ratio + 1e-12)); };
        return q(l + 1) > q(l);
    }
};

struct TrainConfig {
    long steps = 200;
    long batch = 8;
    long seq_len = 64;
    long stride = 0;  // 0 = seq_len (non-overlapping windows)
    long checkpoint_every = 100;
    double peak_lr = 8e-3;
    double floor_lr = 1e-6;
    double warmup_frac = 0.10;
    double weight_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    double clip_norm = 1.0;
    double alpha_aux = 0.2;
    double mlm_fraction = 0.15;
    Objective objective = Objective::janus;
    uint64_t seed = 1;

    long effective_stride() const { return stride > 0 ? stride : seq_len; }

    void validate() const {
        if (steps < 1 || batch < 1 || seq_len < 2) throw std::runtime_error("config: train sizes must be positive, seq_len >= 2");
        if (warmup_frac <= 0.0 || warmup_frac >= 1.0) throw std::runtime_error("config: warmup_frac must be in (0,1)");
        if (clip_norm <= 0.0) throw std::runtime_error("config: clip_norm must be > 0");
        if (mlm_fraction <= 0.0 || mlm_fraction >= 1.0) throw std::runtime_error("config: mlm_fraction must be in (0,1)");
        if (checkpoint_every < 1) throw std::runtime_error("config: checkpoint_every must be >= 1");
    }
};

struct DataConfig {
    std::string kind = "markov3";
    std::string fasta;  // when set, corpus is read from this file instead of synthesized
    uint64_t seed = 11;
    long records = 64;
    long record_len = 2048;
    double motif_density = 0.02;
};

struct EvalConfig {
    long every = 500;
    long records = 1920;
    uint64_t seed = 999;
};

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    EvalConfig eval;

    void validate() const {
        model.validate();
        train.validate();
    }
};

// ---------------------------------------------------------------------------
// Flat dotted key=value config text with a closed schema. Unknown keys and
// ill-typed values are rejected with the offending key named.
// ---------------------------------------------------------------------------

namespace cfgdetail {

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

inline long parse_long(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        long out = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw std::runtime_error("config: key '" + key + "' expects an integer, got '" + v + "'");
    }
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw std::runtime_error("config: key '" + key + "' expects a number, got '" + v + "'");
    }
}

inline uint64_t parse_seed(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        unsigned long long out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw std::runtime_error("config: key '" + key + "' expects a non-negative integer, got '" + v + "'");
    }
}

}  // namespace cfgdetail

class ConfigMap {
public:
    /// Every accepted key with a short description; the single source of truth
    /// for schema checks and the CLI's config documentation.
    static const std::vector<std::pair<std::string, std::string>>& schema() {
        static const std::vector<std::pair<std::string, std::string>> s = {
            {"model.d_model", "hidden width"},
            {"model.n_layers", "layers per directional encoder"},
            {"model.vocab_size", "token vocabulary size"},
            {"model.ffn_mult", "FFN width multiplier"},
            {"model.n_experts", "experts per MoE layer"},
            {"model.n_heads", "attention heads"},
            {"model.moe_ratio", "fraction of FFN blocks replaced by MoE"},
            {"model.alpha_aux", "MoE auxiliary loss coefficient"},
            {"model.mid_attention", "'off' or 0-indexed layer with a causal attention mixer"},
            {"model.seed", "parameter initialization seed"},
            {"train.steps", "optimizer steps"},
            {"train.batch", "sequences per batch"},
            {"train.seq_len", "window length T"},
            {"train.stride", "window stride (0 = seq_len)"},
            {"train.checkpoint_every", "steps between checkpoints"},
            {"train.peak_lr", "peak learning rate (paper states both 8e-3 and 1e-4; default 8e-3)"},
            {"train.floor_lr", "warmup start / cosine floor learning rate"},
            {"train.warmup_frac", "fraction of steps spent in linear warmup"},
            {"train.weight_decay", "decoupled weight decay on weight matrices"},
            {"train.beta1", "AdamW beta1"},
            {"train.beta2", "AdamW beta2"},
            {"train.adam_eps", "AdamW epsilon"},
            {"train.clip_norm", "global gradient-norm clip threshold"},
            {"train.alpha_aux", "MoE auxiliary loss coefficient used by the objective"},
            {"train.mlm_fraction", "fraction of positions masked by the MLM objective"},
            {"train.objective", "'janus' or 'mlm'"},
            {"train.seed", "batch sampling / masking seed"},
            {"data.kind", "synthetic corpus kind: markov3 | planted_motif | bidir_motif"},
            {"data.fasta", "path to a FASTA corpus (overrides data.kind)"},
            {"data.seed", "corpus sampling seed"},
            {"data.records", "synthetic record count"},
            {"data.record_len", "synthetic record length"},
            {"data.motif_density", "planted_motif plant probability per position"},
            {"eval.every", "steps between held-out evaluations"},
            {"eval.records", "held-out evaluation sequence count"},
            {"eval.seed", "held-out corpus seed"},
        };
        return s;
    }

    static bool known(const std::string& key) {
        for (const auto& [k, _] : schema())
            if (k == key) return true;
        return false;
    }

    void set(const std::string& key, const std::string& value, const std::string& where) {
        if (!known(key)) throw std::runtime_error("config: unknown key '" + key + "' (" + where + ")");
        kv_[key] = value;
    }

    /// Parses `key = value` lines ('#' comments); errors carry line numbers.
    void load_text(const std::string& text, const std::string& where) {
        std::istringstream is(text);
        std::string line;
        long line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            const std::string loc = where + ":" + std::to_string(line_no);
            size_t hash = line.find('#');
            if (hash != std::string::npos) line.resize(hash);
            line = cfgdetail::trim(line);
            if (line.empty()) continue;
            size_t eq = line.find('=');
            if (eq == std::string::npos) throw std::runtime_error("config: missing '=' (" + loc + ")");
            set(cfgdetail::trim(line.substr(0, eq)), cfgdetail::trim(line.substr(eq + 1)), loc);
        }
    }

    void load_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("config: cannot open " + path);
        std::ostringstream buf;
        buf << f.rdbuf();
        load_text(buf.str(), path);
    }

    /// A `key=value` override (CLI or env); wins over the file.
    void apply_override(const std::string& kv, const std::string& where) {
        size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("config: override '" + kv + "' must look like key=value");
        set(cfgdetail::trim(kv.substr(0, eq)), cfgdetail::trim(kv.substr(eq + 1)), where);
    }

    bool has(const std::string& key) const { return kv_.count(key) != 0; }
    const std::string& raw(const std::string& key) const { return kv_.at(key); }

    RunConfig materialize() const {
        RunConfig c;
        bool train_alpha_given = false;
        for (const auto& [k, v] : kv_) {
            if (k == "model.d_model") c.model.d_model = cfgdetail::parse_long(k, v);
            else if (k == "model.n_layers") c.model.n_layers = cfgdetail::parse_long(k, v);
            else if (k == "model.vocab_size") c.model.vocab_size = cfgdetail::parse_long(k, v);
            else if (k == "model.ffn_mult") c.model.ffn_mult = cfgdetail::parse_long(k, v);
            else if (k == "model.n_experts") c.model.n_experts = cfgdetail::parse_long(k, v);
            else if (k == "model.n_heads") c.model.n_heads = cfgdetail::parse_long(k, v);
            else if (k == "model.moe_ratio") c.model.moe_ratio = cfgdetail::parse_double(k, v);
            else if (k == "model.alpha_aux") c.model.alpha_aux = cfgdetail::parse_double(k, v);
            else if (k == "model.mid_attention")
                c.model.mid_attention = (v == "off") ? -1 : cfgdetail::parse_long(k, v);
            else if (k == "model.seed") c.model.seed = cfgdetail::parse_seed(k, v);
            else if (k == "train.steps") c.train.steps = cfgdetail::parse_long(k, v);
            else if (k == "train.batch") c.train.batch = cfgdetail::parse_long(k, v);
            else if (k == "train.seq_len") c.train.seq_len = cfgdetail::parse_long(k, v);
            else if (k == "train.stride") c.train.stride = cfgdetail::parse_long(k, v);
            else if (k == "train.checkpoint_every") c.train.checkpoint_every = cfgdetail::parse_long(k, v);
            else if (k == "train.peak_lr") c.train.peak_lr = cfgdetail::parse_double(k, v);
            else if (k == "train.floor_lr") c.train.floor_lr = cfgdetail::parse_double(k, v);
            else if (k == "train.warmup_frac") c.train.warmup_frac = cfgdetail::parse_double(k, v);
            else if (k == "train.weight_decay") c.train.weight_decay = cfgdetail::parse_double(k, v);
            else if (k == "train.beta1") c.train.beta1 = cfgdetail::parse_double(k, v);
            else if (k == "train.beta2") c.train.beta2 = cfgdetail::parse_double(k, v);
            else if (k == "train.adam_eps") c.train.adam_eps = cfgdetail::parse_double(k, v);
            else if (k == "train.clip_norm") c.train.clip_norm = cfgdetail::parse_double(k, v);
            else if (k == "train.alpha_aux") {
                c.train.alpha_aux = cfgdetail::parse_double(k, v);
                train_alpha_given = true;
            } else if (k == "train.mlm_fraction") c.train.mlm_fraction = cfgdetail::parse_double(k, v);
            else if (k == "train.objective") c.train.objective = objective_from(v);
            else if (k == "train.seed") c.train.seed = cfgdetail::parse_seed(k, v);
            else if (k == "data.kind") c.data.kind = v;
            else if (k == "data.fasta") c.data.fasta = v;
            else if (k == "data.seed") c.data.seed = cfgdetail::parse_seed(k, v);
            else if (k == "data.records") c.data.records = cfgdetail::parse_long(k, v);
            else if (k == "data.record_len") c.data.record_len = cfgdetail::parse_long(k, v);
            else if (k == "data.motif_density") c.data.motif_density = cfgdetail::parse_double(k, v);
            else if (k == "eval.every") c.eval.every = cfgdetail::parse_long(k, v);
            else if (k == "eval.records") c.eval.records = cfgdetail::parse_long(k, v);
            else if (k == "eval.seed") c.eval.seed = cfgdetail::parse_seed(k, v);
            else throw std::runtime_error("config: unhandled key '" + k + "'");
        }
        if (!train_alpha_given && kv_.count("model.alpha_aux")) c.train.alpha_aux = c.model.alpha_aux;
        c.validate();
        return c;
    }

private:
    std::map<std::string, std::string> kv_;
};

/// Full resolved config as config-file text (manifests, checkpoints, re-runs).
inline std::string serialize(const RunConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "model.d_model = " << c.model.d_model << "\n"
       << "model.n_layers = " << c.model.n_layers << "\n"
       << "model.vocab_size = " << c.model.vocab_size << "\n"
       << "model.ffn_mult = " << c.model.ffn_mult << "\n"
       << "model.n_experts = " << c.model.n_experts << "\n"
       << "model.n_heads = " << c.model.n_heads << "\n"
       << "model.moe_ratio = " << c.model.moe_ratio << "\n"
       << "model.alpha_aux = " << c.model.alpha_aux << "\n"
       << "model.mid_attention = " << (c.model.mid_attention < 0 ? std::string("off") : std::to_string(c.model.mid_attention)) << "\n"
       << "model.seed = " << c.model.seed << "\n"
       << "train.steps = " << c.train.steps << "\n"
       << "train.batch = " << c.train.batch << "\n"
       << "train.seq_len = " << c.train.seq_len << "\n"
       << "train.stride = " << c.train.stride << "\n"
       << "train.checkpoint_every = " << c.train.checkpoint_every << "\n"
       << "train.peak_lr = " << c.train.peak_lr << "\n"
       << "train.floor_lr = " << c.train.floor_lr << "\n"
       << "train.warmup_frac = " << c.train.warmup_frac << "\n"
       << "train.weight_decay = " << c.train.weight_decay << "\n"
       << "train.beta1 = " << c.train.beta1 << "\n"
       << "train.beta2 = " << c.train.beta2 << "\n"
       << "train.adam_eps = " << c.train.adam_eps << "\n"
       << "train.clip_norm = " << c.train.clip_norm << "\n"
       << "train.alpha_aux = " << c.train.alpha_aux << "\n"
       << "train.mlm_fraction = " << c.train.mlm_fraction << "\n"
       << "train.objective = " << to_string(c.train.objective) << "\n"
       << "train.seed = " << c.train.seed << "\n"
       << "data.kind = " << c.data.kind << "\n";
    if (!c.data.fasta.empty()) os << "data.fasta = " << c.data.fasta << "\n";
    os << "data.seed = " << c.data.seed << "\n"
       << "data.records = " << c.data.records << "\n"
       << "data.record_len = " << c.data.record_len << "\n"
       << "data.motif_density = " << c.data.motif_density << "\n"
       << "eval.every = " << c.eval.every << "\n"
       << "eval.records = " << c.eval.records << "\n"
       << "eval.seed = " << c.eval.seed << "\n";
    return os.str();
}

}  // namespace janus
