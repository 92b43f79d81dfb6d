#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "janus/cli.hpp"
#include "janus/evaluate.hpp"
#include "janus/loss.hpp"
#include "janus/synth.hpp"
#include "janus/train.hpp"

using namespace janus;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("janus-test-" + tag + "-" + std::to_string(::getpid()))) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

ModelConfig micro_model(uint64_t seed = 1, long d = 8, long layers = 1, double moe = 0.0) {
    ModelConfig cfg;
    cfg.d_model = d;
    cfg.n_layers = layers;
    cfg.n_heads = 2;
    cfg.ffn_mult = 2;
    cfg.moe_ratio = moe;
    cfg.n_experts = 4;
    cfg.mid_attention = -1;
    cfg.seed = seed;
    return cfg;
}

std::vector<std::string> file_lines(const std::string& path) {
    std::ifstream f(path);
    std::vector<std::string> lines;
    std::string l;
    while (std::getline(f, l)) lines.push_back(l);
    return lines;
}

std::string strip_tps(const std::string& csv_row) {
    const size_t last = csv_row.rfind(',');
    return csv_row.substr(0, last);
}

std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

SequenceBatch batch_of(const std::vector<std::string>& seqs) {
    SequenceBatch b;
    for (const auto& s : seqs) {
        b.sequences.push_back(tokenize(s));
        std::vector<uint8_t> inc(s.size());
        for (size_t i = 0; i < s.size(); ++i) inc[i] = b.sequences.back().ids[i] != Vocabulary::PAD;
        b.include.push_back(std::move(inc));
    }
    return b;
}

}  // namespace

TEST_CASE("lr_at schedule shape") {
    TrainConfig cfg;
    cfg.steps = 1000;
    cfg.peak_lr = 8e-3;
    cfg.floor_lr = 1e-6;
    cfg.warmup_frac = 0.10;

    CHECK(lr_at(0, cfg) == 1e-6);
    CHECK(lr_at(100, cfg) == Catch::Approx(8e-3).margin(1e-15));  // ceil(0.1 * 1000)
    CHECK(std::fabs(lr_at(1000, cfg) - 1e-6) < 1e-12);
    SECTION("continuous at the warmup/cosine junction") {
        const double left = lr_at(100, cfg);
        const double right = cfg.floor_lr + (cfg.peak_lr - cfg.floor_lr) * 0.5 *
                                                (1.0 + std::cos(0.0));
        CHECK(std::fabs(left - right) < 1e-12);
    }
    SECTION("monotone up then down") {
        for (long s = 1; s <= 100; ++s) CHECK(lr_at(s, cfg) > lr_at(s - 1, cfg));
        for (long s = 101; s <= 1000; ++s) CHECK(lr_at(s, cfg) <= lr_at(s - 1, cfg));
    }
    SECTION("bounds checked") { REQUIRE_THROWS(lr_at(1001, cfg)); }
}

TEST_CASE("clip_gradients on declared examples") {
    auto mk = [](std::vector<float> g) {
        const long n = static_cast<long>(g.size());
        Parameter<float> p("p", ParamKind::weight, Tensor<float>::zeros({n}));
        p.grad = Tensor<float>({n}, std::move(g));
        return p;
    };
    SECTION("norm below the threshold is untouched") {
        std::vector<Parameter<float>> ps;
        ps.push_back(mk({0.3f, 0.4f}));  // norm 0.5
        CHECK(clip_gradients(ps, 1.0) == Catch::Approx(0.5));
        CHECK(ps[0].grad.data == std::vector<float>{0.3f, 0.4f});
    }
    SECTION("norm 4 scales by 1/4") {
        std::vector<Parameter<float>> ps;
        ps.push_back(mk({4.0f}));
        CHECK(clip_gradients(ps, 1.0) == Catch::Approx(4.0));
        CHECK(ps[0].grad.data == std::vector<float>{1.0f});
    }
    SECTION("global norm across tensors: [3] and [4] scale to [0.6] and [0.8]") {
        std::vector<Parameter<float>> ps;
        ps.push_back(mk({3.0f}));
        ps.push_back(mk({4.0f}));
        CHECK(clip_gradients(ps, 1.0) == Catch::Approx(5.0));
        CHECK(ps[0].grad.data == std::vector<float>{0.6f});
        CHECK(ps[1].grad.data == std::vector<float>{0.8f});
    }
    SECTION("post-clip norm never exceeds the threshold on random grads") {
        Rng rng(3);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<Parameter<float>> ps;
            for (int k = 0; k < 3; ++k) {
                std::vector<float> g(4);
                for (float& v : g) v = static_cast<float>(rng.uniform(-5, 5));
                ps.push_back(mk(std::move(g)));
            }
            clip_gradients(ps, 1.0);
            double sq = 0;
            for (const auto& p : ps)
                for (float v : p.grad.data) sq += static_cast<double>(v) * v;
            CHECK(std::sqrt(sq) <= 1.0 + 1e-6);
        }
    }
}

TEST_CASE("adamw_step on declared examples") {
    TrainConfig cfg;  // beta1 .9, beta2 .95, eps 1e-8
    auto scalar_param = [](float w, ParamKind kind) {
        return Parameter<float>("p", kind, Tensor<float>({1}, {w}));
    };

    SECTION("zero grad, zero decay: parameters unchanged") {
        cfg.weight_decay = 0.0;
        std::vector<Parameter<float>> ps = {scalar_param(1.25f, ParamKind::weight)};
        TrainState st = TrainState::fresh(ps, 1);
        adamw_step(ps, st, 0.1, cfg);
        CHECK(ps[0].value[0] == 1.25f);
    }
    SECTION("first step with unit gradient moves by about -lr") {
        cfg.weight_decay = 0.0;
        std::vector<Parameter<float>> ps = {scalar_param(0.0f, ParamKind::weight)};
        TrainState st = TrainState::fresh(ps, 1);
        ps[0].grad[0] = 1.0f;
        adamw_step(ps, st, 0.1, cfg);
        CHECK(std::fabs(ps[0].value[0] - (-0.1)) < 1e-6);  // m-hat = v-hat = 1
    }
    SECTION("decay-only update is w -= lr * decay * w, weights only") {
        cfg.weight_decay = 0.1;
        std::vector<Parameter<float>> ps = {scalar_param(2.0f, ParamKind::weight),
                                            scalar_param(2.0f, ParamKind::bias),
                                            scalar_param(2.0f, ParamKind::gain),
                                            scalar_param(2.0f, ParamKind::embedding)};
        TrainState st = TrainState::fresh(ps, 1);
        adamw_step(ps, st, 0.5, cfg);
        CHECK(ps[0].value[0] == Catch::Approx(2.0 - 0.5 * 0.1 * 2.0));
        for (int i = 1; i < 4; ++i) CHECK(ps[static_cast<size_t>(i)].value[0] == 2.0f);
    }
    SECTION("non-finite gradient is an error") {
        std::vector<Parameter<float>> ps = {scalar_param(0.0f, ParamKind::weight)};
        TrainState st = TrainState::fresh(ps, 1);
        ps[0].grad[0] = std::numeric_limits<float>::infinity();
        REQUIRE_THROWS_WITH(adamw_step(ps, st, 0.1, cfg), Catch::Matchers::ContainsSubstring("non-finite"));
    }
}

TEST_CASE("janus_loss on declared examples") {
    SECTION("zeroed head gives exactly ln V, and alpha=0 makes total == ce") {
        JanusModel<double> m = JanusModel<double>::init(micro_model(5, 8, 1, 0.5));
        std::fill(m.p("head.w").value.data.begin(), m.p("head.w").value.data.end(), 0.0);
        std::fill(m.p("head.b").value.data.begin(), m.p("head.b").value.data.end(), 0.0);
        Tape<double> t;
        BoundModel<double> bm(t, m);
        LossBreakdown<double> loss = janus_loss(bm, batch_of({"ACGTACGT"}), 0.0);
        CHECK(loss.ce_value == Catch::Approx(std::log(7.0)).margin(1e-12));
        CHECK(t.val(loss.total)[0] == t.val(loss.ce)[0]);
    }
    SECTION("closed-form bias fit on a single-symbol corpus drives ce to zero") {
        JanusModel<double> m = JanusModel<double>::init(micro_model(5));
        std::fill(m.p("head.w").value.data.begin(), m.p("head.w").value.data.end(), 0.0);
        auto& b = m.p("head.b").value;
        for (long j = 0; j < 7; ++j) b[j] = j == Vocabulary::A ? 0.0 : -50.0;  // log of the empirical one-hot
        Tape<double> t;
        BoundModel<double> bm(t, m);
        LossBreakdown<double> loss = janus_loss(bm, batch_of({"AAAAAAAA"}), 0.0);
        CHECK(loss.ce_value < 1e-9);
    }
    SECTION("T=2 batch carries exactly two instances per sequence") {
        JanusModel<double> m = JanusModel<double>::init(micro_model(5));
        Tape<double> t;
        BoundModel<double> bm(t, m);
        LossBreakdown<double> loss = janus_loss(bm, batch_of({"AC", "GT"}), 0.2);
        CHECK(loss.per_instance.size() == 4);
        CHECK(loss.instances_included == 4);
    }
    SECTION("instances targeting PAD are excluded") {
        JanusModel<double> m = JanusModel<double>::init(micro_model(5));
        SequenceBatch b = batch_of({"ACG"});
        b.sequences[0].ids.push_back(Vocabulary::PAD);
        b.include[0].push_back(0);
        Tape<double> t;
        BoundModel<double> bm(t, m);
        LossBreakdown<double> loss = janus_loss(bm, b, 0.2);
        CHECK(loss.per_instance.size() == 6);
        CHECK(loss.instances_included == 5);  // the forward edge instance targets the PAD at position 3
        for (const auto& inst : loss.per_instance) CHECK(inst.included == (inst.position != 3));
    }
}

TEST_CASE("mlm_loss on declared examples") {
    SECTION("ceil(0.15 * 20) masks exactly 3 positions") {
        CHECK(mlm_mask_count(20, 0.15) == 3);
        CHECK(mlm_mask_count(128, 0.15) == 20);
    }
    SECTION("masked positions score the original token; unmasked logit rows get no gradient") {
        JanusModel<double> m = JanusModel<double>::init(micro_model(9, 8, 1, 0.0));
        SequenceBatch b = batch_of({"ACGTACGTACGTACGTACGT"});  // T=20 -> 3 masked
        Tape<double> t;
        BoundModel<double> bm(t, m);
        Rng rng(123);
        LossBreakdown<double> loss = mlm_loss(bm, b, 0.15, 0.0, rng);
        REQUIRE(loss.per_instance.size() == 3);

        // replay: corrupt the same positions, forward, score the original tokens
        std::vector<int> corrupted = b.sequences[0].ids;
        for (const auto& inst : loss.per_instance) corrupted[static_cast<size_t>(inst.position)] = Vocabulary::MASK;
        Tape<double> t2;
        BoundModel<double> bm2(t2, m);
        ForwardTrace<double> tr = model_forward(bm2, corrupted, full_mask(20));
        for (const auto& inst : loss.per_instance) {
            Var row = gather_rows(t2, tr.logits, {inst.position});
            std::vector<double> pi;
            {
                std::vector<double> tmp;
                Var ce = cross_entropy_mean(t2, row, {b.sequences[0].ids[static_cast<size_t>(inst.position)]});
                tmp.push_back(t2.val(ce)[0]);
                pi = tmp;
            }
            CHECK(pi[0] == Catch::Approx(inst.ce).margin(1e-12));
        }

        t.backward(loss.total);
        const Tensor<double>* glogits = t.maybe_grad(loss.logits_nodes[0]);
        REQUIRE(glogits != nullptr);
        std::set<long> masked;
        for (const auto& inst : loss.per_instance) masked.insert(inst.position);
        for (long row = 0; row < 40; ++row) {
            double mag = 0;
            for (long j = 0; j < 7; ++j) mag = std::max(mag, std::fabs(glogits->at(row, j)));
            if (masked.count(row)) CHECK(mag > 0.0);
            else CHECK(mag == 0.0);
        }
    }
    SECTION("janus batches never contain the MASK id") {
        auto recs = synth_corpus(SynthKind::markov3, 2, 3, 256);
        long skipped = 0;
        for (const SequenceBatch& b : chunk_dataset(recs, 32, 32, 4, &skipped))
            for (const TokenSequence& s : b.sequences)
                for (int id : s.ids) REQUIRE(id != Vocabulary::MASK);
    }
}

TEST_CASE("checkpoint round trip") {
    TempDir dir("ckpt");
    RunConfig cfg;
    cfg.model = micro_model(3, 8, 1, 0.5);
    cfg.train.seq_len = 16;
    cfg.train.steps = 4;
    JanusModel<float> m = JanusModel<float>::init(cfg.model);
    TrainState st = TrainState::fresh(m.params, cfg.train.seed);
    st.step = 7;
    st.last_ce = 1.25;
    st.rng.below(100);  // advance so the state is nontrivial
    const std::string p1 = dir.str() + "/a.jnsc";
    const std::string p2 = dir.str() + "/b.jnsc";

    SECTION("save -> load -> save is byte identical") {
        save_checkpoint(p1, cfg, m.params, &st);
        RawCheckpoint raw = load_checkpoint(p1);
        CHECK(raw.state.step == 7);
        CHECK(raw.state.rng == st.rng);
        JanusModel<float> m2 = JanusModel<float>::init(raw.cfg.model);
        restore_model(raw, m2);
        save_checkpoint(p2, raw.cfg, m2.params, &raw.state);
        CHECK(file_bytes(p1) == file_bytes(p2));
    }
    SECTION("bad magic and unsupported version are rejected") {
        save_checkpoint(p1, cfg, m.params, &st);
        std::string bytes = file_bytes(p1);
        std::string corrupted = bytes;
        corrupted[0] = 'X';
        std::ofstream(p2, std::ios::binary) << corrupted;
        REQUIRE_THROWS_WITH(load_checkpoint(p2), Catch::Matchers::ContainsSubstring("bad magic"));
        corrupted = bytes;
        corrupted[4] = 9;
        std::ofstream(p2, std::ios::binary | std::ios::trunc) << corrupted;
        REQUIRE_THROWS_WITH(load_checkpoint(p2), Catch::Matchers::ContainsSubstring("version"));
    }
    SECTION("truncated files are rejected") {
        save_checkpoint(p1, cfg, m.params, &st);
        std::string bytes = file_bytes(p1);
        std::ofstream(p2, std::ios::binary | std::ios::trunc) << bytes.substr(0, bytes.size() / 2);
        REQUIRE_THROWS_WITH(load_checkpoint(p2), Catch::Matchers::ContainsSubstring("truncated"));
    }
}

TEST_CASE("training is deterministic and resumable", "[slowish]") {
    RunConfig cfg;
    cfg.model = micro_model(11, 8, 1, 0.5);
    cfg.model.n_experts = 2;
    cfg.train.steps = 24;
    cfg.train.batch = 2;
    cfg.train.seq_len = 12;
    cfg.train.checkpoint_every = 8;
    cfg.train.seed = 21;
    cfg.data.records = 6;
    cfg.data.record_len = 240;
    auto recs = synth_corpus(SynthKind::markov3, cfg.data.seed, cfg.data.records, cfg.data.record_len);
    std::vector<TokenSequence> windows;
    for (const auto& r : recs) {
        auto w = chunk_record(r, cfg.train.seq_len, cfg.train.seq_len);
        windows.insert(windows.end(), w.begin(), w.end());
    }

    SECTION("same seed twice: bitwise identical checkpoints and metric streams") {
        TempDir d1("train-a"), d2("train-b");
        JanusModel<float> m1 = JanusModel<float>::init(cfg.model);
        TrainState s1 = TrainState::fresh(m1.params, cfg.train.seed);
        TrainResult r1 = train(m1, s1, cfg, windows, d1.str());
        JanusModel<float> m2 = JanusModel<float>::init(cfg.model);
        TrainState s2 = TrainState::fresh(m2.params, cfg.train.seed);
        TrainResult r2 = train(m2, s2, cfg, windows, d2.str());
        REQUIRE_FALSE(r1.aborted);
        CHECK(file_bytes(d1.str() + "/ckpt-final.jnsc") == file_bytes(d2.str() + "/ckpt-final.jnsc"));
        auto l1 = file_lines(d1.str() + "/metrics.csv"), l2 = file_lines(d2.str() + "/metrics.csv");
        REQUIRE(l1.size() == l2.size());
        for (size_t i = 0; i < l1.size(); ++i) CHECK(strip_tps(l1[i]) == strip_tps(l2[i]));
    }
    SECTION("resume at a checkpoint equals the uninterrupted run") {
        TempDir d1("full"), d2("resumed");
        JanusModel<float> m1 = JanusModel<float>::init(cfg.model);
        TrainState s1 = TrainState::fresh(m1.params, cfg.train.seed);
        train(m1, s1, cfg, windows, d1.str());

        auto [m2, s2] = load_model(d1.str() + "/ckpt-8.jnsc");
        REQUIRE(s2.step == 8);
        train(m2, s2, cfg, windows, d2.str());
        CHECK(file_bytes(d1.str() + "/ckpt-final.jnsc") == file_bytes(d2.str() + "/ckpt-final.jnsc"));

        auto full = file_lines(d1.str() + "/metrics.csv");
        auto resumed = file_lines(d2.str() + "/metrics.csv");
        REQUIRE(full.size() == 25);     // header + 24 rows
        REQUIRE(resumed.size() == 17);  // header + rows 9..24
        for (size_t i = 0; i < 16; ++i) CHECK(strip_tps(resumed[i + 1]) == strip_tps(full[i + 9]));
    }
    SECTION("perplexity column is exp(ce) on every row") {
        TempDir d("ppl");
        JanusModel<float> m = JanusModel<float>::init(cfg.model);
        TrainState s = TrainState::fresh(m.params, cfg.train.seed);
        TrainResult r = train(m, s, cfg, windows, d.str());
        for (const MetricsRow& row : r.metrics) CHECK(row.ppl == Catch::Approx(std::exp(row.ce)).epsilon(1e-12));
    }
}

TEST_CASE("a tiny model memorizes a single-symbol corpus in 200 steps", "[slowish]") {
    RunConfig cfg;
    cfg.model = micro_model(31, 8, 1, 0.0);
    cfg.train.steps = 200;
    cfg.train.batch = 2;
    cfg.train.seq_len = 16;
    cfg.train.checkpoint_every = 200;
    cfg.train.peak_lr = 8e-3;
    std::vector<FastaRecord> recs = {{"a", std::string(400, 'A')}, {"b", std::string(400, 'A')}};
    std::vector<TokenSequence> windows;
    for (const auto& r : recs) {
        auto w = chunk_record(r, cfg.train.seq_len, cfg.train.seq_len);
        windows.insert(windows.end(), w.begin(), w.end());
    }
    TempDir d("single");
    JanusModel<float> m = JanusModel<float>::init(cfg.model);
    TrainState s = TrainState::fresh(m.params, cfg.train.seed);
    TrainResult r = train(m, s, cfg, windows, d.str());
    REQUIRE_FALSE(r.aborted);
    CHECK(r.metrics.back().ce < 0.05);
}
