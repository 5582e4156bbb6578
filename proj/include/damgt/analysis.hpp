#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "damgt/encoding.hpp"
#include "damgt/error.hpp"
#include "damgt/graph.hpp"
#include "damgt/model.hpp"
#include "damgt/plot.hpp"
#include "damgt/sha256.hpp"
#include "damgt/tensor.hpp"
#include "damgt/tokenizer.hpp"
#include "damgt/training.hpp"

namespace damgt {

// --- attention dumps -----------------------------------------------------------

struct AttentionDump {
    std::size_t layers = 0, heads = 0, extent = 0;
    std::size_t node_count = 0;
    std::vector<std::vector<double>> matrices;  // layers*heads, extent^2, node-averaged

    const std::vector<double>& matrix(std::size_t layer, std::size_t head) const {
        return matrices[layer * heads + head];
    }
};

// Per-layer, per-head arithmetic mean of the attention matrix over the given
// node set, via the capture hook of the forward pass (eval mode).
template <class Real>
AttentionDump dump_attention(const ModelConfig& cfg, const ModelParameters<Real>& params,
                             const TokenLevels& levels, const std::vector<std::size_t>& ids) {
    if (ids.empty()) throw UndefinedMetricError("attention dump over an empty node set");
    AttentionCaptureSums cap;
    constexpr std::size_t kChunk = 512;
    for (std::size_t lo = 0; lo < ids.size(); lo += kChunk) {
        const std::size_t hi = std::min(ids.size(), lo + kChunk);
        std::vector<std::size_t> chunk(ids.begin() + static_cast<std::ptrdiff_t>(lo),
                                       ids.begin() + static_cast<std::ptrdiff_t>(hi));
        Tape<Real> tape;
        auto tokens = gather_tokens<Real>(levels, chunk, cfg.max_hop);
        model_forward(tape, cfg, params, tokens, /*training=*/false, &cap);
    }
    AttentionDump out;
    out.layers = cap.layers;
    out.heads = cap.heads;
    out.extent = cap.extent;
    out.node_count = cap.nodes_accumulated;
    for (std::size_t l = 0; l < cap.layers; ++l) {
        for (std::size_t h = 0; h < cap.heads; ++h) out.matrices.push_back(cap.mean(l, h));
    }
    return out;
}

inline void write_attention_csv(const std::string& path, const AttentionDump& dump) {
    AtomicFileWriter w{path};
    auto& os = w.stream();
    os << "layer,head,row,col,value\n";
    os.precision(17);
    for (std::size_t l = 0; l < dump.layers; ++l) {
        for (std::size_t h = 0; h < dump.heads; ++h) {
            const auto& m = dump.matrix(l, h);
            for (std::size_t i = 0; i < dump.extent; ++i) {
                for (std::size_t j = 0; j < dump.extent; ++j) {
                    os << l << "," << h << "," << i << "," << j << "," << m[i * dump.extent + j] << "\n";
                }
            }
        }
    }
    w.commit();
}

// One image per (layer, head), pattern "attn_L{layer}_H{head}.ppm".
inline void write_attention_heatmaps(const std::string& dir, const AttentionDump& dump) {
    for (std::size_t l = 0; l < dump.layers; ++l) {
        for (std::size_t h = 0; h < dump.heads; ++h) {
            const std::string path =
                dir + "/attn_L" + std::to_string(l) + "_H" + std::to_string(h) + ".ppm";
            write_heatmap_ppm(path, dump.matrix(l, h), dump.extent, dump.extent, /*vmax=*/1.0);
        }
    }
}

// --- ablation studies ------------------------------------------------------------

// Shared knobs for the repeat-run studies. Per run i, the training seed is
// train.seed + i; the split seed follows suit unless reseed_split_per_run is
// off.
struct StudyConfig {
    DualEncodingConfig encoding;
    ModelConfig model;
    TrainConfig train;
    double train_frac = 0.6, val_frac = 0.2, test_frac = 0.2;
    std::uint64_t split_seed = 42;
    std::size_t n_seeds = 5;
    bool reseed_split_per_run = true;
    unsigned workers = 1;
};

struct AblationRow {
    std::string variant;
    std::vector<double> per_seed_acc;
    double mean_acc = 0.0;
    double stdev = 0.0;
    double gain = 0.0;  // full-model mean minus this variant's mean
    std::string token_hash;  // hex digest of the token levels this variant trained on
};

struct AblationResult {
    std::string suite;
    std::vector<AblationRow> rows;  // row 0 is always the full model
};

namespace detail {

inline std::string hash_levels(const TokenLevels& levels) {
    Sha256 h;
    for (const auto& lv : levels.levels) {
        h.update(lv.data.data(), lv.data.size() * sizeof(double));
    }
    return hex_digest(h.finish());
}

template <class Real>
std::vector<double> repeat_runs(const TokenLevels& levels, const std::vector<int>& labels,
                                const ModelConfig& mcfg, const StudyConfig& study) {
    std::vector<double> accs;
    for (std::size_t i = 0; i < study.n_seeds; ++i) {
        TrainConfig tcfg = study.train;
        tcfg.seed = study.train.seed + i;
        const std::uint64_t split_seed = study.reseed_split_per_run ? study.split_seed + i : study.split_seed;
        const auto split = random_split(levels.n(), study.train_frac, study.val_frac,
                                        study.test_frac, split_seed);
        auto res = train<Real>(levels, labels, split, mcfg, tcfg);
        accs.push_back(res.report.test_acc);
    }
    return accs;
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double stdev_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

// Train the full model and each variant of the chosen suite under identical
// seeds, varying only the studied component. Suites: "mask" (full vs
// unmasked), "pe" (dual encoding vs ap-only, tp-only, none), "mask-variants"
// (full vs the h/v/d patterns).
template <class Real>
AblationResult run_ablation(const Graph& g, const std::string& suite, const StudyConfig& study) {
    struct Variant {
        std::string name;
        MaskVariant mask;
        PeVariant pe;
    };
    std::vector<Variant> variants;
    const MaskVariant base_mask = study.model.mask;
    const PeVariant base_pe = study.model.pe;
    if (suite == "mask") {
        variants = {{"full", MaskVariant::full, base_pe}, {"w/o mask", MaskVariant::none, base_pe}};
    } else if (suite == "pe") {
        variants = {{"dup", base_mask, PeVariant::dup},
                    {"w/o ap", base_mask, PeVariant::tp_only},
                    {"w/o tp", base_mask, PeVariant::ap_only},
                    {"w/o dup", base_mask, PeVariant::none}};
    } else if (suite == "mask-variants") {
        variants = {{"full", MaskVariant::full, base_pe},
                    {"h", MaskVariant::h, base_pe},
                    {"v", MaskVariant::v, base_pe},
                    {"d", MaskVariant::d, base_pe}};
    } else {
        throw ConfigError("unknown ablation suite \"" + suite + "\" (expected mask|pe|mask-variants)");
    }

    const auto adj = normalized_adjacency(g);

    // Token levels per pe variant actually used (mask suites share one).
    AblationResult out;
    out.suite = suite;
    std::vector<std::pair<PeVariant, TokenLevels>> level_cache;
    auto levels_for = [&](PeVariant pe) -> const TokenLevels& {
        for (const auto& [p, lv] : level_cache) {
            if (p == pe) return lv;
        }
        DualEncodingConfig ecfg = study.encoding;
        ecfg.variant = pe;
        const auto enc = dual_encoding(g, adj, ecfg);
        const auto xp = enhanced_features(g, enc);
        level_cache.emplace_back(pe, propagate_all(adj, xp, study.model.max_hop, study.workers));
        return level_cache.back().second;
    };

    for (const auto& v : variants) {
        ModelConfig mcfg = study.model;
        mcfg.mask = v.mask;
        mcfg.pe = v.pe;
        mcfg.input_width = 0;  // re-derive from the variant's token width
        const auto& levels = levels_for(v.pe);
        AblationRow row;
        row.variant = v.name;
        row.per_seed_acc = detail::repeat_runs<Real>(levels, g.labels, mcfg, study);
        row.mean_acc = detail::mean_of(row.per_seed_acc);
        row.stdev = detail::stdev_of(row.per_seed_acc);
        row.token_hash = detail::hash_levels(levels);
        out.rows.push_back(std::move(row));
    }
    const double full_mean = out.rows.front().mean_acc;
    for (auto& row : out.rows) row.gain = full_mean - row.mean_acc;
    return out;
}

inline void write_ablation_csv(const std::string& path, const AblationResult& result) {
    AtomicFileWriter w{path};
    auto& os = w.stream();
    os << "variant,accuracy,stdev,gain\n";
    os.precision(17);
    for (const auto& row : result.rows) {
        os << "\"" << row.variant << "\"," << row.mean_acc << "," << row.stdev << "," << row.gain << "\n";
    }
    w.commit();
}

// --- propagation-step sweep -------------------------------------------------------

struct SweepPoint {
    std::size_t s = 0;
    double test_acc = 0.0;
    double best_val_acc = 0.0;
};

struct SweepResult {
    std::vector<SweepPoint> points;
};

// One training run per S value under a shared seed. Token levels are built
// once at max(values); smaller S slices the level prefix.
template <class Real>
SweepResult sweep_propagation_steps(const Graph& g, const std::vector<std::size_t>& values,
                                    const StudyConfig& study) {
    if (values.empty()) throw ConfigError("sweep: need at least one S value");
    const std::size_t s_max = *std::max_element(values.begin(), values.end());
    const auto adj = normalized_adjacency(g);
    DualEncodingConfig ecfg = study.encoding;
    ecfg.variant = study.model.pe;
    const auto enc = dual_encoding(g, adj, ecfg);
    const auto xp = enhanced_features(g, enc);
    const auto levels = propagate_all(adj, xp, s_max, study.workers);
    const auto split =
        random_split(g.n, study.train_frac, study.val_frac, study.test_frac, study.split_seed);
    SweepResult out;
    for (std::size_t s : values) {
        ModelConfig mcfg = study.model;
        mcfg.max_hop = s;
        mcfg.input_width = 0;
        auto res = train<Real>(levels, g.labels, split, mcfg, study.train);
        out.points.push_back({s, res.report.test_acc, res.report.best_val_acc});
    }
    return out;
}

inline void write_sweep_csv(const std::string& path, const SweepResult& result) {
    AtomicFileWriter w{path};
    auto& os = w.stream();
    os << "S,test_acc,best_val_acc\n";
    os.precision(17);
    for (const auto& p : result.points) os << p.s << "," << p.test_acc << "," << p.best_val_acc << "\n";
    w.commit();
}

inline void write_sweep_plot(const std::string& path, const SweepResult& result) {
    std::vector<double> xs, ys;
    for (const auto& p : result.points) {
        xs.push_back(static_cast<double>(p.s));
        ys.push_back(p.test_acc);
    }
    write_line_svg(path, xs, ys, "accuracy vs propagation steps", "S", "test accuracy");
}

// --- attention micro-benchmark ------------------------------------------------------

struct BenchRow {
    std::size_t s = 0;
    double dense_ms = 0.0;   // median forward+backward wall time
    double sparse_ms = 0.0;
    std::size_t dense_logits = 0;   // (S+1)^2 per head-row-block
    std::size_t sparse_logits = 0;  // 3S+1
    double max_forward_diff = 0.0;  // dense-vs-sparse cross-check, before timing
};

struct BenchResult {
    std::size_t d_model = 0;
    std::size_t heads = 0;
    std::size_t batch = 0;
    std::vector<BenchRow> rows;
};

// Dense vs sparse attention timing at fixed d_model: forward+backward of the
// attention stage itself (scores, softmax, weighted values) on precomputed
// Q/K/V, which is exactly where the two paths differ. One block per
// (sequence, head). Correctness is cross-checked before timing; the logit
// counts are exact by construction.
template <class Real>
BenchResult bench_attention(const std::vector<std::size_t>& s_values, std::size_t d_model,
                            std::size_t trials, std::size_t heads = 8, std::size_t batch = 64) {
    if (trials < 1) throw ConfigError("bench: trials must be >= 1");
    if (heads < 1 || d_model % heads != 0) throw ConfigError("bench: heads must divide d_model");
    BenchResult out;
    out.d_model = d_model;
    out.heads = heads;
    out.batch = batch;
    Rng rng(derive_seed(0xbe9c4u));
    for (std::size_t s : s_values) {
        const std::size_t t = s + 1;
        const std::size_t da = d_model / heads;
        const std::size_t blocks = batch * heads;
        const auto pattern = build_mask(s, MaskVariant::full);
        auto q = make_tensor<Real>({blocks, t, da}, true);
        auto k = make_tensor<Real>({blocks, t, da}, true);
        auto v = make_tensor<Real>({blocks, t, da}, true);
        for (auto* p : {&q, &k, &v}) {
            for (auto& x : (*p)->values) x = static_cast<Real>(normal_double(rng));
        }
        const Real inv_sqrt = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(da)));

        auto dense_path = [&](Tape<Real>& tape) {
            auto scores = tape.scale(tape.bmm(q, k, /*trans_b=*/true), inv_sqrt);
            auto probs = tape.masked_softmax_last(scores, pattern.mask);
            return tape.bmm(probs, v, /*trans_b=*/false);
        };
        auto sparse_path = [&](Tape<Real>& tape) { return tape.star_attention(q, k, v); };

        BenchRow row;
        row.s = s;
        row.dense_logits = t * t;
        row.sparse_logits = 3 * s + 1;

        // Cross-check first.
        {
            Tape<Real> td;
            auto od = dense_path(td);
            Tape<Real> ts;
            auto osp = sparse_path(ts);
            double diff = 0.0;
            for (std::size_t i = 0; i < od->size(); ++i) {
                diff = std::max(diff, std::abs(static_cast<double>(od->values[i] - osp->values[i])));
            }
            row.max_forward_diff = diff;
        }

        auto time_path = [&](bool sparse) {
            std::vector<double> times;
            for (std::size_t trial = 0; trial < trials; ++trial) {
                q->zero_grad();
                k->zero_grad();
                v->zero_grad();
                const auto t0 = std::chrono::steady_clock::now();
                Tape<Real> tape;
                auto o = sparse ? sparse_path(tape) : dense_path(tape);
                auto loss = tape.mean_reduce(tape.mul(o, o));
                tape.backward(loss);
                const auto t1 = std::chrono::steady_clock::now();
                times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
            }
            std::sort(times.begin(), times.end());
            const std::size_t n = times.size();
            return n % 2 ? times[n / 2] : 0.5 * (times[n / 2 - 1] + times[n / 2]);
        };
        row.dense_ms = time_path(false);
        row.sparse_ms = time_path(true);
        out.rows.push_back(row);
    }
    return out;
}

inline void write_bench_csv(const std::string& path, const BenchResult& result) {
    AtomicFileWriter w{path};
    auto& os = w.stream();
    os << "S,dense_ms,sparse_ms,dense_logits,sparse_logits,max_forward_diff\n";
    os.precision(17);
    for (const auto& r : result.rows) {
        os << r.s << "," << r.dense_ms << "," << r.sparse_ms << "," << r.dense_logits << ","
           << r.sparse_logits << "," << r.max_forward_diff << "\n";
    }
    w.commit();
}

}  // namespace damgt
