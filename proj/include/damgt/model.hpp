#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "damgt/binio.hpp"
#include "damgt/encoding.hpp"
#include "damgt/error.hpp"
#include "damgt/mask.hpp"
#include "damgt/rng.hpp"
#include "damgt/tensor.hpp"

namespace damgt {

enum class AttnImpl { auto_pick, dense, sparse };

inline std::string to_string(AttnImpl a) {
    switch (a) {
        case AttnImpl::auto_pick: return "auto";
        case AttnImpl::dense: return "dense";
        case AttnImpl::sparse: return "sparse";
    }
    return "auto";
}

inline AttnImpl parse_attn_impl(const std::string& s) {
    if (s == "auto") return AttnImpl::auto_pick;
    if (s == "dense") return AttnImpl::dense;
    if (s == "sparse") return AttnImpl::sparse;
    throw ConfigError("unknown attention implementation \"" + s + "\" (expected auto|dense|sparse)");
}

struct ModelConfig {
    std::size_t max_hop = 3;       // S
    std::size_t d_model = 128;     // d_m
    std::size_t layers = 1;        // L
    std::size_t heads = 8;         // H
    std::size_t d_ff = 0;          // 0 -> 2 * d_model
    std::size_t d_head_hidden = 0; // 0 -> d_model / 2
    double keep_prob = 0.9;
    MaskVariant mask = MaskVariant::full;
    PeVariant pe = PeVariant::dup;
    AttnImpl attn = AttnImpl::auto_pick;
    std::size_t input_width = 0;   // 2d + m for the full dual encoding
    std::size_t classes = 0;

    std::size_t ffn_width() const { return d_ff ? d_ff : 2 * d_model; }
    std::size_t head_hidden() const { return d_head_hidden ? d_head_hidden : std::max<std::size_t>(1, d_model / 2); }
    std::size_t d_attn() const { return d_model / heads; }

    void validate() const {
        if (max_hop < 1) throw ConfigError("model: S must be >= 1");
        if (heads < 1 || d_model % heads != 0) {
            throw ConfigError("model: heads must divide d_model (" + std::to_string(heads) + " vs " +
                              std::to_string(d_model) + ")");
        }
        if (layers < 1) throw ConfigError("model: need at least one layer");
        if (!(keep_prob > 0.0) || keep_prob > 1.0) throw ConfigError("model: keep_prob must be in (0, 1]");
        if (input_width == 0) throw ConfigError("model: input width is unset");
        if (classes < 1) throw ConfigError("model: class count is unset");
    }

    // Whether the sparse fast path runs: requested explicitly or picked
    // automatically for the star+diagonal pattern.
    bool use_sparse() const {
        if (attn == AttnImpl::dense) return false;
        if (attn == AttnImpl::sparse) return true;
        return mask == MaskVariant::full;
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"S", max_hop},
                              {"d_model", d_model},
                              {"layers", layers},
                              {"heads", heads},
                              {"d_ff", d_ff},
                              {"d_head_hidden", d_head_hidden},
                              {"keep_prob", keep_prob},
                              {"mask", damgt::to_string(mask)},
                              {"pe", damgt::to_string(pe)},
                              {"attn", damgt::to_string(attn)},
                              {"input_width", input_width},
                              {"classes", classes}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.max_hop = j.value("S", c.max_hop);
        c.d_model = j.value("d_model", c.d_model);
        c.layers = j.value("layers", c.layers);
        c.heads = j.value("heads", c.heads);
        c.d_ff = j.value("d_ff", c.d_ff);
        c.d_head_hidden = j.value("d_head_hidden", c.d_head_hidden);
        c.keep_prob = j.value("keep_prob", c.keep_prob);
        c.mask = parse_mask_variant(j.value("mask", std::string("full")));
        c.pe = parse_pe_variant(j.value("pe", std::string("dup")));
        c.attn = parse_attn_impl(j.value("attn", std::string("auto")));
        c.input_width = j.value("input_width", c.input_width);
        c.classes = j.value("classes", c.classes);
        return c;
    }
};

template <class Real>
struct LayerParams {
    TensorPtr<Real> ln1_gain, ln1_bias;
    std::vector<TensorPtr<Real>> wq, wk, wv;  // one (d_model, d_attn) each per head
    TensorPtr<Real> wo;                       // (heads * d_attn, d_model)
    TensorPtr<Real> ln2_gain, ln2_bias;
    TensorPtr<Real> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

template <class Real>
struct ModelParameters {
    TensorPtr<Real> proj;  // (input_width, d_model)
    std::vector<LayerParams<Real>> layers;
    TensorPtr<Real> readout_w;  // (1, 2 * d_model)
    TensorPtr<Real> head_w1, head_b1, head_w2, head_b2;

    // Canonical (name, tensor) iteration order; checkpoints, the optimizer
    // and gradient merging all follow it.
    void for_each(const std::function<void(const std::string&, const TensorPtr<Real>&)>& fn) const {
        fn("proj.W", proj);
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& lp = layers[l];
            const std::string p = "layer" + std::to_string(l) + ".";
            fn(p + "ln1.gain", lp.ln1_gain);
            fn(p + "ln1.bias", lp.ln1_bias);
            for (std::size_t h = 0; h < lp.wq.size(); ++h) {
                fn(p + "attn.q" + std::to_string(h), lp.wq[h]);
                fn(p + "attn.k" + std::to_string(h), lp.wk[h]);
                fn(p + "attn.v" + std::to_string(h), lp.wv[h]);
            }
            fn(p + "attn.out", lp.wo);
            fn(p + "ln2.gain", lp.ln2_gain);
            fn(p + "ln2.bias", lp.ln2_bias);
            fn(p + "ffn.w1", lp.ffn_w1);
            fn(p + "ffn.b1", lp.ffn_b1);
            fn(p + "ffn.w2", lp.ffn_w2);
            fn(p + "ffn.b2", lp.ffn_b2);
        }
        fn("readout.W", readout_w);
        fn("head.w1", head_w1);
        fn("head.b1", head_b1);
        fn("head.w2", head_w2);
        fn("head.b2", head_b2);
    }

    std::vector<TensorPtr<Real>> tensors() const {
        std::vector<TensorPtr<Real>> out;
        for_each([&](const std::string&, const TensorPtr<Real>& t) { out.push_back(t); });
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for_each([&](const std::string&, const TensorPtr<Real>& t) { n += t->size(); });
        return n;
    }

    void zero_grad() const {
        for_each([](const std::string&, const TensorPtr<Real>& t) {
            const_cast<Tensor<Real>&>(*t).zero_grad();
        });
    }

    ModelParameters clone() const {
        ModelParameters out;
        out.proj = copy_of(proj);
        out.layers.resize(layers.size());
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const auto& src = layers[l];
            auto& dst = out.layers[l];
            dst.ln1_gain = copy_of(src.ln1_gain);
            dst.ln1_bias = copy_of(src.ln1_bias);
            for (const auto& t : src.wq) dst.wq.push_back(copy_of(t));
            for (const auto& t : src.wk) dst.wk.push_back(copy_of(t));
            for (const auto& t : src.wv) dst.wv.push_back(copy_of(t));
            dst.wo = copy_of(src.wo);
            dst.ln2_gain = copy_of(src.ln2_gain);
            dst.ln2_bias = copy_of(src.ln2_bias);
            dst.ffn_w1 = copy_of(src.ffn_w1);
            dst.ffn_b1 = copy_of(src.ffn_b1);
            dst.ffn_w2 = copy_of(src.ffn_w2);
            dst.ffn_b2 = copy_of(src.ffn_b2);
        }
        out.readout_w = copy_of(readout_w);
        out.head_w1 = copy_of(head_w1);
        out.head_b1 = copy_of(head_b1);
        out.head_w2 = copy_of(head_w2);
        out.head_b2 = copy_of(head_b2);
        return out;
    }

    void copy_values_from(const ModelParameters& other) {
        auto mine = tensors();
        auto theirs = other.tensors();
        if (mine.size() != theirs.size()) throw ShapeError("parameter sets differ in tensor count");
        for (std::size_t i = 0; i < mine.size(); ++i) mine[i]->values = theirs[i]->values;
    }

  private:
    static TensorPtr<Real> copy_of(const TensorPtr<Real>& t) {
        auto c = make_tensor<Real>(t->shape, t->requires_grad);
        c->values = t->values;
        return c;
    }
};

namespace detail {

template <class Real>
TensorPtr<Real> xavier(Rng& rng, std::size_t fan_in, std::size_t fan_out,
                       std::vector<std::size_t> shape) {
    auto t = make_tensor<Real>(std::move(shape), true);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : t->values) v = static_cast<Real>((2.0 * uniform_double(rng) - 1.0) * limit);
    return t;
}

template <class Real>
TensorPtr<Real> filled(std::vector<std::size_t> shape, Real value) {
    auto t = make_tensor<Real>(std::move(shape), true);
    for (auto& v : t->values) v = value;
    return t;
}

}  // namespace detail

// Xavier-uniform weights, zero biases, unit layer-norm gains; a single seeded
// stream drawn in canonical parameter order.
template <class Real>
ModelParameters<Real> init_parameters(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(derive_seed(seed, 0x696e6974u));  // "init"
    const std::size_t dm = cfg.d_model, da = cfg.d_attn(), dff = cfg.ffn_width();
    const std::size_t dh = cfg.head_hidden();
    ModelParameters<Real> p;
    p.proj = detail::xavier<Real>(rng, cfg.input_width, dm, {cfg.input_width, dm});
    p.layers.resize(cfg.layers);
    for (auto& lp : p.layers) {
        lp.ln1_gain = detail::filled<Real>({dm}, Real(1));
        lp.ln1_bias = detail::filled<Real>({dm}, Real(0));
        for (std::size_t h = 0; h < cfg.heads; ++h) {
            lp.wq.push_back(detail::xavier<Real>(rng, dm, da, {dm, da}));
            lp.wk.push_back(detail::xavier<Real>(rng, dm, da, {dm, da}));
            lp.wv.push_back(detail::xavier<Real>(rng, dm, da, {dm, da}));
        }
        lp.wo = detail::xavier<Real>(rng, cfg.heads * da, dm, {cfg.heads * da, dm});
        lp.ln2_gain = detail::filled<Real>({dm}, Real(1));
        lp.ln2_bias = detail::filled<Real>({dm}, Real(0));
        lp.ffn_w1 = detail::xavier<Real>(rng, dm, dff, {dm, dff});
        lp.ffn_b1 = detail::filled<Real>({dff}, Real(0));
        lp.ffn_w2 = detail::xavier<Real>(rng, dff, dm, {dff, dm});
        lp.ffn_b2 = detail::filled<Real>({dm}, Real(0));
    }
    p.readout_w = detail::xavier<Real>(rng, 2 * dm, 1, {1, 2 * dm});
    p.head_w1 = detail::xavier<Real>(rng, dm, dh, {dm, dh});
    p.head_b1 = detail::filled<Real>({dh}, Real(0));
    p.head_w2 = detail::xavier<Real>(rng, dh, cfg.classes, {dh, cfg.classes});
    p.head_b2 = detail::filled<Real>({cfg.classes}, Real(0));
    return p;
}

// Per-(layer, head) running mean of attention probability blocks, used by the
// attention-dump study.
struct AttentionCaptureSums {
    std::size_t layers = 0, heads = 0, extent = 0;
    std::vector<std::vector<double>> sums;  // layers*heads matrices, extent^2 each
    std::size_t nodes_accumulated = 0;

    void configure(std::size_t l, std::size_t h, std::size_t t) {
        layers = l;
        heads = h;
        extent = t;
        sums.assign(l * h, std::vector<double>(t * t, 0.0));
        nodes_accumulated = 0;
    }

    template <class Real>
    void accumulate(std::size_t layer, std::size_t head, const std::vector<Real>& blocks,
                    std::size_t batch) {
        auto& s = sums[layer * heads + head];
        for (std::size_t b = 0; b < batch; ++b) {
            const Real* block = blocks.data() + b * extent * extent;
            for (std::size_t i = 0; i < extent * extent; ++i) s[i] += static_cast<double>(block[i]);
        }
    }

    std::vector<double> mean(std::size_t layer, std::size_t head) const {
        std::vector<double> m = sums[layer * heads + head];
        if (nodes_accumulated > 0) {
            for (double& v : m) v /= static_cast<double>(nodes_accumulated);
        }
        return m;
    }
};

// Single-head mask-aware attention, dense reference path: scores are computed
// for the whole (S+1)^2 grid, masked softmax zeroes the disallowed entries.
template <class Real>
TensorPtr<Real> masked_attention_dense(Tape<Real>& tape, const TensorPtr<Real>& h,
                                       const TensorPtr<Real>& wq, const TensorPtr<Real>& wk,
                                       const TensorPtr<Real>& wv, const AttentionPattern& pattern,
                                       std::vector<Real>* capture = nullptr) {
    const std::size_t da = wq->shape[1];
    auto q = tape.matmul(h, wq);
    auto k = tape.matmul(h, wk);
    auto v = tape.matmul(h, wv);
    auto scores = tape.bmm(q, k, /*trans_b=*/true);
    auto scaled = tape.scale(scores, static_cast<Real>(1.0 / std::sqrt(static_cast<double>(da))));
    auto probs = tape.masked_softmax_last(scaled, pattern.mask);
    if (capture) *capture = probs->values;
    return tape.bmm(probs, v, /*trans_b=*/false);
}

// Single-head fast path for the star+diagonal pattern only: touches the 3S+1
// permitted logits instead of the full (S+1)^2 grid.
template <class Real>
TensorPtr<Real> masked_attention_sparse(Tape<Real>& tape, const TensorPtr<Real>& h,
                                        const TensorPtr<Real>& wq, const TensorPtr<Real>& wk,
                                        const TensorPtr<Real>& wv, const AttentionPattern& pattern,
                                        std::vector<Real>* capture = nullptr) {
    if (!pattern.is_star_diagonal()) {
        throw UnsupportedPatternError(
            "sparse attention requires the star+diagonal pattern; variant \"" +
            to_string(pattern.variant) + "\" runs on the dense path");
    }
    auto q = tape.matmul(h, wq);
    auto k = tape.matmul(h, wk);
    auto v = tape.matmul(h, wv);
    return tape.star_attention(q, k, v, capture);
}

// Mask-aware multi-head self-attention: per-head attention, concatenation,
// output projection. The same pattern applies to every head.
template <class Real>
TensorPtr<Real> mma(Tape<Real>& tape, const TensorPtr<Real>& h, const LayerParams<Real>& lp,
                    const AttentionPattern& pattern, bool sparse,
                    AttentionCaptureSums* capture = nullptr, std::size_t layer_index = 0) {
    const std::size_t heads = lp.wq.size();
    TensorPtr<Real> cat;
    std::vector<Real> capture_buf;
    for (std::size_t hd = 0; hd < heads; ++hd) {
        std::vector<Real>* buf = capture ? &capture_buf : nullptr;
        auto oh = sparse ? masked_attention_sparse(tape, h, lp.wq[hd], lp.wk[hd], lp.wv[hd], pattern, buf)
                         : masked_attention_dense(tape, h, lp.wq[hd], lp.wk[hd], lp.wv[hd], pattern, buf);
        if (capture) capture->accumulate(layer_index, hd, capture_buf, h->shape[0]);
        cat = hd == 0 ? oh : tape.concat_last(cat, oh);
    }
    return tape.matmul(cat, lp.wo);
}

// Pre-norm residual block exactly as composed by the architecture:
// z' = MMA(LN(z)) + z ; out = FFN(LN(z')) + z'.
template <class Real>
TensorPtr<Real> transformer_layer(Tape<Real>& tape, const TensorPtr<Real>& z,
                                  const LayerParams<Real>& lp, const AttentionPattern& pattern,
                                  const ModelConfig& cfg, bool training,
                                  AttentionCaptureSums* capture = nullptr,
                                  std::size_t layer_index = 0) {
    auto x1 = tape.layer_norm(z, lp.ln1_gain, lp.ln1_bias);
    auto attn = mma(tape, x1, lp, pattern, cfg.use_sparse(), capture, layer_index);
    if (training) attn = tape.dropout(attn, cfg.keep_prob);
    auto z_mid = tape.add(z, attn);
    auto x2 = tape.layer_norm(z_mid, lp.ln2_gain, lp.ln2_bias);
    auto f1 = tape.add_rowvec(tape.matmul(x2, lp.ffn_w1), lp.ffn_b1);
    f1 = tape.gelu(f1);
    if (training) f1 = tape.dropout(f1, cfg.keep_prob);
    auto f2 = tape.add_rowvec(tape.matmul(f1, lp.ffn_w2), lp.ffn_b2);
    return tape.add(z_mid, f2);
}

// Attention-based readout: omega_s = softmax_{s in [1,S]}((Z_0 || Z_s) W^T),
// output = Z_0 + sum_s omega_s Z_s. Hop 0 is added unweighted; the softmax
// runs over hops 1..S only.
template <class Real>
TensorPtr<Real> readout(Tape<Real>& tape, const TensorPtr<Real>& z, const TensorPtr<Real>& w) {
    const std::size_t batch = z->shape[0], t = z->shape[1];
    std::vector<std::size_t> idx0(batch);
    for (std::size_t b = 0; b < batch; ++b) idx0[b] = b * t;
    auto z0 = tape.row_gather(z, idx0);
    auto wt = tape.transpose(w);
    TensorPtr<Real> scores;
    for (std::size_t s = 1; s < t; ++s) {
        std::vector<std::size_t> idx(batch);
        for (std::size_t b = 0; b < batch; ++b) idx[b] = b * t + s;
        auto zs = tape.row_gather(z, idx);
        auto sc = tape.matmul(tape.concat_last(z0, zs), wt);
        scores = s == 1 ? sc : tape.concat_last(scores, sc);
    }
    auto omega = tape.softmax_last(scores);
    return tape.hop_weighted_sum(z, omega);
}

// End-to-end forward: projection, L transformer layers, readout, MLP head.
template <class Real>
TensorPtr<Real> model_forward(Tape<Real>& tape, const ModelConfig& cfg,
                              const ModelParameters<Real>& params, const TensorPtr<Real>& tokens,
                              bool training, AttentionCaptureSums* capture = nullptr) {
    if (tokens->rank() != 3 || tokens->shape[1] != cfg.max_hop + 1) {
        throw ShapeError("model_forward: tokens " + shape_str(tokens->shape) +
                         " do not match S=" + std::to_string(cfg.max_hop));
    }
    if (tokens->shape[2] != cfg.input_width) {
        throw ConfigError("token width " + std::to_string(tokens->shape[2]) +
                          " does not match the configured projection input width " +
                          std::to_string(cfg.input_width));
    }
    if (capture) {
        if (capture->sums.empty()) capture->configure(cfg.layers, cfg.heads, cfg.max_hop + 1);
        capture->nodes_accumulated += tokens->shape[0];
    }
    const auto pattern = build_mask(cfg.max_hop, cfg.mask);
    auto z = tape.matmul(tokens, params.proj);
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        z = transformer_layer(tape, z, params.layers[l], pattern, cfg, training, capture, l);
    }
    auto pooled = readout(tape, z, params.readout_w);
    auto h1 = tape.relu(tape.add_rowvec(tape.matmul(pooled, params.head_w1), params.head_b1));
    return tape.add_rowvec(tape.matmul(h1, params.head_w2), params.head_b2);
}

// --- checkpoint file ----------------------------------------------------------
// magic "DMGT", u64 config-JSON length, config JSON, u64 tensor count, then per
// tensor: u64 name length, name, u64 rank, dims, f64-LE values. Values are
// stored double regardless of the training precision.

template <class Real>
void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                     const ModelParameters<Real>& params) {
    AtomicFileWriter w{path};
    auto& os = w.stream();
    os.write("DMGT", 4);
    const std::string cfg_json = cfg.to_json().dump();
    write_u64le(os, cfg_json.size());
    os.write(cfg_json.data(), static_cast<std::streamsize>(cfg_json.size()));
    std::size_t count = 0;
    params.for_each([&](const std::string&, const TensorPtr<Real>&) { ++count; });
    write_u64le(os, count);
    params.for_each([&](const std::string& name, const TensorPtr<Real>& t) {
        write_u64le(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u64le(os, t->rank());
        for (std::size_t d : t->shape) write_u64le(os, d);
        if constexpr (std::is_same_v<Real, double>) {
            write_f64_block(os, t->values);
        } else {
            for (Real v : t->values) write_f64le(os, static_cast<double>(v));
        }
    });
    w.commit();
}

template <class Real>
struct Checkpoint {
    ModelConfig config;
    ModelParameters<Real> params;
};

template <class Real>
Checkpoint<Real> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    expect_magic(is, "DMGT", "checkpoint");
    const std::size_t json_len = static_cast<std::size_t>(read_u64le(is));
    std::string cfg_json(json_len, '\0');
    is.read(cfg_json.data(), static_cast<std::streamsize>(json_len));
    if (!is) throw CorruptCacheError(path + ": truncated config block");
    ModelConfig cfg;
    try {
        cfg = ModelConfig::from_json(nlohmann::json::parse(cfg_json));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptCacheError(path + ": bad config JSON: " + e.what());
    }
    Checkpoint<Real> out{cfg, init_parameters<Real>(cfg, 0)};
    const std::size_t count = static_cast<std::size_t>(read_u64le(is));
    std::size_t expected = 0;
    out.params.for_each([&](const std::string&, const TensorPtr<Real>&) { ++expected; });
    if (count != expected) {
        throw ConfigError(path + ": checkpoint holds " + std::to_string(count) +
                          " tensors but the config implies " + std::to_string(expected));
    }
    std::vector<std::pair<std::string, TensorPtr<Real>>> order;
    out.params.for_each([&](const std::string& n, const TensorPtr<Real>& t) { order.emplace_back(n, t); });
    for (auto& [name, tensor] : order) {
        const std::size_t name_len = static_cast<std::size_t>(read_u64le(is));
        std::string got(name_len, '\0');
        is.read(got.data(), static_cast<std::streamsize>(name_len));
        if (!is) throw CorruptCacheError(path + ": truncated tensor record");
        if (got != name) {
            throw ConfigError(path + ": tensor \"" + got + "\" where \"" + name + "\" was expected");
        }
        const std::size_t rank = static_cast<std::size_t>(read_u64le(is));
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(read_u64le(is));
        if (shape != tensor->shape) {
            throw ConfigError(path + ": tensor \"" + name + "\" has shape " + shape_str(shape) +
                              " but the config implies " + shape_str(tensor->shape));
        }
        if constexpr (std::is_same_v<Real, double>) {
            read_f64_block(is, tensor->values);
        } else {
            for (auto& v : tensor->values) v = static_cast<Real>(read_f64le(is));
        }
    }
    return out;
}

}  // namespace damgt
