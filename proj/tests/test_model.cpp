#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <set>
#include <unistd.h>

#include "damgt/mask.hpp"
#include "damgt/model.hpp"
#include "damgt/rng.hpp"
#include "support/reference.hpp"

namespace fs = std::filesystem;
using namespace damgt;

namespace {

TensorPtr<double> randn(std::vector<std::size_t> shape, std::uint64_t seed, bool rg = true,
                        double scale = 1.0) {
    Rng rng(derive_seed(seed, 0x3dfu));
    auto t = make_tensor<double>(std::move(shape), rg);
    for (auto& v : t->values) v = scale * normal_double(rng);
    return t;
}

using Pair = std::pair<std::size_t, std::size_t>;

std::set<Pair> pair_set(const AttentionPattern& p) {
    const auto v = p.allowed_pairs();
    return std::set<Pair>(v.begin(), v.end());
}

ModelConfig toy_config(std::size_t s = 2, std::size_t dm = 8, std::size_t heads = 2,
                       std::size_t layers = 1, std::size_t width = 6, std::size_t classes = 3) {
    ModelConfig cfg;
    cfg.max_hop = s;
    cfg.d_model = dm;
    cfg.heads = heads;
    cfg.layers = layers;
    cfg.input_width = width;
    cfg.classes = classes;
    cfg.keep_prob = 1.0;  // deterministic paths for oracle comparisons
    return cfg;
}

}  // namespace

TEST_CASE("mask patterns: enumerated examples") {
    const auto full2 = build_mask(2, MaskVariant::full);
    CHECK(pair_set(full2) ==
          std::set<Pair>{{0, 0}, {0, 1}, {0, 2}, {1, 0}, {1, 1}, {2, 0}, {2, 2}});
    CHECK(full2.allowed_count() == 7);

    const auto d2 = build_mask(2, MaskVariant::d);
    CHECK(pair_set(d2) == std::set<Pair>{{0, 0}, {0, 1}, {0, 2}, {1, 0}, {2, 0}});

    const auto h2 = build_mask(2, MaskVariant::h);
    CHECK(pair_set(h2) == std::set<Pair>{{0, 0}, {1, 0}, {2, 0}, {1, 1}, {2, 2}});

    const auto v2 = build_mask(2, MaskVariant::v);
    CHECK(pair_set(v2) == std::set<Pair>{{0, 0}, {0, 1}, {0, 2}, {1, 1}, {2, 2}});

    const auto none2 = build_mask(2, MaskVariant::none);
    CHECK(none2.allowed_count() == 9);
}

TEST_CASE("mask patterns: full variant has 3S+1 entries and i*j==0 or i==j shape") {
    for (std::size_t s = 1; s <= 20; ++s) {
        const auto p = build_mask(s, MaskVariant::full);
        CHECK(p.allowed_count() == 3 * s + 1);
        for (std::size_t i = 0; i <= s; ++i) {
            for (std::size_t j = 0; j <= s; ++j) {
                CHECK(p.allows(i, j) == (i * j == 0 || i == j));
            }
        }
    }
    CHECK_THROWS_AS(parse_mask_variant("diag"), ConfigError);
}

TEST_CASE("dense masked attention: zero Q,K gives uniform permitted rows") {
    const std::size_t s = 2, t = s + 1, dm = 4, da = 2;
    auto h = randn({1, t, dm}, 1, false);
    auto wq = make_tensor<double>({dm, da});  // zeros
    auto wk = make_tensor<double>({dm, da});
    auto wv = randn({dm, da}, 2);
    const auto pattern = build_mask(s, MaskVariant::full);
    Tape<double> tape;
    std::vector<double> probs;
    masked_attention_dense(tape, h, wq, wk, wv, pattern, &probs);
    REQUIRE(probs.size() == t * t);
    // Row 0 uniform over S+1; row i>0 splits 0.5/0.5 between columns 0 and i.
    for (std::size_t j = 0; j < t; ++j) CHECK(std::abs(probs[j] - 1.0 / t) < 1e-12);
    for (std::size_t i = 1; i < t; ++i) {
        CHECK(std::abs(probs[i * t] - 0.5) < 1e-12);
        CHECK(std::abs(probs[i * t + i] - 0.5) < 1e-12);
    }
}

TEST_CASE("dense masked attention matches the scalar -inf oracle") {
    const std::size_t s = 4, t = s + 1, dm = 6, da = 3;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto h = randn({1, t, dm}, 100 + seed, false);
        auto wq = randn({dm, da}, 200 + seed);
        auto wk = randn({dm, da}, 300 + seed);
        auto wv = randn({dm, da}, 400 + seed);
        const auto pattern = build_mask(s, MaskVariant::full);

        Tape<double> tape;
        std::vector<double> probs;
        auto out = masked_attention_dense(tape, h, wq, wk, wv, pattern, &probs);

        ref::Mat m_prime;
        const auto expected = ref::masked_attention(ref::from_tensor(h), ref::from_tensor(wq),
                                                    ref::from_tensor(wk), ref::from_tensor(wv),
                                                    pattern, &m_prime);
        for (std::size_t i = 0; i < t; ++i) {
            for (std::size_t j = 0; j < da; ++j) {
                CHECK(std::abs(out->values[i * da + j] - expected[i][j]) < 1e-12);
            }
            for (std::size_t j = 0; j < t; ++j) {
                CHECK(std::abs(probs[i * t + j] - m_prime[i][j]) < 1e-12);
            }
        }
    }
}

TEST_CASE("mask-structure property: off-pattern entries exactly zero, rows sum to one") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t s = 1 + uniform_index(rng, 8);
        const std::size_t t = s + 1, dm = 4 + uniform_index(rng, 5), da = 1 + uniform_index(rng, 4);
        auto h = randn({2, t, dm}, 1000 + trial, false);
        auto wq = randn({dm, da}, 2000 + trial);
        auto wk = randn({dm, da}, 3000 + trial);
        auto wv = randn({dm, da}, 4000 + trial);
        const auto pattern = build_mask(s, MaskVariant::full);
        Tape<double> tape;
        std::vector<double> probs;
        masked_attention_dense(tape, h, wq, wk, wv, pattern, &probs);
        for (std::size_t b = 0; b < 2; ++b) {
            for (std::size_t i = 0; i < t; ++i) {
                double row = 0.0;
                double target_mass = 0.0;
                for (std::size_t j = 0; j < t; ++j) {
                    const double p = probs[(b * t + i) * t + j];
                    if (!pattern.allows(i, j)) {
                        CHECK(p == 0.0);
                    } else {
                        CHECK(p > 0.0);
                    }
                    row += p;
                    if (i > 0 && (j == 0 || j == i)) target_mass += p;
                }
                CHECK(std::abs(row - 1.0) <= 1e-12);
                // Attention-diversion remedy: rows i>0 put all mass on {0, i}.
                if (i > 0) CHECK(std::abs(target_mass - 1.0) <= 1e-12);
            }
        }
    }
}

TEST_CASE("variant d: rows below 0 have a single permitted entry equal to 1") {
    const std::size_t s = 3, t = s + 1, dm = 4, da = 2;
    auto h = randn({1, t, dm}, 5, false);
    auto wq = randn({dm, da}, 6);
    auto wk = randn({dm, da}, 7);
    auto wv = randn({dm, da}, 8);
    const auto pattern = build_mask(s, MaskVariant::d);
    Tape<double> tape;
    std::vector<double> probs;
    masked_attention_dense(tape, h, wq, wk, wv, pattern, &probs);
    for (std::size_t i = 1; i < t; ++i) {
        CHECK(std::abs(probs[i * t] - 1.0) < 1e-15);
        for (std::size_t j = 1; j < t; ++j) CHECK(probs[i * t + j] == 0.0);
    }
}

TEST_CASE("sparse fast path equals dense for S in 1..20") {
    for (std::size_t s : {std::size_t{1}, std::size_t{2}, std::size_t{5}, std::size_t{12},
                          std::size_t{20}}) {
        const std::size_t t = s + 1, dm = 8, da = 4;
        auto h = randn({3, t, dm}, 50 + s, false);
        auto wq = randn({dm, da}, 60 + s);
        auto wk = randn({dm, da}, 70 + s);
        auto wv = randn({dm, da}, 80 + s);
        const auto pattern = build_mask(s, MaskVariant::full);

        Tape<double> td;
        std::vector<double> dense_probs;
        auto dense = masked_attention_dense(td, h, wq, wk, wv, pattern, &dense_probs);
        Tape<double> ts;
        std::vector<double> sparse_probs;
        auto sparse = masked_attention_sparse(ts, h, wq, wk, wv, pattern, &sparse_probs);

        REQUIRE(dense->shape == sparse->shape);
        for (std::size_t i = 0; i < dense->size(); ++i) {
            CHECK(std::abs(dense->values[i] - sparse->values[i]) < 1e-12);
        }
        for (std::size_t i = 0; i < dense_probs.size(); ++i) {
            CHECK(std::abs(dense_probs[i] - sparse_probs[i]) < 1e-12);
        }
    }
}

TEST_CASE("sparse fast path gradient equals dense gradient") {
    const std::size_t s = 6, t = s + 1, dm = 6, da = 3;
    auto h = randn({2, t, dm}, 90, false);
    const auto pattern = build_mask(s, MaskVariant::full);

    auto run = [&](bool sparse) {
        auto wq = randn({dm, da}, 91);
        auto wk = randn({dm, da}, 92);
        auto wv = randn({dm, da}, 93);
        Tape<double> tape;
        auto out = sparse ? masked_attention_sparse(tape, h, wq, wk, wv, pattern)
                          : masked_attention_dense(tape, h, wq, wk, wv, pattern);
        auto loss = tape.mean_reduce(tape.mul(out, out));
        tape.backward(loss);
        std::vector<double> grads;
        for (const auto& w : {wq, wk, wv}) grads.insert(grads.end(), w->grad.begin(), w->grad.end());
        return grads;
    };
    const auto gd = run(false);
    const auto gs = run(true);
    REQUIRE(gd.size() == gs.size());
    for (std::size_t i = 0; i < gd.size(); ++i) CHECK(std::abs(gd[i] - gs[i]) < 1e-10);
}

TEST_CASE("sparse path rejects non-star patterns") {
    const std::size_t t = 4, dm = 4, da = 2;
    auto h = randn({1, t, dm}, 95, false);
    auto wq = randn({dm, da}, 96);
    auto wk = randn({dm, da}, 97);
    auto wv = randn({dm, da}, 98);
    Tape<double> tape;
    CHECK_THROWS_AS(
        masked_attention_sparse(tape, h, wq, wk, wv, build_mask(3, MaskVariant::d)),
        UnsupportedPatternError);
}

TEST_CASE("sparse logit count is 3S+1 against dense (S+1)^2") {
    const auto p20 = build_mask(20, MaskVariant::full);
    CHECK(p20.allowed_count() == 61);
    CHECK((p20.extent() * p20.extent()) == 441);
    const auto p1 = build_mask(1, MaskVariant::full);
    CHECK(p1.allowed_count() == 4);
    CHECK(p1.extent() * p1.extent() == 4);
}

TEST_CASE("mma: single head equals per-head output times the projection") {
    const std::size_t s = 2, t = s + 1, dm = 6;
    auto cfg = toy_config(s, dm, /*heads=*/1);
    auto params = init_parameters<double>(cfg, 3);
    auto h = randn({2, t, dm}, 101, false);
    const auto pattern = build_mask(s, MaskVariant::full);
    const auto& lp = params.layers[0];

    Tape<double> tape;
    auto combined = mma(tape, h, lp, pattern, false);
    auto head = masked_attention_dense(tape, h, lp.wq[0], lp.wk[0], lp.wv[0], pattern);
    auto expected = tape.matmul(head, lp.wo);
    for (std::size_t i = 0; i < combined->size(); ++i) {
        CHECK(std::abs(combined->values[i] - expected->values[i]) < 1e-12);
    }
}

TEST_CASE("mma: all-allowed pattern reproduces standard multi-head attention") {
    const std::size_t s = 3, t = s + 1, dm = 8;
    auto cfg = toy_config(s, dm, /*heads=*/2);
    auto params = init_parameters<double>(cfg, 5);
    auto h = randn({1, t, dm}, 102, false);
    const auto& lp = params.layers[0];
    const auto none = build_mask(s, MaskVariant::none);

    Tape<double> tape;
    auto got = mma(tape, h, lp, none, false);

    // Plain multi-head attention oracle: softmax without any mask.
    ref::Mat cat;
    for (std::size_t hd = 0; hd < 2; ++hd) {
        ref::Mat oh = ref::masked_attention(ref::from_tensor(h), ref::from_tensor(lp.wq[hd]),
                                            ref::from_tensor(lp.wk[hd]), ref::from_tensor(lp.wv[hd]),
                                            none);
        cat = hd == 0 ? oh : ref::concat_cols(cat, oh);
    }
    const auto expected = ref::matmul(cat, ref::from_tensor(lp.wo));
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < dm; ++j) {
            CHECK(std::abs(got->values[i * dm + j] - expected[i][j]) < 1e-12);
        }
    }
}

TEST_CASE("mma: H=4 matches head-by-head oracle composition") {
    const std::size_t s = 3, t = s + 1, dm = 8;
    auto cfg = toy_config(s, dm, /*heads=*/4);
    auto params = init_parameters<double>(cfg, 7);
    auto h = randn({2, t, dm}, 103, false);
    const auto pattern = build_mask(s, MaskVariant::full);
    const auto& lp = params.layers[0];

    Tape<double> tape;
    auto got = mma(tape, h, lp, pattern, true);  // sparse path

    for (std::size_t b = 0; b < 2; ++b) {
        ref::Mat hb = ref::zeros(t, dm);
        for (std::size_t i = 0; i < t; ++i) {
            for (std::size_t j = 0; j < dm; ++j) hb[i][j] = h->values[(b * t + i) * dm + j];
        }
        ref::Mat expected = ref::mma(hb, lp, pattern);
        for (std::size_t i = 0; i < t; ++i) {
            for (std::size_t j = 0; j < dm; ++j) {
                CHECK(std::abs(got->values[(b * t + i) * dm + j] - expected[i][j]) < 1e-12);
            }
        }
    }
}

TEST_CASE("mma: permuting heads with matching W^o rows leaves the output unchanged") {
    const std::size_t s = 2, t = s + 1, dm = 8, heads = 4;
    auto cfg = toy_config(s, dm, heads);
    auto params = init_parameters<double>(cfg, 11);
    auto h = randn({1, t, dm}, 104, false);
    const auto pattern = build_mask(s, MaskVariant::full);
    auto& lp = params.layers[0];

    Tape<double> t1;
    auto base = mma(t1, h, lp, pattern, false);

    // Swap heads 0<->3 and the corresponding W^o row blocks.
    const std::size_t da = dm / heads;
    std::swap(lp.wq[0], lp.wq[3]);
    std::swap(lp.wk[0], lp.wk[3]);
    std::swap(lp.wv[0], lp.wv[3]);
    for (std::size_t r = 0; r < da; ++r) {
        for (std::size_t c = 0; c < dm; ++c) {
            std::swap(lp.wo->values[r * dm + c], lp.wo->values[(3 * da + r) * dm + c]);
        }
    }
    Tape<double> t2;
    auto permuted = mma(t2, h, lp, pattern, false);
    for (std::size_t i = 0; i < base->size(); ++i) {
        CHECK(std::abs(base->values[i] - permuted->values[i]) < 1e-12);
    }
}

TEST_CASE("transformer layer: zero weights reduce to the identity") {
    const std::size_t s = 2, t = s + 1, dm = 6;
    auto cfg = toy_config(s, dm, 2);
    auto params = init_parameters<double>(cfg, 13);
    auto& lp = params.layers[0];
    for (auto& w : {lp.wo, lp.ffn_w2}) {
        for (auto& v : w->values) v = 0.0;
    }
    auto z = randn({2, t, dm}, 105, false);
    const auto pattern = build_mask(s, MaskVariant::full);
    Tape<double> tape;
    auto out = transformer_layer(tape, z, lp, pattern, cfg, false);
    for (std::size_t i = 0; i < z->size(); ++i) CHECK(out->values[i] == z->values[i]);
}

TEST_CASE("transformer layer matches the scalar oracle") {
    const std::size_t s = 4, t = s + 1, dm = 8;
    auto cfg = toy_config(s, dm, 2);
    auto params = init_parameters<double>(cfg, 17);
    auto z = randn({1, t, dm}, 106, false);
    const auto pattern = build_mask(s, MaskVariant::full);
    Tape<double> tape;
    auto out = transformer_layer(tape, z, params.layers[0], pattern, cfg, false);
    const auto expected = ref::transformer_layer(ref::from_tensor(z), params.layers[0], pattern);
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < dm; ++j) {
            CHECK(std::abs(out->values[i * dm + j] - expected[i][j]) < 1e-12);
        }
    }
}

TEST_CASE("readout: S=1 adds the single hop with weight 1") {
    const std::size_t dm = 4;
    auto z = randn({2, 2, dm}, 107, false);
    auto w = randn({1, 2 * dm}, 108);
    Tape<double> tape;
    auto out = readout(tape, z, w);
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t j = 0; j < dm; ++j) {
            const double expected = z->values[(b * 2) * dm + j] + z->values[(b * 2 + 1) * dm + j];
            CHECK(std::abs(out->values[b * dm + j] - expected) < 1e-12);
        }
    }
}

TEST_CASE("readout: zero projection gives uniform hop weights") {
    const std::size_t s = 4, t = s + 1, dm = 3;
    auto z = randn({1, t, dm}, 109, false);
    auto w = make_tensor<double>({1, 2 * dm});  // zeros
    Tape<double> tape;
    auto out = readout(tape, z, w);
    for (std::size_t j = 0; j < dm; ++j) {
        double expected = z->values[j];
        for (std::size_t hop = 1; hop < t; ++hop) expected += z->values[hop * dm + j] / s;
        CHECK(std::abs(out->values[j] - expected) < 1e-12);
    }
}

TEST_CASE("readout matches the scalar oracle") {
    const std::size_t s = 3, t = s + 1, dm = 5;
    auto z = randn({2, t, dm}, 110, false);
    auto w = randn({1, 2 * dm}, 111);
    Tape<double> tape;
    auto out = readout(tape, z, w);
    for (std::size_t b = 0; b < 2; ++b) {
        ref::Mat zb = ref::zeros(t, dm);
        for (std::size_t i = 0; i < t; ++i) {
            for (std::size_t j = 0; j < dm; ++j) zb[i][j] = z->values[(b * t + i) * dm + j];
        }
        const auto expected = ref::readout(zb, ref::from_tensor(w));
        for (std::size_t j = 0; j < dm; ++j) {
            CHECK(std::abs(out->values[b * dm + j] - expected[j]) < 1e-12);
        }
    }
}

TEST_CASE("forward: shapes, finiteness, per-sequence independence") {
    auto cfg = toy_config(3, 8, 2, 2, 7, 4);
    auto params = init_parameters<double>(cfg, 19);
    auto tokens = randn({3, 4, 7}, 112, false);
    // Duplicate sequence 0 into sequence 2.
    for (std::size_t i = 0; i < 4 * 7; ++i) tokens->values[2 * 4 * 7 + i] = tokens->values[i];
    Tape<double> tape;
    auto logits = model_forward(tape, cfg, params, tokens, false);
    REQUIRE(logits->shape == std::vector<std::size_t>{3, 4});
    for (double v : logits->values) CHECK(std::isfinite(v));
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK(logits->values[j] == logits->values[2 * 4 + j]);  // no cross-sample interaction
    }
}

TEST_CASE("forward matches the scalar end-to-end oracle") {
    auto cfg = toy_config(2, 8, 2, 2, 6, 3);
    auto params = init_parameters<double>(cfg, 23);
    auto tokens = randn({5, 3, 6}, 113, false);
    Tape<double> tape;
    auto logits = model_forward(tape, cfg, params, tokens, false);
    for (std::size_t b = 0; b < 5; ++b) {
        ref::Mat seq = ref::zeros(3, 6);
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < 6; ++j) seq[i][j] = tokens->values[(b * 3 + i) * 6 + j];
        }
        const auto expected = ref::forward_single(seq, cfg, params);
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(std::abs(logits->values[b * 3 + j] - expected[j]) < 1e-10);
        }
    }
}

TEST_CASE("forward: token width mismatch is a configuration error") {
    auto cfg = toy_config(2, 8, 2, 1, 6, 3);
    auto params = init_parameters<double>(cfg, 29);
    auto tokens = randn({1, 3, 9}, 114, false);
    Tape<double> tape;
    CHECK_THROWS_AS(model_forward(tape, cfg, params, tokens, false), ConfigError);
}

TEST_CASE("end-to-end gradient check on a toy instance") {
    auto cfg = toy_config(2, 8, 2, 1, 6, 2);
    auto params = init_parameters<double>(cfg, 31);
    auto tokens = randn({5, 3, 6}, 115, false);
    const std::vector<int> targets{0, 1, 1, 0, 1};
    auto program = [&](Tape<double>& t) {
        auto logits = model_forward(t, cfg, params, tokens, false);
        return t.cross_entropy_logits(logits, targets);
    };
    params.for_each([&](const std::string& name, const TensorPtr<double>& p) {
        const double err = grad_check(program, p, 1e-5);
        INFO("parameter " << name);
        CHECK(err < 1e-4);
    });
}

TEST_CASE("checkpoint: save/load round-trip and mismatch detection") {
    static int counter = 0;
    const std::string path =
        (fs::temp_directory_path() /
         ("damgt_ckpt_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + ".dmgt"))
            .string();
    auto cfg = toy_config(2, 8, 2, 1, 6, 3);
    auto params = init_parameters<double>(cfg, 37);
    save_checkpoint(path, cfg, params);
    const auto back = load_checkpoint<double>(path);
    CHECK(back.config.d_model == cfg.d_model);
    CHECK(back.config.input_width == cfg.input_width);
    bool equal = true;
    auto mine = params.tensors();
    auto theirs = back.params.tensors();
    REQUIRE(mine.size() == theirs.size());
    for (std::size_t i = 0; i < mine.size(); ++i) equal = equal && mine[i]->values == theirs[i]->values;
    CHECK(equal);

    // A checkpoint trained at another width must be rejected on use.
    auto tokens = randn({1, 3, 9}, 116, false);
    Tape<double> tape;
    CHECK_THROWS_AS(model_forward(tape, back.config, back.params, tokens, false), ConfigError);
    fs::remove(path);
}

TEST_CASE("model config validation") {
    auto cfg = toy_config();
    cfg.heads = 3;  // does not divide d_model=8
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    auto cfg2 = toy_config();
    cfg2.attn = AttnImpl::sparse;
    CHECK(cfg2.use_sparse());
    cfg2.attn = AttnImpl::auto_pick;
    cfg2.mask = MaskVariant::d;
    CHECK(!cfg2.use_sparse());
}
