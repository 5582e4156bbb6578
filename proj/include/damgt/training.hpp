#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "damgt/error.hpp"
#include "damgt/graph.hpp"
#include "damgt/model.hpp"
#include "damgt/rng.hpp"
#include "damgt/tensor.hpp"
#include "damgt/tokenizer.hpp"

namespace damgt {

struct TrainConfig {
    double learning_rate = 5e-3;
    double weight_decay = 5e-5;
    std::size_t batch_size = 2000;
    std::size_t max_epochs = 200;
    std::size_t patience = 50;  // epochs without val improvement
    std::uint64_t seed = 1;
    int precision = 64;  // 64 or 32

    void validate() const {
        if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (patience < 1) throw ConfigError("patience must be >= 1");
        if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
        if (precision != 64 && precision != 32) throw ConfigError("precision must be 64 or 32");
    }

    nlohmann::json to_json() const {
        return nlohmann::json{{"learning_rate", learning_rate}, {"weight_decay", weight_decay},
                              {"batch_size", batch_size},       {"max_epochs", max_epochs},
                              {"patience", patience},           {"seed", seed},
                              {"precision", precision}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.max_epochs = j.value("max_epochs", c.max_epochs);
        c.patience = j.value("patience", c.patience);
        c.seed = j.value("seed", c.seed);
        c.precision = j.value("precision", c.precision);
        return c;
    }
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_acc = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_acc = 0.0;
    double test_acc = 0.0;
    double test_macro_f1 = 0.0;
    bool diverged = false;
    double train_seconds = 0.0;
    double eval_seconds = 0.0;
};

// AdamW with decoupled weight decay: p -= lr * m_hat / (sqrt(v_hat) + eps),
// then p -= lr * wd * p. A zero-gradient parameter therefore decays by
// exactly (1 - lr * wd) per step.
template <class Real>
class AdamW {
  public:
    AdamW(std::vector<TensorPtr<Real>> params, double lr, double weight_decay)
        : params_(std::move(params)), lr_(lr), wd_(weight_decay) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i]->size(), Real(0));
            v_[i].assign(params_[i]->size(), Real(0));
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            p.ensure_grad();
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double g = static_cast<double>(p.grad[j]);
                const double m = kBeta1 * static_cast<double>(m_[i][j]) + (1.0 - kBeta1) * g;
                const double v = kBeta2 * static_cast<double>(v_[i][j]) + (1.0 - kBeta2) * g * g;
                m_[i][j] = static_cast<Real>(m);
                v_[i][j] = static_cast<Real>(v);
                const double m_hat = m / bc1;
                const double v_hat = v / bc2;
                double pj = static_cast<double>(p.values[j]);
                pj -= lr_ * m_hat / (std::sqrt(v_hat) + kEps);
                pj -= lr_ * wd_ * pj;
                p.values[j] = static_cast<Real>(pj);
            }
        }
    }

  private:
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;

    std::vector<TensorPtr<Real>> params_;
    std::vector<std::vector<Real>> m_;
    std::vector<std::vector<Real>> v_;
    double lr_;
    double wd_;
    std::size_t t_ = 0;
};

// Batch assembly: token sequences for the listed nodes as a (B, S+1, width)
// tensor. Uses the first s_max+1 levels, which equals a propagation run with
// that smaller S.
template <class Real>
TensorPtr<Real> gather_tokens(const TokenLevels& levels, const std::vector<std::size_t>& ids,
                              std::size_t s_max) {
    if (s_max > levels.max_hop) {
        throw ConfigError("requested S=" + std::to_string(s_max) + " but the token cache holds S=" +
                          std::to_string(levels.max_hop));
    }
    const std::size_t w = levels.width, t = s_max + 1;
    auto out = make_tensor<Real>({ids.size(), t, w});
    for (std::size_t b = 0; b < ids.size(); ++b) {
        const std::size_t v = ids[b];
        if (v >= levels.n()) throw IndexError("node id " + std::to_string(v) + " outside the token cache");
        for (std::size_t s = 0; s < t; ++s) {
            const double* src = levels.levels[s].row(v);
            Real* dst = out->values.data() + (b * t + s) * w;
            for (std::size_t j = 0; j < w; ++j) dst[j] = static_cast<Real>(src[j]);
        }
    }
    return out;
}

// Argmax-logit predictions, ties to the lowest class id.
template <class Real>
std::vector<int> predict(const ModelConfig& cfg, const ModelParameters<Real>& params,
                         const TokenLevels& levels, const std::vector<std::size_t>& ids) {
    std::vector<int> preds;
    preds.reserve(ids.size());
    constexpr std::size_t kChunk = 1024;
    for (std::size_t lo = 0; lo < ids.size(); lo += kChunk) {
        const std::size_t hi = std::min(ids.size(), lo + kChunk);
        std::vector<std::size_t> chunk(ids.begin() + static_cast<std::ptrdiff_t>(lo),
                                       ids.begin() + static_cast<std::ptrdiff_t>(hi));
        Tape<Real> tape;
        auto tokens = gather_tokens<Real>(levels, chunk, cfg.max_hop);
        auto logits = model_forward(tape, cfg, params, tokens, /*training=*/false);
        const std::size_t c = cfg.classes;
        for (std::size_t b = 0; b < chunk.size(); ++b) {
            const Real* row = logits->values.data() + b * c;
            std::size_t arg = 0;
            for (std::size_t j = 1; j < c; ++j) {
                if (row[j] > row[arg]) arg = j;
            }
            preds.push_back(static_cast<int>(arg));
        }
    }
    return preds;
}

template <class Real>
double evaluate(const ModelConfig& cfg, const ModelParameters<Real>& params,
                const TokenLevels& levels, const std::vector<int>& labels,
                const std::vector<std::size_t>& ids) {
    if (ids.empty()) throw UndefinedMetricError("accuracy is undefined over an empty node set");
    const auto preds = predict(cfg, params, levels, ids);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (preds[i] == labels[ids[i]]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ids.size());
}

// Macro F1 over all classes in [0, c); classes with no support and no
// predictions contribute 0.
inline double macro_f1(const std::vector<int>& truth, const std::vector<int>& preds, std::size_t c) {
    if (truth.empty()) throw UndefinedMetricError("macro F1 is undefined over an empty node set");
    std::vector<std::size_t> tp(c, 0), fp(c, 0), fn(c, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (preds[i] == truth[i]) {
            ++tp[static_cast<std::size_t>(truth[i])];
        } else {
            ++fp[static_cast<std::size_t>(preds[i])];
            ++fn[static_cast<std::size_t>(truth[i])];
        }
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
        const double denom = static_cast<double>(2 * tp[k] + fp[k] + fn[k]);
        sum += denom > 0.0 ? 2.0 * static_cast<double>(tp[k]) / denom : 0.0;
    }
    return sum / static_cast<double>(c);
}

template <class Real>
struct TrainOutcome {
    ModelParameters<Real> params;  // parameters at the best-validation checkpoint
    TrainReport report;
    ModelConfig config;  // effective config (input width and class count resolved)
};

// Mini-batch AdamW training with early stopping on validation accuracy.
// Deterministic for a fixed seed: a single shuffle stream consumed in epoch
// order (so shortening max_epochs reproduces a longer run's prefix) and
// per-batch dropout streams derived from (seed, epoch, batch).
template <class Real>
TrainOutcome<Real> train(const TokenLevels& levels, const std::vector<int>& labels,
                         const DataSplit& split, ModelConfig mcfg, const TrainConfig& tcfg) {
    tcfg.validate();
    if (mcfg.input_width == 0) mcfg.input_width = levels.width;
    if (mcfg.classes == 0) {
        int mx = -1;
        for (int y : labels) mx = std::max(mx, y);
        mcfg.classes = static_cast<std::size_t>(mx + 1);
    }
    if (mcfg.input_width != levels.width) {
        throw ConfigError("token cache width " + std::to_string(levels.width) +
                          " does not match configured input width " + std::to_string(mcfg.input_width));
    }
    mcfg.validate();

    const auto t_start = std::chrono::steady_clock::now();
    auto params = init_parameters<Real>(mcfg, tcfg.seed);
    auto best = params.clone();
    AdamW<Real> opt(params.tensors(), tcfg.learning_rate, tcfg.weight_decay);

    TrainOutcome<Real> out{std::move(best), {}};
    auto& report = out.report;
    double best_val = -1.0;
    std::size_t since_best = 0;

    Rng shuffle_rng(derive_seed(tcfg.seed, 0x73687566u));  // "shuf"
    std::vector<std::size_t> order = split.train;

    for (std::size_t epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
        shuffle_vec(order, shuffle_rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        bool finite = true;
        for (std::size_t lo = 0; lo < order.size(); lo += tcfg.batch_size) {
            const std::size_t hi = std::min(order.size(), lo + tcfg.batch_size);
            std::vector<std::size_t> batch_ids(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                               order.begin() + static_cast<std::ptrdiff_t>(hi));
            std::vector<int> targets(batch_ids.size());
            for (std::size_t i = 0; i < batch_ids.size(); ++i) targets[i] = labels[batch_ids[i]];

            Tape<Real> tape(derive_seed(tcfg.seed, epoch, batches));
            auto tokens = gather_tokens<Real>(levels, batch_ids, mcfg.max_hop);
            auto logits = model_forward(tape, mcfg, params, tokens, /*training=*/true);
            auto loss = tape.cross_entropy_logits(logits, targets);
            const double loss_val = static_cast<double>(loss->values[0]);
            if (!std::isfinite(loss_val)) {
                finite = false;
                break;
            }
            loss_sum += loss_val;
            ++batches;
            params.zero_grad();
            tape.backward(loss);
            opt.step();
        }
        if (!finite) {
            report.diverged = true;
            break;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
        rec.val_acc = evaluate(mcfg, params, levels, labels, split.val);
        report.epochs.push_back(rec);

        if (rec.val_acc > best_val) {
            best_val = rec.val_acc;
            report.best_epoch = epoch;
            out.params.copy_values_from(params);
            since_best = 0;
        } else {
            ++since_best;
            if (since_best >= tcfg.patience) break;
        }
    }
    report.best_val_acc = std::max(best_val, 0.0);
    report.train_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

    const auto t_eval = std::chrono::steady_clock::now();
    if (!split.test.empty()) {
        report.test_acc = evaluate(mcfg, out.params, levels, labels, split.test);
        const auto preds = predict(mcfg, out.params, levels, split.test);
        std::vector<int> truth(split.test.size());
        for (std::size_t i = 0; i < split.test.size(); ++i) truth[i] = labels[split.test[i]];
        report.test_macro_f1 = macro_f1(truth, preds, mcfg.classes);
    }
    report.eval_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_eval).count();
    out.config = mcfg;
    return out;
}

// JSON-lines report: one record per epoch plus a final summary record whose
// "timing" block is the only non-deterministic content.
inline void write_report(const std::string& path, const TrainReport& report) {
    AtomicFileWriter w{path};
    auto& os = w.stream();
    for (const auto& e : report.epochs) {
        nlohmann::json line{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_acc", e.val_acc}};
        os << line.dump() << "\n";
    }
    nlohmann::json summary{{"summary", true},
                           {"best_epoch", report.best_epoch},
                           {"best_val_acc", report.best_val_acc},
                           {"test_acc", report.test_acc},
                           {"test_macro_f1", report.test_macro_f1},
                           {"diverged", report.diverged},
                           {"timing", {{"train_s", report.train_seconds}, {"eval_s", report.eval_seconds}}}};
    os << summary.dump() << "\n";
    w.commit();
}

// --- hyper-parameter grid ------------------------------------------------------

struct HyperGrid {
    std::vector<double> learning_rates{1e-2, 5e-3, 1e-3};
    std::vector<double> weight_decays{1e-4, 5e-5, 1e-5};
    std::vector<std::size_t> layer_counts{1, 2};
    std::vector<std::size_t> d_models{128, 256, 512, 768};

    std::size_t size() const {
        return learning_rates.size() * weight_decays.size() * layer_counts.size() * d_models.size();
    }
};

struct GridEntry {
    double learning_rate = 0.0;
    double weight_decay = 0.0;
    std::size_t layers = 0;
    std::size_t d_model = 0;
    double val_acc = 0.0;
    std::size_t parameter_count = 0;
};

struct GridResult {
    GridEntry best;
    std::vector<GridEntry> entries;
};

// Exhaustive search; ties broken by (fewer parameters, then lower learning
// rate).
template <class Real>
GridResult grid_search(const TokenLevels& levels, const std::vector<int>& labels,
                       const DataSplit& split, const ModelConfig& base_mcfg,
                       const TrainConfig& base_tcfg, const HyperGrid& grid = {}) {
    if (grid.size() == 0) throw ConfigError("grid_search: empty grid");
    GridResult out;
    bool have_best = false;
    for (std::size_t li = 0; li < grid.layer_counts.size(); ++li) {
        for (std::size_t di = 0; di < grid.d_models.size(); ++di) {
            for (double lr : grid.learning_rates) {
                for (double wd : grid.weight_decays) {
                    ModelConfig mcfg = base_mcfg;
                    mcfg.layers = grid.layer_counts[li];
                    mcfg.d_model = grid.d_models[di];
                    TrainConfig tcfg = base_tcfg;
                    tcfg.learning_rate = lr;
                    tcfg.weight_decay = wd;
                    auto res = train<Real>(levels, labels, split, mcfg, tcfg);
                    GridEntry e;
                    e.learning_rate = lr;
                    e.weight_decay = wd;
                    e.layers = mcfg.layers;
                    e.d_model = mcfg.d_model;
                    e.val_acc = res.report.best_val_acc;
                    e.parameter_count = res.params.parameter_count();
                    out.entries.push_back(e);
                    const bool better =
                        !have_best || e.val_acc > out.best.val_acc ||
                        (e.val_acc == out.best.val_acc &&
                         (e.parameter_count < out.best.parameter_count ||
                          (e.parameter_count == out.best.parameter_count &&
                           e.learning_rate < out.best.learning_rate)));
                    if (better) {
                        out.best = e;
                        have_best = true;
                    }
                }
            }
        }
    }
    return out;
}

}  // namespace damgt
