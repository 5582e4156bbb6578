// Command-line front end: synth | preprocess | train | eval | attn-dump |
// ablate | sweep-s | bench. Machine-readable JSON summary on stdout,
// human-readable detail on stderr. Exit codes: 0 success, 2 configuration
// error, 3 data error, 4 numeric error.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "damgt/damgt.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Options {
    std::string config_path;
    // dataset files
    std::string graph, features, labels;
    std::string cache_dir, out_dir, checkpoint;
    // synth
    std::string kind = "sbm";
    std::size_t nodes = 1000, classes = 4;
    double homophily = 0.8, avg_degree = 10.0;
    std::size_t feat_dim = 32;
    double feat_sep = 1.0, feat_noise = 1.0;
    // preprocess
    std::size_t m = 10;
    std::size_t S = 0;  // preprocess: 0 -> 3 if n < 1e5 else 10; train: 0 -> cache depth
    std::uint64_t kmeans_seed = 0;
    std::size_t kmeans_iters = 100;
    std::string pe = "dup";
    bool force = false;
    // model
    std::size_t dm = 128, layers = 1, heads = 8, dff = 0, dh = 0;
    double keep_prob = 0.9;
    std::string mask = "full", attn = "auto";
    // train
    double lr = 5e-3, wd = 5e-5;
    std::size_t batch_size = 2000, max_epochs = 200, patience = 50;
    std::uint64_t seed = 1;
    int precision = 64;
    std::uint64_t split_seed = 42;
    std::string fractions = "0.6,0.2,0.2";
    // studies
    std::string suite = "mask";
    std::size_t n_seeds = 5;
    bool no_reseed_split = false;
    std::string split_name = "test";
    std::string values = "2,3,4,5";
    std::string s_values = "1,4,8,12,16,20";
    std::size_t trials = 5, bench_batch = 64;
    unsigned workers = 1;
};

template <class T>
void put(const json& j, const char* key, T& var) {
    if (j.contains(key)) var = j.at(key).get<T>();
}

void apply_config(const json& j, Options& o) {
    put(j, "graph", o.graph);
    put(j, "features", o.features);
    put(j, "labels", o.labels);
    put(j, "cache", o.cache_dir);
    put(j, "out", o.out_dir);
    put(j, "checkpoint", o.checkpoint);
    put(j, "kind", o.kind);
    put(j, "nodes", o.nodes);
    put(j, "classes", o.classes);
    put(j, "homophily", o.homophily);
    put(j, "avg-degree", o.avg_degree);
    put(j, "feat-dim", o.feat_dim);
    put(j, "feat-sep", o.feat_sep);
    put(j, "feat-noise", o.feat_noise);
    put(j, "m", o.m);
    put(j, "S", o.S);
    put(j, "kmeans-seed", o.kmeans_seed);
    put(j, "kmeans-iters", o.kmeans_iters);
    put(j, "pe", o.pe);
    put(j, "force", o.force);
    put(j, "dm", o.dm);
    put(j, "layers", o.layers);
    put(j, "heads", o.heads);
    put(j, "dff", o.dff);
    put(j, "dh", o.dh);
    put(j, "keep-prob", o.keep_prob);
    put(j, "mask", o.mask);
    put(j, "attn", o.attn);
    put(j, "lr", o.lr);
    put(j, "wd", o.wd);
    put(j, "batch-size", o.batch_size);
    put(j, "max-epochs", o.max_epochs);
    put(j, "patience", o.patience);
    put(j, "seed", o.seed);
    put(j, "precision", o.precision);
    put(j, "split-seed", o.split_seed);
    put(j, "fractions", o.fractions);
    put(j, "suite", o.suite);
    put(j, "seeds", o.n_seeds);
    put(j, "no-reseed-split", o.no_reseed_split);
    put(j, "split", o.split_name);
    put(j, "values", o.values);
    put(j, "s-values", o.s_values);
    put(j, "trials", o.trials);
    put(j, "bench-batch", o.bench_batch);
    put(j, "workers", o.workers);
}

json prescan_config(int argc, char** argv) {
    std::string path;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) {
            path = argv[i + 1];
        } else if (a.rfind("--config=", 0) == 0) {
            path = a.substr(9);
        }
    }
    if (path.empty()) return json::object();
    std::ifstream is(path);
    if (!is) throw damgt::ConfigError("cannot open config file: " + path);
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw damgt::ConfigError("bad config JSON in " + path + ": " + e.what());
    }
}

std::vector<double> parse_fractions(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
    if (out.size() != 3) throw damgt::ConfigError("fractions must be three comma-separated values");
    return out;
}

std::vector<std::size_t> parse_size_list(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(static_cast<std::size_t>(std::stoul(tok)));
    if (out.empty()) throw damgt::ConfigError("expected a comma-separated list of integers");
    return out;
}

void emit(const json& summary) { std::cout << summary.dump() << "\n"; }

damgt::DualEncodingConfig encoding_config(const Options& o) {
    damgt::DualEncodingConfig e;
    e.m = o.m;
    e.kmeans.seed = o.kmeans_seed;
    e.kmeans.max_iter = o.kmeans_iters;
    e.kmeans.workers = o.workers;
    e.variant = damgt::parse_pe_variant(o.pe);
    return e;
}

damgt::ModelConfig model_config(const Options& o, std::size_t model_s) {
    damgt::ModelConfig m;
    m.max_hop = model_s;
    m.d_model = o.dm;
    m.layers = o.layers;
    m.heads = o.heads;
    m.d_ff = o.dff;
    m.d_head_hidden = o.dh;
    m.keep_prob = o.keep_prob;
    m.mask = damgt::parse_mask_variant(o.mask);
    m.pe = damgt::parse_pe_variant(o.pe);
    m.attn = damgt::parse_attn_impl(o.attn);
    return m;
}

damgt::TrainConfig train_config(const Options& o) {
    damgt::TrainConfig t;
    t.learning_rate = o.lr;
    t.weight_decay = o.wd;
    t.batch_size = o.batch_size;
    t.max_epochs = o.max_epochs;
    t.patience = o.patience;
    t.seed = o.seed;
    t.precision = o.precision;
    return t;
}

// --- synth -----------------------------------------------------------------

int cmd_synth(const Options& o) {
    damgt::SynthConfig cfg;
    cfg.kind = damgt::parse_synth_kind(o.kind);
    cfg.nodes = o.nodes;
    cfg.classes = o.classes;
    cfg.homophily = o.homophily;
    cfg.avg_degree = o.avg_degree;
    cfg.feat_dim = o.feat_dim;
    cfg.feat_sep = o.feat_sep;
    cfg.feat_noise = o.feat_noise;
    cfg.seed = o.seed;
    if (o.out_dir.empty()) throw damgt::ConfigError("synth: --out directory is required");
    fs::create_directories(o.out_dir);
    const auto g = damgt::generate_synthetic(cfg);
    const std::string edges = o.out_dir + "/edges.txt";
    const std::string feats = o.out_dir + "/features.dmat";
    const std::string labels = o.out_dir + "/labels.txt";
    damgt::save_graph(g, edges, feats, labels);
    json summary{{"command", "synth"},
                 {"nodes", g.n},
                 {"classes", g.c},
                 {"undirected_edges", g.undirected_edge_count()},
                 {"files", {{"graph", edges}, {"features", feats}, {"labels", labels}}}};
    if (g.undirected_edge_count() > 0) {
        summary["measured_homophily"] = damgt::edge_homophily(g);
    }
    std::cerr << "synth: wrote " << g.n << " nodes, " << g.undirected_edge_count()
              << " undirected edges to " << o.out_dir << "\n";
    emit(summary);
    return 0;
}

// --- preprocess --------------------------------------------------------------

std::size_t auto_depth(std::size_t n, std::size_t requested) {
    if (requested > 0) return requested;
    return n < 100000 ? 3 : 10;
}

int cmd_preprocess(const Options& o) {
    if (o.out_dir.empty()) throw damgt::ConfigError("preprocess: --out directory is required");
    fs::create_directories(o.out_dir);
    const std::string enc_path = o.out_dir + "/encoding.dpec";
    const std::string tok_path = o.out_dir + "/tokens.h2tk";
    const std::string prov_path = o.out_dir + "/provenance.json";

    // Depth needs the node count; peek at the label file (cheap) for n.
    const auto labels = damgt::read_label_file(o.labels);
    const std::size_t s_max = auto_depth(labels.size(), o.S);
    const auto ecfg = encoding_config(o);
    const auto expected = damgt::token_source_hash(o.graph, o.features, o.labels, ecfg, s_max);

    if (!o.force && fs::exists(enc_path) && fs::exists(tok_path) && fs::exists(prov_path)) {
        try {
            const auto header = damgt::read_token_cache_header(tok_path);
            if (header.source_hash == expected) {
                std::cerr << "preprocess: caches in " << o.out_dir << " are fresh; skipping\n";
                emit(json{{"command", "preprocess"},
                          {"skipped", true},
                          {"S", header.max_hop},
                          {"width", header.width},
                          {"source_hash", damgt::hex_digest(expected)}});
                return 0;
            }
        } catch (const damgt::Error&) {
            // unreadable cache: rebuild below
        }
    }

    const auto g = damgt::load_graph(o.graph, o.features, o.labels);
    std::cerr << "preprocess: graph n=" << g.n << " d=" << g.d << " c=" << g.c << " edges="
              << g.undirected_edge_count();
    if (g.load_report.duplicate_edges_dropped) {
        std::cerr << " (deduplicated " << g.load_report.duplicate_edges_dropped << ")";
    }
    if (g.load_report.self_loops_dropped) {
        std::cerr << " (warning: dropped " << g.load_report.self_loops_dropped << " self-loops)";
    }
    std::cerr << "\n";

    const auto adj = damgt::normalized_adjacency(g);
    const auto enc = damgt::dual_encoding(g, adj, ecfg);
    const auto xp = damgt::enhanced_features(g, enc);
    auto levels = damgt::propagate_all(adj, xp, s_max, o.workers);
    levels.source_hash = expected;

    damgt::write_encoding_cache(enc_path, enc);
    damgt::write_token_cache(tok_path, levels);

    damgt::Sha256 hg, hf, hl;
    damgt::sha256_update_file(hg, o.graph);
    damgt::sha256_update_file(hf, o.features);
    damgt::sha256_update_file(hl, o.labels);
    json prov{{"config",
               {{"pe", o.pe},
                {"m", ecfg.m},
                {"S", s_max},
                {"kmeans_seed", ecfg.kmeans.seed},
                {"kmeans_iters", ecfg.kmeans.max_iter}}},
              {"hashes",
               {{"graph", damgt::hex_digest(hg.finish())},
                {"features", damgt::hex_digest(hf.finish())},
                {"labels", damgt::hex_digest(hl.finish())},
                {"source", damgt::hex_digest(expected)}}},
              {"format_versions", {{"dpec", 1}, {"h2tk", 1}}}};
    {
        damgt::AtomicFileWriter w{prov_path};
        w.stream() << prov.dump(2) << "\n";
        w.commit();
    }
    emit(json{{"command", "preprocess"},
              {"skipped", false},
              {"S", s_max},
              {"width", levels.width},
              {"files", {{"encoding", enc_path}, {"tokens", tok_path}, {"provenance", prov_path}}},
              {"source_hash", damgt::hex_digest(expected)}});
    return 0;
}

// --- shared cache loading -------------------------------------------------------

struct LoadedCache {
    damgt::TokenLevels levels;
    damgt::DualEncodingConfig ecfg;
    std::string pe;
};

LoadedCache load_cache_checked(const Options& o) {
    if (o.cache_dir.empty()) throw damgt::ConfigError("--cache directory is required");
    const std::string prov_path = o.cache_dir + "/provenance.json";
    std::ifstream is(prov_path);
    if (!is) throw damgt::DataError("missing provenance file: " + prov_path);
    json prov;
    try {
        prov = json::parse(is);
    } catch (const json::exception& e) {
        throw damgt::CorruptCacheError(prov_path + ": " + e.what());
    }
    LoadedCache lc;
    const auto& cfg = prov.at("config");
    lc.pe = cfg.value("pe", std::string("dup"));
    lc.ecfg.m = cfg.value("m", std::size_t{10});
    lc.ecfg.kmeans.seed = cfg.value("kmeans_seed", std::uint64_t{0});
    lc.ecfg.kmeans.max_iter = cfg.value("kmeans_iters", std::size_t{100});
    lc.ecfg.variant = damgt::parse_pe_variant(lc.pe);
    const std::size_t s_max = cfg.value("S", std::size_t{3});
    const auto expected = damgt::token_source_hash(o.graph, o.features, o.labels, lc.ecfg, s_max);
    lc.levels = damgt::read_token_cache(o.cache_dir + "/tokens.h2tk", &expected);
    return lc;
}

damgt::DataSplit split_from(const Options& o, std::size_t n) {
    const auto f = parse_fractions(o.fractions);
    return damgt::random_split(n, f[0], f[1], f[2], o.split_seed);
}

// --- train ----------------------------------------------------------------------

template <class Real>
int run_train(const Options& o) {
    const auto g = damgt::load_graph(o.graph, o.features, o.labels);
    auto lc = load_cache_checked(o);
    const std::size_t model_s = o.S > 0 ? o.S : lc.levels.max_hop;
    auto mcfg = model_config(o, model_s);
    mcfg.pe = lc.ecfg.variant;
    const auto tcfg = train_config(o);
    const auto split = split_from(o, g.n);

    std::cerr << "train: n=" << g.n << " train/val/test=" << split.train.size() << "/"
              << split.val.size() << "/" << split.test.size() << " S=" << model_s
              << " width=" << lc.levels.width << " precision=" << o.precision << "\n";

    auto outcome = damgt::train<Real>(lc.levels, g.labels, split, mcfg, tcfg);
    const auto& rep = outcome.report;
    for (const auto& e : rep.epochs) {
        if (e.epoch % 10 == 0 || e.epoch == rep.epochs.size()) {
            std::cerr << "  epoch " << e.epoch << " loss=" << e.train_loss << " val=" << e.val_acc
                      << "\n";
        }
    }

    if (o.out_dir.empty()) throw damgt::ConfigError("train: --out directory is required");
    fs::create_directories(o.out_dir);
    const std::string ckpt = o.out_dir + "/checkpoint.dmgt";
    const std::string report = o.out_dir + "/report.jsonl";
    damgt::save_checkpoint(ckpt, outcome.config, outcome.params);
    damgt::write_report(report, rep);

    emit(json{{"command", "train"},
              {"best_epoch", rep.best_epoch},
              {"best_val_acc", rep.best_val_acc},
              {"test_acc", rep.test_acc},
              {"test_macro_f1", rep.test_macro_f1},
              {"epochs_run", rep.epochs.size()},
              {"diverged", rep.diverged},
              {"files", {{"checkpoint", ckpt}, {"report", report}}}});
    if (rep.diverged) {
        std::cerr << "train: loss diverged; last-good checkpoint retained at " << ckpt << "\n";
        return 4;
    }
    return 0;
}

int cmd_train(const Options& o) {
    return o.precision == 32 ? run_train<float>(o) : run_train<double>(o);
}

// --- eval -----------------------------------------------------------------------

const std::vector<std::size_t>& pick_split(const damgt::DataSplit& s, const std::string& name,
                                           std::vector<std::size_t>& all_storage, std::size_t n) {
    if (name == "train") return s.train;
    if (name == "val") return s.val;
    if (name == "test") return s.test;
    if (name == "all") {
        all_storage.resize(n);
        for (std::size_t i = 0; i < n; ++i) all_storage[i] = i;
        return all_storage;
    }
    throw damgt::ConfigError("unknown split \"" + name + "\" (expected train|val|test|all)");
}

int cmd_eval(const Options& o) {
    const auto g = damgt::load_graph(o.graph, o.features, o.labels);
    auto lc = load_cache_checked(o);
    if (o.checkpoint.empty()) throw damgt::ConfigError("eval: --checkpoint is required");
    auto ckpt = damgt::load_checkpoint<double>(o.checkpoint);
    const auto split = split_from(o, g.n);
    std::vector<std::size_t> all;
    const auto& ids = pick_split(split, o.split_name, all, g.n);
    const double acc = damgt::evaluate(ckpt.config, ckpt.params, lc.levels, g.labels, ids);
    const auto preds = damgt::predict(ckpt.config, ckpt.params, lc.levels, ids);
    std::vector<int> truth(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) truth[i] = g.labels[ids[i]];
    emit(json{{"command", "eval"},
              {"split", o.split_name},
              {"nodes", ids.size()},
              {"accuracy", acc},
              {"macro_f1", damgt::macro_f1(truth, preds, ckpt.config.classes)}});
    return 0;
}

// --- attn-dump --------------------------------------------------------------------

int cmd_attn_dump(const Options& o) {
    const auto g = damgt::load_graph(o.graph, o.features, o.labels);
    auto lc = load_cache_checked(o);
    if (o.checkpoint.empty()) throw damgt::ConfigError("attn-dump: --checkpoint is required");
    if (o.out_dir.empty()) throw damgt::ConfigError("attn-dump: --out directory is required");
    fs::create_directories(o.out_dir);
    auto ckpt = damgt::load_checkpoint<double>(o.checkpoint);
    const auto split = split_from(o, g.n);
    std::vector<std::size_t> all;
    const auto& ids = pick_split(split, o.split_name, all, g.n);
    const auto dump = damgt::dump_attention(ckpt.config, ckpt.params, lc.levels, ids);
    const std::string csv = o.out_dir + "/attention.csv";
    damgt::write_attention_csv(csv, dump);
    damgt::write_attention_heatmaps(o.out_dir, dump);
    emit(json{{"command", "attn-dump"},
              {"layers", dump.layers},
              {"heads", dump.heads},
              {"extent", dump.extent},
              {"nodes", dump.node_count},
              {"csv", csv},
              {"image_pattern", o.out_dir + "/attn_L{layer}_H{head}.ppm"}});
    return 0;
}

// --- studies ----------------------------------------------------------------------

damgt::StudyConfig study_config(const Options& o, std::size_t model_s) {
    damgt::StudyConfig s;
    s.encoding = encoding_config(o);
    s.model = model_config(o, model_s);
    s.train = train_config(o);
    const auto f = parse_fractions(o.fractions);
    s.train_frac = f[0];
    s.val_frac = f[1];
    s.test_frac = f[2];
    s.split_seed = o.split_seed;
    s.n_seeds = o.n_seeds;
    s.reseed_split_per_run = !o.no_reseed_split;
    s.workers = o.workers;
    return s;
}

int cmd_ablate(const Options& o) {
    const auto g = damgt::load_graph(o.graph, o.features, o.labels);
    if (o.out_dir.empty()) throw damgt::ConfigError("ablate: --out directory is required");
    fs::create_directories(o.out_dir);
    const std::size_t model_s = auto_depth(g.n, o.S);
    const auto study = study_config(o, model_s);
    const auto result = damgt::run_ablation<double>(g, o.suite, study);
    const std::string csv = o.out_dir + "/ablation_" + o.suite + ".csv";
    damgt::write_ablation_csv(csv, result);
    json rows = json::array();
    for (const auto& r : result.rows) {
        rows.push_back(json{{"variant", r.variant},
                            {"accuracy", r.mean_acc},
                            {"stdev", r.stdev},
                            {"gain", r.gain},
                            {"per_seed", r.per_seed_acc}});
    }
    emit(json{{"command", "ablate"}, {"suite", o.suite}, {"rows", rows}, {"csv", csv}});
    return 0;
}

int cmd_sweep_s(const Options& o) {
    const auto g = damgt::load_graph(o.graph, o.features, o.labels);
    if (o.out_dir.empty()) throw damgt::ConfigError("sweep-s: --out directory is required");
    fs::create_directories(o.out_dir);
    const auto values = parse_size_list(o.values);
    const auto study = study_config(o, values.front());
    const auto result = damgt::sweep_propagation_steps<double>(g, values, study);
    const std::string csv = o.out_dir + "/sweep_s.csv";
    const std::string svg = o.out_dir + "/sweep_s.svg";
    damgt::write_sweep_csv(csv, result);
    damgt::write_sweep_plot(svg, result);
    json pts = json::array();
    for (const auto& p : result.points) {
        pts.push_back(json{{"S", p.s}, {"test_acc", p.test_acc}, {"best_val_acc", p.best_val_acc}});
    }
    emit(json{{"command", "sweep-s"}, {"points", pts}, {"csv", csv}, {"plot", svg}});
    return 0;
}

int cmd_bench(const Options& o) {
    const auto s_values = parse_size_list(o.s_values);
    const auto result =
        damgt::bench_attention<double>(s_values, o.dm, o.trials, o.heads, o.bench_batch);
    json rows = json::array();
    for (const auto& r : result.rows) {
        rows.push_back(json{{"S", r.s},
                            {"dense_ms", r.dense_ms},
                            {"sparse_ms", r.sparse_ms},
                            {"dense_logits", r.dense_logits},
                            {"sparse_logits", r.sparse_logits},
                            {"max_forward_diff", r.max_forward_diff}});
    }
    json summary{{"command", "bench"},
                 {"d_model", result.d_model},
                 {"heads", result.heads},
                 {"batch", result.batch},
                 {"rows", rows}};
    if (!o.out_dir.empty()) {
        fs::create_directories(o.out_dir);
        const std::string csv = o.out_dir + "/bench.csv";
        damgt::write_bench_csv(csv, result);
        summary["csv"] = csv;
    }
    emit(summary);
    return 0;
}

void add_dataset_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--graph", o.graph, "edge list file [config key: graph]")->required();
    cmd->add_option("--features", o.features, "feature matrix file, DMAT or CSV [config key: features]")
        ->required();
    cmd->add_option("--labels", o.labels, "label file [config key: labels]")->required();
}

void add_model_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--dm", o.dm, "model width d_m [config key: dm]");
    cmd->add_option("--layers", o.layers, "transformer layer count [config key: layers]");
    cmd->add_option("--heads", o.heads, "attention head count [config key: heads]");
    cmd->add_option("--dff", o.dff, "feed-forward width, 0 = 2*dm [config key: dff]");
    cmd->add_option("--dh", o.dh, "classifier hidden width, 0 = dm/2 [config key: dh]");
    cmd->add_option("--keep-prob", o.keep_prob, "dropout keep probability [config key: keep-prob]");
    cmd->add_option("--mask", o.mask, "mask variant: full|none|h|v|d [config key: mask]");
    cmd->add_option("--attn", o.attn, "attention path: auto|dense|sparse [config key: attn]");
}

void add_train_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--lr", o.lr, "learning rate [config key: lr]");
    cmd->add_option("--wd", o.wd, "weight decay [config key: wd]");
    cmd->add_option("--batch-size", o.batch_size, "mini-batch size [config key: batch-size]");
    cmd->add_option("--max-epochs", o.max_epochs, "epoch cap [config key: max-epochs]");
    cmd->add_option("--patience", o.patience,
                    "early-stop patience in epochs [config key: patience]");
    cmd->add_option("--seed", o.seed, "training/init seed [config key: seed]");
    cmd->add_option("--precision", o.precision, "64 or 32 [config key: precision]");
    cmd->add_option("--split-seed", o.split_seed, "split shuffle seed [config key: split-seed]");
    cmd->add_option("--fractions", o.fractions,
                    "train,val,test fractions [config key: fractions]");
}

void add_preproc_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--m", o.m, "spectral encoding width [config key: m]");
    cmd->add_option("--S", o.S, "propagation depth; 0 = auto [config key: S]");
    cmd->add_option("--kmeans-seed", o.kmeans_seed, "k-means seed [config key: kmeans-seed]");
    cmd->add_option("--kmeans-iters", o.kmeans_iters,
                    "k-means iteration cap [config key: kmeans-iters]");
    cmd->add_option("--pe", o.pe, "positional encoding: dup|ap|tp|none [config key: pe]");
}

}  // namespace

int main(int argc, char** argv) {
    Options o;
    CLI::App app{"damgt: tokenized graph transformer for node classification"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "print help for every subcommand");

    try {
        apply_config(prescan_config(argc, argv), o);
    } catch (const damgt::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    }

    // Every subcommand accepts --config and --workers.
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", o.config_path,
                        "JSON config file; CLI flags override it [config key: n/a]");
        cmd->add_option("--workers", o.workers, "worker thread count [config key: workers]");
    };

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    add_common(synth);
    synth->add_option("--kind", o.kind, "sbm|blobs [config key: kind]");
    synth->add_option("--nodes", o.nodes, "node count [config key: nodes]");
    synth->add_option("--classes", o.classes, "class count [config key: classes]");
    synth->add_option("--homophily", o.homophily, "target edge homophily [config key: homophily]");
    synth->add_option("--avg-degree", o.avg_degree, "average degree [config key: avg-degree]");
    synth->add_option("--feat-dim", o.feat_dim, "feature dimension [config key: feat-dim]");
    synth->add_option("--feat-sep", o.feat_sep, "class centroid scale [config key: feat-sep]");
    synth->add_option("--feat-noise", o.feat_noise, "feature noise scale [config key: feat-noise]");
    synth->add_option("--seed", o.seed, "generator seed [config key: seed]");
    synth->add_option("--out", o.out_dir, "output directory [config key: out]")->required();

    auto* preprocess = app.add_subcommand("preprocess", "build encoding and token caches");
    add_common(preprocess);
    add_dataset_flags(preprocess, o);
    add_preproc_flags(preprocess, o);
    preprocess->add_option("--out", o.out_dir, "cache directory [config key: out]")->required();
    preprocess->add_flag("--force", o.force, "rebuild even if caches are fresh [config key: force]");

    auto* train = app.add_subcommand("train", "train a model from cached tokens");
    add_common(train);
    add_dataset_flags(train, o);
    add_model_flags(train, o);
    add_train_flags(train, o);
    train->add_option("--cache", o.cache_dir, "cache directory from preprocess [config key: cache]")
        ->required();
    train->add_option("--out", o.out_dir, "output directory [config key: out]")->required();
    train->add_option("--S", o.S, "model hop count; 0 = cache depth [config key: S]");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval);
    add_dataset_flags(eval, o);
    eval->add_option("--cache", o.cache_dir, "cache directory [config key: cache]")->required();
    eval->add_option("--checkpoint", o.checkpoint, "checkpoint file [config key: checkpoint]")
        ->required();
    eval->add_option("--split", o.split_name, "train|val|test|all [config key: split]");
    eval->add_option("--split-seed", o.split_seed, "split shuffle seed [config key: split-seed]");
    eval->add_option("--fractions", o.fractions, "train,val,test fractions [config key: fractions]");

    auto* attn = app.add_subcommand("attn-dump", "dump averaged attention matrices");
    add_common(attn);
    add_dataset_flags(attn, o);
    attn->add_option("--cache", o.cache_dir, "cache directory [config key: cache]")->required();
    attn->add_option("--checkpoint", o.checkpoint, "checkpoint file [config key: checkpoint]")
        ->required();
    attn->add_option("--out", o.out_dir, "output directory [config key: out]")->required();
    attn->add_option("--split", o.split_name, "node set: train|val|test|all [config key: split]");
    attn->add_option("--split-seed", o.split_seed, "split shuffle seed [config key: split-seed]");
    attn->add_option("--fractions", o.fractions, "train,val,test fractions [config key: fractions]");

    auto* ablate = app.add_subcommand("ablate", "run an ablation suite");
    add_common(ablate);
    add_dataset_flags(ablate, o);
    add_preproc_flags(ablate, o);
    add_model_flags(ablate, o);
    add_train_flags(ablate, o);
    ablate->add_option("--suite", o.suite, "mask|pe|mask-variants [config key: suite]");
    ablate->add_option("--seeds", o.n_seeds, "repeat-run count [config key: seeds]");
    ablate->add_flag("--no-reseed-split", o.no_reseed_split,
                     "keep one split across repeat runs [config key: no-reseed-split]");
    ablate->add_option("--out", o.out_dir, "output directory [config key: out]")->required();

    auto* sweep = app.add_subcommand("sweep-s", "accuracy vs propagation steps");
    add_common(sweep);
    add_dataset_flags(sweep, o);
    add_preproc_flags(sweep, o);
    add_model_flags(sweep, o);
    add_train_flags(sweep, o);
    sweep->add_option("--values", o.values, "comma-separated S values [config key: values]");
    sweep->add_option("--out", o.out_dir, "output directory [config key: out]")->required();

    auto* bench = app.add_subcommand("bench", "dense vs sparse attention micro-benchmark");
    add_common(bench);
    bench->add_option("--s-values", o.s_values, "comma-separated S values [config key: s-values]");
    bench->add_option("--dm", o.dm, "model width [config key: dm]");
    bench->add_option("--heads", o.heads, "head count [config key: heads]");
    bench->add_option("--trials", o.trials, "timing repetitions [config key: trials]");
    bench->add_option("--bench-batch", o.bench_batch, "token blocks per run [config key: bench-batch]");
    bench->add_option("--out", o.out_dir, "optional output directory [config key: out]");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(o);
        if (preprocess->parsed()) return cmd_preprocess(o);
        if (train->parsed()) return cmd_train(o);
        if (eval->parsed()) return cmd_eval(o);
        if (attn->parsed()) return cmd_attn_dump(o);
        if (ablate->parsed()) return cmd_ablate(o);
        if (sweep->parsed()) return cmd_sweep_s(o);
        if (bench->parsed()) return cmd_bench(o);
    } catch (const damgt::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
