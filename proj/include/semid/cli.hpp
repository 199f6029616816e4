// Copyright 2026-present the semid authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// The `semid` command line: subcommands over a TOML run config.
//
// Relative paths in a config resolve against the config file's directory.
// Flags override file values. Every command writes effective_config.toml into
// its output directory and appends one JSON line to <out>/manifest.jsonl with
// the command, the config hash, sha256 of inputs and outputs, and wall time.
// The config hash leaves out [run] (output dir, workers), which never changes
// what gets written.

#include <CLI11.hpp>
#include <toml.hpp>

#include <chrono>
#include <iostream>
#include <set>

#include "semid/eval.hpp"
#include "semid/synth.hpp"

namespace semid {

inline constexpr const char* kCliStage = "cli";

namespace fs = std::filesystem;

struct RunConfig {
    fs::path base_dir = ".";
    std::optional<fs::path> catalog;
    std::optional<fs::path> manifest;
    std::optional<fs::path> interactions;
    std::optional<fs::path> queries;
    std::map<std::string, fs::path> embeddings;
    std::map<std::string, fs::path> query_embeddings;
    ExperimentConfig experiment;
    EnmfConfig enmf;
    std::optional<fs::path> out;

    std::size_t workers() const noexcept {
        return experiment.workers;
    }
};

namespace detail {

inline const std::map<std::string, std::set<std::string>>& config_schema() {
    static const std::map<std::string, std::set<std::string>> s{
            {"data", {"catalog", "manifest", "interactions", "queries", "embeddings", "query_embeddings"}},
            {"experiment", {"strategies", "seeds", "head_fraction", "exclude_history", "alpha"}},
            {"quantizer", {"kind", "levels", "k", "max_iters"}},
            {"decoding", {"beam_width", "groups", "diversity_penalty", "top_k", "popularity_blend"}},
            {"enmf", {"dim", "epochs", "lr", "c_neg", "batch_users", "optimizer", "seed"}},
            {"run", {"out", "workers"}}};
    return s;
}

class ConfigReader {
   public:
    ConfigReader(const toml::table& t, std::vector<std::string>& problems) : t_(t), problems_(problems) {}

    template <typename T>
    void get(const std::string& section, const std::string& key, T& dst) {
        const auto node = t_[section][key];
        if (!node) {
            return;
        }
        if constexpr (std::is_same_v<T, bool>) {
            if (auto v = node.template value<bool>()) {
                dst = *v;
                return;
            }
        } else if constexpr (std::is_floating_point_v<T>) {
            if (auto v = node.template value<double>()) {
                dst = *v;
                return;
            }
        } else if constexpr (std::is_integral_v<T>) {
            if (auto v = node.template value<std::int64_t>(); v && *v >= 0) {
                dst = static_cast<T>(*v);
                return;
            }
        } else {
            if (auto v = node.template value<std::string>()) {
                dst = *v;
                return;
            }
        }
        problems_.push_back("[" + section + "] " + key + " has the wrong type");
    }

   private:
    const toml::table& t_;
    std::vector<std::string>& problems_;
};

inline fs::path resolve(const fs::path& base, const std::string& p) {
    const fs::path q(p);
    return (q.is_absolute() ? q : base / q).lexically_normal();
}

inline EnmfOptimizer parse_optimizer(const std::string& s) {
    if (s == "gd") {
        return EnmfOptimizer::gd;
    }
    if (s == "adam") {
        return EnmfOptimizer::adam;
    }
    throw Error(Errc::invalid_config, kCliStage, "unknown optimizer '" + s + "' (gd|adam)");
}

inline std::string join_problems(const std::vector<std::string>& p) {
    std::string s = "invalid configuration (" + std::to_string(p.size()) + " problem" +
            (p.size() == 1 ? "" : "s") + "):";
    for (const auto& x : p) {
        s += "\n  - " + x;
    }
    return s;
}

} // namespace detail

/// Parses a TOML config. Problems are appended, not thrown.
inline RunConfig parse_run_config(const toml::table& t, const fs::path& base_dir,
                                  std::vector<std::string>& problems) {
    RunConfig c;
    c.base_dir = base_dir;
    for (auto&& [k, v] : t) {
        const std::string key(k.str());
        auto it = detail::config_schema().find(key);
        if (it == detail::config_schema().end() || !v.is_table()) {
            problems.push_back("unknown section [" + key + "]");
            continue;
        }
        for (auto&& [k2, v2] : *v.as_table()) {
            if (it->second.count(std::string(k2.str())) == 0U) {
                problems.push_back("unknown key [" + key + "] " + std::string(k2.str()));
            }
        }
    }
    detail::ConfigReader r(t, problems);
    auto path_opt = [&](const std::string& key, std::optional<fs::path>& dst) {
        std::string s;
        r.get("data", key, s);
        if (!s.empty()) {
            dst = detail::resolve(base_dir, s);
        }
    };
    path_opt("catalog", c.catalog);
    path_opt("manifest", c.manifest);
    path_opt("interactions", c.interactions);
    path_opt("queries", c.queries);
    for (const auto* sec : {"embeddings", "query_embeddings"}) {
        if (const auto* tab = t["data"][sec].as_table()) {
            for (auto&& [k, v] : *tab) {
                if (auto s = v.value<std::string>()) {
                    (std::string(sec) == "embeddings" ? c.embeddings : c.query_embeddings)[std::string(k.str())] =
                            detail::resolve(base_dir, *s);
                } else {
                    problems.push_back("[data." + std::string(sec) + "] " + std::string(k.str()) +
                                       " must be a path string");
                }
            }
        }
    }

    auto& e = c.experiment;
    if (auto* arr = t["experiment"]["strategies"].as_array()) {
        e.strategies.clear();
        for (auto&& x : *arr) {
            if (auto s = x.value<std::string>()) {
                e.strategies.push_back(*s);
            } else {
                problems.push_back("[experiment] strategies must be strings");
            }
        }
    }
    if (auto* arr = t["experiment"]["seeds"].as_array()) {
        e.seeds.clear();
        for (auto&& x : *arr) {
            if (auto s = x.value<std::int64_t>(); s && *s >= 0) {
                e.seeds.push_back(static_cast<std::uint64_t>(*s));
            } else {
                problems.push_back("[experiment] seeds must be non-negative integers");
            }
        }
    }
    r.get("experiment", "head_fraction", e.slices.head_fraction);
    r.get("experiment", "exclude_history", e.exclude_history);
    r.get("experiment", "alpha", e.alpha);
    std::string kind = quantizer_kind_name(e.quantizer.kind);
    r.get("quantizer", "kind", kind);
    try {
        e.quantizer.kind = parse_quantizer_kind(kind);
    } catch (const Error& err) {
        problems.push_back(std::string("[quantizer] kind: ") + err.what());
    }
    r.get("quantizer", "levels", e.quantizer.levels);
    r.get("quantizer", "k", e.quantizer.k);
    r.get("quantizer", "max_iters", e.quantizer.max_iters);
    r.get("decoding", "beam_width", e.decoding.beam_width);
    r.get("decoding", "groups", e.decoding.groups);
    r.get("decoding", "diversity_penalty", e.decoding.diversity_penalty);
    r.get("decoding", "top_k", e.decoding.top_k);
    r.get("decoding", "popularity_blend", e.decoding.popularity_blend);
    r.get("enmf", "dim", c.enmf.d);
    r.get("enmf", "epochs", c.enmf.epochs);
    r.get("enmf", "lr", c.enmf.lr);
    r.get("enmf", "c_neg", c.enmf.c_neg);
    r.get("enmf", "batch_users", c.enmf.batch_users);
    r.get("enmf", "seed", c.enmf.seed);
    std::string opt = "gd";
    r.get("enmf", "optimizer", opt);
    try {
        c.enmf.optimizer = detail::parse_optimizer(opt);
    } catch (const Error& err) {
        problems.push_back(std::string("[enmf] optimizer: ") + err.what());
    }
    std::string out;
    r.get("run", "out", out);
    if (!out.empty()) {
        c.out = detail::resolve(base_dir, out);
    }
    std::size_t workers = 0;
    r.get("run", "workers", workers);
    e.workers = workers == 0 ? default_workers() : workers;
    return c;
}

/// Checks everything that can be checked up front; lists every problem.
inline void validate_run_config(const RunConfig& c, std::vector<std::string>& problems) {
    auto exists = [&](const std::optional<fs::path>& p, const std::string& what) {
        if (p && !fs::exists(*p)) {
            problems.push_back(what + " path does not exist: " + p->string());
        }
    };
    exists(c.catalog, "[data] catalog");
    exists(c.manifest, "[data] manifest");
    exists(c.interactions, "[data] interactions");
    exists(c.queries, "[data] queries");
    for (const auto& [name, p] : c.embeddings) {
        exists(p, "[data.embeddings] " + name);
    }
    for (const auto& [name, p] : c.query_embeddings) {
        exists(p, "[data.query_embeddings] " + name);
    }
    const auto& e = c.experiment;
    if (e.strategies.empty()) {
        problems.emplace_back("[experiment] strategies must be non-empty");
    }
    if (e.seeds.empty()) {
        problems.emplace_back("[experiment] seeds must be non-empty");
    }
    for (const auto& s : e.strategies) {
        if (std::find(known_strategies().begin(), known_strategies().end(), s) == known_strategies().end()) {
            problems.push_back("[experiment] unknown strategy '" + s + "'");
        }
    }
    if (e.quantizer.levels < 1 || e.quantizer.k < 1) {
        problems.emplace_back("[quantizer] levels and k must be >= 1");
    }
    try {
        e.decoding.validate();
    } catch (const Error& err) {
        problems.push_back(std::string("[decoding] ") + err.what());
    }
    if (e.slices.head_fraction < 0.0 || e.slices.head_fraction > 1.0) {
        problems.emplace_back("[experiment] head_fraction must lie in [0, 1]");
    }
    if (c.enmf.d < 1 || c.enmf.c_neg <= 0.0 || c.enmf.c_neg > 1.0 || c.enmf.lr <= 0.0) {
        problems.emplace_back("[enmf] needs dim >= 1, lr > 0 and c_neg in (0, 1]");
    }
}

/// The effective config as TOML. Without the [run] table it is what gets hashed.
inline toml::table config_to_toml(const RunConfig& c, bool with_run) {
    auto i64 = [](auto v) { return static_cast<std::int64_t>(v); };
    toml::table data;
    auto put = [&](const char* k, const std::optional<fs::path>& p) {
        if (p) {
            data.insert(k, p->string());
        }
    };
    put("catalog", c.catalog);
    put("manifest", c.manifest);
    put("interactions", c.interactions);
    put("queries", c.queries);
    toml::table emb;
    for (const auto& [k, p] : c.embeddings) {
        emb.insert(k, p.string());
    }
    toml::table qemb;
    for (const auto& [k, p] : c.query_embeddings) {
        qemb.insert(k, p.string());
    }
    data.insert("embeddings", std::move(emb));
    data.insert("query_embeddings", std::move(qemb));

    const auto& e = c.experiment;
    toml::array strategies;
    for (const auto& s : e.strategies) {
        strategies.push_back(s);
    }
    toml::array seeds;
    for (const auto s : e.seeds) {
        seeds.push_back(i64(s));
    }
    toml::table t;
    t.insert("data", std::move(data));
    t.insert("experiment", toml::table{{"strategies", std::move(strategies)},
                                       {"seeds", std::move(seeds)},
                                       {"head_fraction", e.slices.head_fraction},
                                       {"exclude_history", e.exclude_history},
                                       {"alpha", e.alpha}});
    t.insert("quantizer", toml::table{{"kind", quantizer_kind_name(e.quantizer.kind)},
                                      {"levels", i64(e.quantizer.levels)},
                                      {"k", i64(e.quantizer.k)},
                                      {"max_iters", i64(e.quantizer.max_iters)}});
    t.insert("decoding", toml::table{{"beam_width", i64(e.decoding.beam_width)},
                                     {"groups", i64(e.decoding.groups)},
                                     {"diversity_penalty", e.decoding.diversity_penalty},
                                     {"top_k", i64(e.decoding.top_k)},
                                     {"popularity_blend", e.decoding.popularity_blend}});
    t.insert("enmf", toml::table{{"dim", i64(c.enmf.d)},
                                 {"epochs", i64(c.enmf.epochs)},
                                 {"lr", c.enmf.lr},
                                 {"c_neg", c.enmf.c_neg},
                                 {"batch_users", i64(c.enmf.batch_users)},
                                 {"optimizer", c.enmf.optimizer == EnmfOptimizer::adam ? "adam" : "gd"},
                                 {"seed", i64(c.enmf.seed)}});
    if (with_run) {
        toml::table run;
        if (c.out) {
            run.insert("out", c.out->string());
        }
        run.insert("workers", i64(c.workers()));
        t.insert("run", std::move(run));
    }
    return t;
}

inline std::string toml_text(const toml::table& t) {
    std::ostringstream ss;
    ss << t << "\n";
    return ss.str();
}

inline std::string config_hash(const RunConfig& c) {
    return sha256_hex(toml_text(config_to_toml(c, false)));
}

inline RunConfig load_run_config(const fs::path& path, std::vector<std::string>& problems) {
    toml::table t;
    try {
        t = toml::parse_file(path.string());
    } catch (const toml::parse_error& e) {
        throw Error(Errc::invalid_config, kCliStage,
                    "cannot parse " + path.string() + ": " + std::string(e.description()));
    }
    return parse_run_config(t, path.parent_path().empty() ? fs::path(".") : path.parent_path(), problems);
}

// ---------------------------------------------------------------------------
// Loading data named by a config

inline Catalog load_config_catalog(const RunConfig& c) {
    SEMID_THROW_IF_NOT(c.catalog.has_value(), Errc::invalid_config, kCliStage, "[data] catalog is required");
    return load_catalog(*c.catalog);
}

inline EmbeddingMatrix load_config_space(const RunConfig& c, const Catalog& catalog, const std::string& name) {
    auto it = c.embeddings.find(name);
    SEMID_THROW_IF_NOT(it != c.embeddings.end(), Errc::invalid_config, kCliStage,
                       "[data.embeddings] has no '" + name + "' entry");
    auto m = load_embeddings(it->second, catalog.size());
    if (c.manifest) {
        return align(catalog, m, load_manifest(*c.manifest));
    }
    m.aligned_to = catalog.fingerprint();
    return m;
}

/// Loads everything the config names. Popularity is recomputed from the train
/// split whenever interactions are given.
inline ExperimentData load_config_data(const RunConfig& c) {
    ExperimentData d;
    d.catalog = load_config_catalog(c);
    if (c.interactions) {
        auto log = std::make_shared<const InteractionLog>(load_interactions(*c.interactions, d.catalog));
        d.catalog.set_popularity(log->train_popularity());
        d.log = std::move(log);
    }
    for (const auto& [name, p] : c.embeddings) {
        d.spaces[name] = load_config_space(c, d.catalog, name);
    }
    if (c.queries) {
        d.queries.records = load_query_records(*c.queries, d.catalog);
        for (const auto& [name, p] : c.query_embeddings) {
            d.queries.add_embeddings(name, load_embeddings(p, d.queries.size()));
        }
    }
    return d;
}

inline std::vector<fs::path> config_inputs(const RunConfig& c) {
    std::vector<fs::path> in;
    for (const auto* p : {&c.catalog, &c.manifest, &c.interactions, &c.queries}) {
        if (*p) {
            in.push_back(**p);
        }
    }
    for (const auto& [k, p] : c.embeddings) {
        in.push_back(p);
    }
    for (const auto& [k, p] : c.query_embeddings) {
        in.push_back(p);
    }
    return in;
}

// ---------------------------------------------------------------------------
// Run manifest

inline void append_manifest(const fs::path& out_dir, const std::string& command, const std::string& cfg_hash,
                            const std::vector<std::uint64_t>& seeds, const std::vector<fs::path>& inputs,
                            const std::vector<fs::path>& outputs, std::chrono::steady_clock::time_point t0) {
    json in = json::object();
    for (const auto& p : inputs) {
        if (fs::is_regular_file(p)) {
            in[p.string()] = sha256_file(p);
        }
    }
    json out = json::object();
    for (const auto& p : outputs) {
        out[p.lexically_relative(out_dir).generic_string()] = sha256_file(p);
    }
    const auto wall = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
    json line{{"command", command}, {"config_hash", cfg_hash}, {"seeds", seeds},
              {"inputs", in},       {"outputs", out},          {"wall_ms", wall.count()}};
    fs::create_directories(out_dir);
    std::ofstream f(out_dir / "manifest.jsonl", std::ios::app | std::ios::binary);
    SEMID_THROW_IF_NOT(f.good(), Errc::io, kCliStage, "cannot append to manifest in " + out_dir.string());
    f << line.dump() << "\n";
}

// ---------------------------------------------------------------------------
// Command line

namespace detail {

/// Flag values that override the config when given.
struct Overrides {
    std::string config;
    std::string out;
    std::size_t workers = 0;
    std::string strategies;
    std::string seeds;
    std::string kind;
    std::size_t levels = 0;
    std::size_t k = 0;
    std::size_t max_iters = 0;
    std::size_t beam_width = 0;
    std::size_t groups = 0;
    double diversity_penalty = 0.0;
    std::size_t top_k = 0;
    double popularity_blend = 0.0;
    double head_fraction = 0.0;
    std::vector<CLI::Option*> opts;

    bool given(const std::string& name) const {
        for (auto* o : opts) {
            if (o->check_name(name) && o->count() > 0) {
                return true;
            }
        }
        return false;
    }
};

inline void add_common(CLI::App* sub, Overrides& o, bool need_config = true) {
    auto* c = sub->add_option("--config", o.config, "TOML run config");
    if (need_config) {
        c->required();
    }
    o.opts.push_back(c);
    o.opts.push_back(sub->add_option("--out", o.out, "output directory (overrides [run] out)"));
    o.opts.push_back(sub->add_option("--workers", o.workers,
                                     "worker threads (default: [run] workers, then SEMID_THREADS, then all cores)"));
}

inline void add_quantizer_flags(CLI::App* sub, Overrides& o) {
    o.opts.push_back(sub->add_option("--kind", o.kind, "quantizer: rq_kmeans|residual_lfq"));
    o.opts.push_back(sub->add_option("--levels", o.levels, "quantization levels L"));
    o.opts.push_back(sub->add_option("--k", o.k, "codebook size K per level"));
    o.opts.push_back(sub->add_option("--max-iters", o.max_iters, "k-means iteration cap"));
}

inline void add_decoding_flags(CLI::App* sub, Overrides& o) {
    o.opts.push_back(sub->add_option("--beam-width", o.beam_width, "beam width B"));
    o.opts.push_back(sub->add_option("--groups", o.groups, "diverse beam groups G"));
    o.opts.push_back(sub->add_option("--diversity-penalty", o.diversity_penalty, "group diversity penalty"));
    o.opts.push_back(sub->add_option("--top-k", o.top_k, "results per context K"));
    o.opts.push_back(sub->add_option("--popularity-blend", o.popularity_blend,
                                     "suffix popularity-rank penalty weight"));
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    for (auto& x : split(s, ',')) {
        if (!x.empty()) {
            out.push_back(x);
        }
    }
    return out;
}

inline void apply(const Overrides& o, RunConfig& c, std::vector<std::string>& problems) {
    auto& e = c.experiment;
    if (o.given("--out")) {
        c.out = fs::path(o.out).lexically_normal();
    }
    if (o.given("--workers")) {
        e.workers = o.workers == 0 ? default_workers() : o.workers;
    }
    if (o.given("--strategies")) {
        e.strategies = split_list(o.strategies);
    }
    if (o.given("--seeds")) {
        e.seeds.clear();
        for (const auto& s : split_list(o.seeds)) {
            try {
                e.seeds.push_back(static_cast<std::uint64_t>(std::stoull(s)));
            } catch (const std::exception&) {
                problems.push_back("--seeds: '" + s + "' is not an integer");
            }
        }
    }
    if (o.given("--kind")) {
        try {
            e.quantizer.kind = parse_quantizer_kind(o.kind);
        } catch (const Error& err) {
            problems.push_back(std::string("--kind: ") + err.what());
        }
    }
    if (o.given("--levels")) {
        e.quantizer.levels = o.levels;
    }
    if (o.given("--k")) {
        e.quantizer.k = o.k;
    }
    if (o.given("--max-iters")) {
        e.quantizer.max_iters = o.max_iters;
    }
    if (o.given("--beam-width")) {
        e.decoding.beam_width = o.beam_width;
    }
    if (o.given("--groups")) {
        e.decoding.groups = o.groups;
    }
    if (o.given("--diversity-penalty")) {
        e.decoding.diversity_penalty = o.diversity_penalty;
    }
    if (o.given("--top-k")) {
        e.decoding.top_k = o.top_k;
    }
    if (o.given("--popularity-blend")) {
        e.decoding.popularity_blend = o.popularity_blend;
    }
    if (o.given("--head-fraction")) {
        e.slices.head_fraction = o.head_fraction;
    }
}

inline RunConfig resolve_config(const Overrides& o, const std::vector<std::string>& extra_problems = {}) {
    std::vector<std::string> problems = extra_problems;
    RunConfig c;
    if (!o.config.empty()) {
        const fs::path p(o.config);
        if (!fs::exists(p)) {
            problems.push_back("config file does not exist: " + p.string());
        } else {
            c = load_run_config(p, problems);
        }
    } else {
        c.experiment.workers = default_workers();
    }
    apply(o, c, problems);
    validate_run_config(c, problems);
    if (!c.out) {
        problems.emplace_back("no output directory: set [run] out or pass --out");
    }
    SEMID_THROW_IF_NOT(problems.empty(), Errc::invalid_config, kCliStage, join_problems(problems));
    return c;
}

inline void echo_config(const RunConfig& c) {
    fs::create_directories(*c.out);
    write_text_file(*c.out / "effective_config.toml", toml_text(config_to_toml(c, true)));
}

inline std::string rank_line(const std::string& ctx, std::size_t rank, const std::string& item, double score) {
    return ctx + "\t" + std::to_string(rank) + "\t" + item + "\t" + format_double(score) + "\n";
}

} // namespace detail

/// Runs the CLI. Returns the process exit status.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
    using clock = std::chrono::steady_clock;
    CLI::App app{"semid: Semantic IDs for joint search and recommendation"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "semid 0.1.0");

    // synth
    SynthParams sp;
    std::string synth_out;
    std::size_t synth_workers = 0;
    auto* synth = app.add_subcommand("synth", "generate the synthetic dataset and a matching experiment.toml");
    synth->add_option("--seed", sp.seed, "generator seed")->capture_default_str();
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--n-items", sp.n_items, "catalog size")->capture_default_str();
    synth->add_option("--n-users", sp.n_users, "number of users")->capture_default_str();
    synth->add_option("--n-topics", sp.n_topics, "number of topics")->capture_default_str();
    synth->add_option("--content-dim", sp.content_dim, "content/search embedding dim")->capture_default_str();
    synth->add_option("--topic-spread", sp.topic_spread, "item spread around its topic")->capture_default_str();
    synth->add_option("--content-noise", sp.content_noise, "query noise norm")->capture_default_str();
    synth->add_option("--cf-noise", sp.cf_noise, "chance of a uniformly random interaction")->capture_default_str();
    synth->add_option("--cf-alignment", sp.cf_alignment, "chance an item's collaborative topic is its content topic")
            ->capture_default_str();
    synth->add_option("--enmf-lr", sp.enmf_lr, "ENMF Adam learning rate")->capture_default_str();
    synth->add_option("--queries-per-item", sp.queries_per_item, "queries per item, half train half test")
            ->capture_default_str();
    synth->add_option("--interactions-per-user", sp.interactions_per_user, "interactions per user")
            ->capture_default_str();
    synth->add_option("--popularity-exponent", sp.popularity_exponent, "power-law exponent within topics")
            ->capture_default_str();
    synth->add_option("--rec-dim", sp.rec_dim, "ENMF embedding dim")->capture_default_str();
    synth->add_option("--enmf-epochs", sp.enmf_epochs, "ENMF epochs")->capture_default_str();
    synth->add_option("--workers", synth_workers, "worker threads (0 = SEMID_THREADS or all cores)");

    // ingest
    detail::Overrides o_ingest;
    auto* ingest = app.add_subcommand("ingest", "validate, align and l2-normalize every configured input");
    detail::add_common(ingest, o_ingest);

    // fuse
    detail::Overrides o_fuse;
    std::string fuse_kind = "svd_add";
    std::string fuse_search = "search";
    std::string fuse_rec = "rec";
    auto* fuse = app.add_subcommand("fuse", "build a fused cross-task space from a search and a rec space");
    detail::add_common(fuse, o_fuse);
    fuse->add_option("--kind", fuse_kind, "concat|svd_add")->capture_default_str();
    fuse->add_option("--search-space", fuse_search, "search-side [data.embeddings] entry")->capture_default_str();
    fuse->add_option("--rec-space", fuse_rec, "rec-side [data.embeddings] entry")->capture_default_str();

    // train-enmf
    detail::Overrides o_enmf;
    std::size_t e_dim = 0;
    std::size_t e_epochs = 0;
    double e_lr = 0.0;
    double e_cneg = 0.0;
    std::size_t e_batch = 0;
    std::string e_opt;
    std::uint64_t e_seed = 0;
    auto* enmf = app.add_subcommand("train-enmf", "train ENMF on the train split and export item embeddings");
    detail::add_common(enmf, o_enmf);
    auto* f_dim = enmf->add_option("--dim", e_dim, "embedding size");
    auto* f_epochs = enmf->add_option("--epochs", e_epochs, "training epochs");
    auto* f_lr = enmf->add_option("--lr", e_lr, "learning rate");
    auto* f_cneg = enmf->add_option("--c-neg", e_cneg, "weight of unobserved entries");
    auto* f_batch = enmf->add_option("--batch-users", e_batch, "users per update");
    auto* f_opt = enmf->add_option("--optimizer", e_opt, "gd|adam");
    auto* f_eseed = enmf->add_option("--seed", e_seed, "initialization and shuffling seed");

    // tokenize
    detail::Overrides o_tok;
    std::string tok_space;
    std::uint64_t tok_seed = 0;
    auto* tokenize = app.add_subcommand("tokenize", "fit residual codebooks on one space and write codes");
    detail::add_common(tokenize, o_tok);
    detail::add_quantizer_flags(tokenize, o_tok);
    tokenize->add_option("--space", tok_space, "[data.embeddings] entry to quantize")->required();
    auto* f_tseed = tokenize->add_option("--seed", tok_seed, "quantizer seed (default: first experiment seed)");

    // build-ids
    detail::Overrides o_ids;
    std::string ids_strategy;
    std::uint64_t ids_seed = 0;
    auto* build_ids = app.add_subcommand("build-ids", "assign Semantic IDs for one strategy and save the index");
    detail::add_common(build_ids, o_ids);
    detail::add_quantizer_flags(build_ids, o_ids);
    build_ids->add_option("--strategy", ids_strategy, "content|search|rec|separate|prefix_share|fused_concat|"
                                                      "fused_svd|multitask")
            ->required();
    auto* f_iseed = build_ids->add_option("--seed", ids_seed, "quantizer seed (default: first experiment seed)");

    // retrieve
    detail::Overrides o_ret;
    std::string ret_task;
    std::string ret_ids;
    std::string ret_split = "test";
    std::string ret_user_factors;
    bool ret_include_history = false;
    auto* retrieve = app.add_subcommand("retrieve", "decode rankings for every search query or rec user");
    detail::add_common(retrieve, o_ret);
    detail::add_decoding_flags(retrieve, o_ret);
    retrieve->add_option("--task", ret_task, "search|rec")->required()->check(CLI::IsMember({"search", "rec"}));
    retrieve->add_option("--ids", ret_ids, "index directory written by build-ids")->required();
    retrieve->add_option("--split", ret_split, "query split for --task search: test|train")
            ->capture_default_str()
            ->check(CLI::IsMember({"test", "train"}));
    retrieve->add_option("--user-factors", ret_user_factors,
                         "ENMF model whose user factors replace mean-of-history for the 'rec' chain");
    retrieve->add_flag("--include-history", ret_include_history, "keep users' train items in rec results");

    // evaluate
    detail::Overrides o_eval;
    auto* evaluate = app.add_subcommand("evaluate", "run the strategy x seed grid and write the report");
    detail::add_common(evaluate, o_eval);
    detail::add_quantizer_flags(evaluate, o_eval);
    detail::add_decoding_flags(evaluate, o_eval);
    o_eval.opts.push_back(evaluate->add_option("--strategies", o_eval.strategies, "comma-separated strategies"));
    o_eval.opts.push_back(evaluate->add_option("--seeds", o_eval.seeds, "comma-separated seeds"));
    o_eval.opts.push_back(evaluate->add_option("--head-fraction", o_eval.head_fraction, "head slice fraction"));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    const auto t0 = clock::now();
    try {
        if (synth->parsed()) {
            const fs::path dir = fs::path(synth_out).lexically_normal();
            const auto ds = synth_generate(sp, synth_workers == 0 ? default_workers() : synth_workers);
            const auto written = save_synth(dir, ds, sp);
            append_manifest(dir, "synth", sha256_hex(sp.describe().dump()), {sp.seed}, {}, written, t0);
            out << "wrote " << written.size() << " files to " << dir.string() << "\n";
            return 0;
        }

        if (ingest->parsed()) {
            const auto c = detail::resolve_config(o_ingest);
            auto d = load_config_data(c);
            detail::echo_config(c);
            std::vector<fs::path> w;
            save_catalog(*c.out / "catalog.tsv", d.catalog);
            w.push_back(*c.out / "catalog.tsv");
            json summary{{"catalog", d.catalog.fingerprint()}, {"n_items", d.catalog.size()}};
            for (const auto& [name, m] : d.spaces) {
                const auto f = *c.out / ("emb_" + name + ".npy");
                write_npy(f, l2_normalize(m).data);
                w.push_back(f);
                summary["spaces"][name] = {{"dim", m.dim()}};
            }
            if (d.log) {
                std::size_t with_test = 0;
                for (std::size_t u = 0; u < d.log->n_users(); ++u) {
                    with_test += d.log->test_item(u).has_value() ? 1 : 0;
                }
                summary["n_users"] = d.log->n_users();
                summary["users_with_test"] = with_test;
            }
            if (!d.queries.records.empty()) {
                std::size_t tr = 0;
                std::size_t te = 0;
                for (const auto& [a, b] : d.queries.counts_per_item(d.catalog.size())) {
                    tr += a;
                    te += b;
                }
                summary["queries"] = {{"train", tr}, {"test", te}};
                for (const auto& [name, m] : d.queries.embeddings) {
                    summary["query_spaces"][name] = {{"dim", m.dim()}};
                }
            }
            write_text_file(*c.out / "ingest_summary.json", summary.dump(2) + "\n");
            w.push_back(*c.out / "ingest_summary.json");
            append_manifest(*c.out, "ingest", config_hash(c), c.experiment.seeds, config_inputs(c), w, t0);
            out << summary.dump(2) << "\n";
            return 0;
        }

        if (fuse->parsed()) {
            std::vector<std::string> pre;
            if (fuse_kind != "concat" && fuse_kind != "svd_add") {
                pre.push_back("--kind must be concat or svd_add, got '" + fuse_kind + "'");
            }
            const auto c = detail::resolve_config(o_fuse, pre);
            const auto catalog = load_config_catalog(c);
            const auto a = l2_normalize(load_config_space(c, catalog, fuse_search));
            const auto b = l2_normalize(load_config_space(c, catalog, fuse_rec));
            detail::echo_config(c);
            std::vector<fs::path> w;
            EmbeddingMatrix fused;
            FusionSpec spec;
            if (fuse_kind == "concat") {
                fused = fuse_concat(a, b);
                spec = concat_spec(a.dim(), b.dim());
            } else {
                std::tie(fused, spec) = fuse_svd_add(a, b);
            }
            write_npy(*c.out / ("fused_" + fuse_kind + ".npy"), fused.data);
            w.push_back(*c.out / ("fused_" + fuse_kind + ".npy"));
            if (spec.projector) {
                save_projector(*c.out / "projector.bin", *spec.projector);
                w.push_back(*c.out / "projector.bin");
            }
            write_text_file(*c.out / "fusion_spec.json", spec.describe().dump(2) + "\n");
            w.push_back(*c.out / "fusion_spec.json");
            append_manifest(*c.out, "fuse", config_hash(c), {}, config_inputs(c), w, t0);
            out << spec.describe().dump() << "\n";
            return 0;
        }

        if (enmf->parsed()) {
            std::vector<std::string> pre;
            auto c = [&] {
                detail::Overrides& o = o_enmf;
                auto cfg = detail::resolve_config(o, pre);
                if (f_dim->count() > 0) {
                    cfg.enmf.d = e_dim;
                }
                if (f_epochs->count() > 0) {
                    cfg.enmf.epochs = e_epochs;
                }
                if (f_lr->count() > 0) {
                    cfg.enmf.lr = e_lr;
                }
                if (f_cneg->count() > 0) {
                    cfg.enmf.c_neg = e_cneg;
                }
                if (f_batch->count() > 0) {
                    cfg.enmf.batch_users = e_batch;
                }
                if (f_opt->count() > 0) {
                    cfg.enmf.optimizer = detail::parse_optimizer(e_opt);
                }
                if (f_eseed->count() > 0) {
                    cfg.enmf.seed = e_seed;
                }
                std::vector<std::string> problems;
                validate_run_config(cfg, problems);
                if (!cfg.interactions) {
                    problems.emplace_back("[data] interactions is required for train-enmf");
                }
                SEMID_THROW_IF_NOT(problems.empty(), Errc::invalid_config, kCliStage,
                                   detail::join_problems(problems));
                return cfg;
            }();
            auto catalog = load_config_catalog(c);
            const auto log = load_interactions(*c.interactions, catalog);
            detail::echo_config(c);
            EnmfConfig ec = c.enmf;
            ec.workers = c.workers();
            const auto model = train_enmf(log, ec);
            std::vector<fs::path> w{*c.out / "enmf.bin", *c.out / "emb_rec.npy"};
            save_enmf(w[0], model);
            write_npy(w[1], item_embeddings(model).data);
            append_manifest(*c.out, "train-enmf", config_hash(c), {ec.seed}, config_inputs(c), w, t0);
            out << "loss " << format_double(enmf_loss_efficient(model, EnmfData::from_log(log), ec.workers))
                << "\n";
            return 0;
        }

        if (tokenize->parsed()) {
            const auto c = detail::resolve_config(o_tok);
            const auto catalog = load_config_catalog(c);
            const auto m = l2_normalize(load_config_space(c, catalog, tok_space));
            const std::uint64_t seed = f_tseed->count() > 0 ? tok_seed : c.experiment.seeds.front();
            detail::echo_config(c);
            const auto& q = c.experiment.quantizer;
            RqFit fit = q.kind == QuantizerKind::rq_kmeans
                    ? rq_fit_detailed(m, q.levels, q.k, q.max_iters, seed, c.workers())
                    : rlfq_fit_detailed(m, q.levels);
            fit.codebooks.seed = seed;
            std::vector<fs::path> w{*c.out / ("codebooks_" + tok_space + ".bin"),
                                    *c.out / ("codes_" + tok_space + ".tsv")};
            save_codebooks(w[0], fit.codebooks);
            save_codes(w[1], catalog, disambiguate(fit.codes));
            append_manifest(*c.out, "tokenize", config_hash(c), {seed}, config_inputs(c), w, t0);
            json mse = fit.codebooks.level_mse;
            out << "level_mse " << mse.dump() << "\n";
            return 0;
        }

        if (build_ids->parsed()) {
            const auto c = detail::resolve_config(o_ids);
            const auto d = load_config_data(c);
            const std::uint64_t seed = f_iseed->count() > 0 ? ids_seed : c.experiment.seeds.front();
            detail::echo_config(c);
            const auto b = build_strategy(ids_strategy, d, c.experiment.quantizer, seed, c.workers());
            const auto w = save_index(*c.out, d.catalog, b);
            append_manifest(*c.out, "build-ids", config_hash(c), {seed}, config_inputs(c), w, t0);
            out << ids_strategy << ": " << b.index.assignment.vocab.code_budget() << " code tokens, "
                << b.index.assignment.vocab.suffix_count() << " suffix tokens\n";
            return 0;
        }

        if (retrieve->parsed()) {
            const auto c = detail::resolve_config(o_ret);
            const auto d = load_config_data(c);
            const auto b = load_index(ret_ids, d.catalog);
            detail::echo_config(c);
            const auto& cfg = c.experiment.decoding;
            std::vector<std::string> ctx_ids;
            std::vector<std::vector<Hit>> results;
            if (ret_task == "search") {
                const auto qs = d.queries.indices(parse_split(ret_split));
                SEMID_THROW_IF_NOT(!qs.empty(), Errc::empty_input, kCliStage, "no queries in split " + ret_split);
                results.resize(qs.size());
                parallel_for(qs.size(), [&](std::size_t k) { results[k] = retrieve_search(b.index, d.queries, qs[k], cfg); },
                             c.workers());
                for (const auto q : qs) {
                    ctx_ids.push_back(d.queries.records[q].query_id);
                }
            } else {
                SEMID_THROW_IF_NOT(d.log != nullptr, Errc::invalid_config, kCliStage,
                                   "[data] interactions is required for --task rec");
                std::optional<EnmfModel> factors;
                if (!ret_user_factors.empty()) {
                    factors = load_enmf(ret_user_factors);
                    SEMID_THROW_IF_NOT(factors->n_users() == d.log->n_users(), Errc::shape_mismatch, kCliStage,
                                       "user factors do not match the interaction log");
                }
                std::vector<std::size_t> users;
                for (std::size_t u = 0; u < d.log->n_users(); ++u) {
                    if (!d.log->train_items(u).empty()) {
                        users.push_back(u);
                    }
                }
                RecContextOptions opt;
                opt.exclude_history = !ret_include_history;
                opt.user_factors = factors ? &factors->P : nullptr;
                results.resize(users.size());
                parallel_for(users.size(),
                             [&](std::size_t k) { results[k] = retrieve_rec(b.index, *d.log, users[k], cfg, opt); },
                             c.workers());
                for (const auto u : users) {
                    ctx_ids.push_back(d.log->user_ids()[u]);
                }
            }
            std::string tsv = "context_id\trank\titem_id\tscore\n";
            for (std::size_t k = 0; k < results.size(); ++k) {
                for (std::size_t r = 0; r < results[k].size(); ++r) {
                    tsv += detail::rank_line(ctx_ids[k], r + 1, d.catalog[results[k][r].item].item_id,
                                             results[k][r].score);
                }
            }
            const fs::path f = *c.out / ("rankings_" + ret_task + ".tsv");
            write_text_file(f, tsv);
            auto inputs = config_inputs(c);
            for (const auto& e : fs::directory_iterator(ret_ids)) {
                if (e.is_regular_file() && e.path().filename() != "manifest.jsonl" &&
                    e.path().filename() != "effective_config.toml") {
                    inputs.push_back(e.path());
                }
            }
            std::sort(inputs.begin(), inputs.end());
            append_manifest(*c.out, "retrieve", config_hash(c), {b.seed}, inputs, {f}, t0);
            out << "wrote " << results.size() << " rankings to " << f.string() << "\n";
            return 0;
        }

        if (evaluate->parsed()) {
            const auto c = detail::resolve_config(o_eval);
            const auto d = load_config_data(c);
            SEMID_THROW_IF_NOT(d.log != nullptr, Errc::invalid_config, kCliStage,
                               "[data] interactions is required for evaluate");
            detail::echo_config(c);
            const auto rep = run_experiment(d, c.experiment);
            std::vector<fs::path> w{*c.out / "report.json", *c.out / "report.md"};
            write_text_file(w[0], report_json(rep).dump(2) + "\n");
            write_text_file(w[1], report_markdown(rep));
            append_manifest(*c.out, "evaluate", config_hash(c), c.experiment.seeds, config_inputs(c), w, t0);
            out << report_markdown(rep);
            return 0;
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return e.code() == Errc::invalid_config ? 2 : 1;
    } catch (const std::exception& e) {
        err << "error: [internal] " << e.what() << "\n";
        return 1;
    }
    return 1;
}

} // namespace semid
