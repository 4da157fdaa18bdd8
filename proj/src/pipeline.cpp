#include "dift/pipeline.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "dift/error.hpp"

namespace dift {
namespace {

namespace fs = std::filesystem;

constexpr std::string_view kDigestTag = "dift-pipeline-v1";

template <class T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const auto* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError("invalid value for " + key + ": '" + value + "'");
    }
    return out;
}

double parse_double(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    double d = 0.0;
    try {
        d = std::stod(value, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != value.size() || value.empty()) {
        throw ConfigError("invalid value for " + key + ": '" + value + "'");
    }
    return d;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
    if (value == "false" || value == "0" || value == "no" || value == "off") return false;
    throw ConfigError("invalid boolean for " + key + ": '" + value + "'");
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

std::string double_str(double d) { return fmt::format("{}", d); }

struct Setting {
    std::string key;
    bool is_path;
    std::function<void(PipelineConfig&, const std::string&)> set;
    std::function<std::string(const PipelineConfig&)> get;
};

#define DIFT_SIZE(KEY, FIELD)                                                                         \
    Setting {                                                                                         \
        KEY, false, [](PipelineConfig& c, const std::string& v) { c.FIELD = parse_number<std::size_t>(KEY, v); }, \
            [](const PipelineConfig& c) { return std::to_string(c.FIELD); }                           \
    }
#define DIFT_U64(KEY, FIELD)                                                                          \
    Setting {                                                                                         \
        KEY, false, [](PipelineConfig& c, const std::string& v) { c.FIELD = parse_number<std::uint64_t>(KEY, v); }, \
            [](const PipelineConfig& c) { return std::to_string(c.FIELD); }                           \
    }
#define DIFT_DOUBLE(KEY, FIELD)                                                                       \
    Setting {                                                                                         \
        KEY, false, [](PipelineConfig& c, const std::string& v) { c.FIELD = parse_double(KEY, v); },   \
            [](const PipelineConfig& c) { return double_str(c.FIELD); }                               \
    }
#define DIFT_BOOL(KEY, FIELD)                                                                         \
    Setting {                                                                                         \
        KEY, false, [](PipelineConfig& c, const std::string& v) { c.FIELD = parse_bool(KEY, v); },     \
            [](const PipelineConfig& c) { return bool_str(c.FIELD); }                                 \
    }
#define DIFT_PATH(KEY, FIELD)                                                                         \
    Setting {                                                                                         \
        KEY, true, [](PipelineConfig& c, const std::string& v) { c.FIELD = v; },                      \
            [](const PipelineConfig& c) { return c.FIELD.string(); }                                  \
    }

const std::vector<Setting>& settings() {
    static const std::vector<Setting> table = {
        DIFT_PATH("data.dataset_dir", dataset_dir),
        DIFT_PATH("data.workdir", workdir),
        DIFT_SIZE("run.threads", threads),

        DIFT_SIZE("embedder.dim", embedder.dim),
        DIFT_DOUBLE("embedder.learning_rate", embedder.learning_rate),
        DIFT_DOUBLE("embedder.margin", embedder.margin),
        DIFT_SIZE("embedder.epochs", embedder.epochs),
        DIFT_SIZE("embedder.negatives", embedder.negatives_per_positive),
        DIFT_U64("embedder.seed", embedder.seed),
        DIFT_SIZE("embedder.batch_size", embedder.batch_size),
        Setting{"embedder.norm", false,
                [](PipelineConfig& c, const std::string& v) {
                    if (v == "l1") c.embedder.norm = NormKind::L1;
                    else if (v == "l2") c.embedder.norm = NormKind::L2;
                    else throw ConfigError("embedder.norm must be l1 or l2");
                },
                [](const PipelineConfig& c) { return std::string(c.embedder.norm == NormKind::L1 ? "l1" : "l2"); }},

        DIFT_SIZE("ranker.m", ranker.m),
        DIFT_DOUBLE("ranker.alpha", ranker.alpha),
        DIFT_DOUBLE("ranker.beta", ranker.beta),
        Setting{"ranker.local_confidence", false,
                [](PipelineConfig& c, const std::string& v) {
                    if (v == "minmax") c.ranker.local = LocalScore::MinMax;
                    else if (v == "raw") c.ranker.local = LocalScore::Raw;
                    else throw ConfigError("ranker.local_confidence must be minmax or raw");
                },
                [](const PipelineConfig& c) {
                    return std::string(c.ranker.local == LocalScore::MinMax ? "minmax" : "raw");
                }},

        DIFT_SIZE("instruct.gamma", instruct.gamma),
        DIFT_SIZE("instruct.max_description_chars", instruct.max_description_chars),
        DIFT_BOOL("instruct.shuffle_candidates", instruct.shuffle_candidates),
        DIFT_U64("instruct.shuffle_seed", instruct.shuffle_seed),
        DIFT_BOOL("instruct.drop_description", instruct.drop_description),
        DIFT_BOOL("instruct.drop_neighbors", instruct.drop_neighbors),
        DIFT_BOOL("instruct.rc_sampling", instruct.rc_sampling),
        DIFT_U64("instruct.neighbor_seed", instruct.neighbor_seed),
        DIFT_U64("instruct.split_seed", split_seed),

        DIFT_SIZE("adapter.d1", adapter_d1),
        DIFT_SIZE("adapter.d2", adapter_d2),
        Setting{"adapter.activation", false,
                [](PipelineConfig& c, const std::string& v) {
                    if (v == "swiglu") c.adapter_activation = Activation::SwiGLU;
                    else if (v == "silu") c.adapter_activation = Activation::SiLU;
                    else throw ConfigError("adapter.activation must be swiglu or silu");
                },
                [](const PipelineConfig& c) {
                    return std::string(c.adapter_activation == Activation::SwiGLU ? "swiglu" : "silu");
                }},
        DIFT_U64("adapter.seed", adapter_seed),
        DIFT_PATH("adapter.params_file", adapter_file),

        Setting{"discriminator.backend", false,
                [](PipelineConfig& c, const std::string& v) {
                    if (v != "oracle" && v != "first_candidate" && v != "scripted" && v != "remote") {
                        throw ConfigError("discriminator.backend must be oracle, first_candidate, scripted or remote");
                    }
                    c.backend = v;
                },
                [](const PipelineConfig& c) { return c.backend; }},
        DIFT_PATH("discriminator.script_file", script_file),
        Setting{"discriminator.endpoint", false, [](PipelineConfig& c, const std::string& v) { c.remote.endpoint = v; },
                [](const PipelineConfig& c) { return c.remote.endpoint; }},
        Setting{"discriminator.model", false, [](PipelineConfig& c, const std::string& v) { c.remote.model = v; },
                [](const PipelineConfig& c) { return c.remote.model; }},
        Setting{"discriminator.token_env", false,
                [](PipelineConfig& c, const std::string& v) { c.remote.token_env = v; },
                [](const PipelineConfig& c) { return c.remote.token_env; }},
        Setting{"discriminator.timeout_ms", false,
                [](PipelineConfig& c, const std::string& v) {
                    c.remote.timeout = std::chrono::milliseconds(parse_number<std::int64_t>("discriminator.timeout_ms", v));
                },
                [](const PipelineConfig& c) { return std::to_string(c.remote.timeout.count()); }},
        DIFT_SIZE("discriminator.retries", remote.retries),
        Setting{"discriminator.backoff_ms", false,
                [](PipelineConfig& c, const std::string& v) {
                    c.remote.backoff = std::chrono::milliseconds(parse_number<std::int64_t>("discriminator.backoff_ms", v));
                },
                [](const PipelineConfig& c) { return std::to_string(c.remote.backoff.count()); }},
        DIFT_SIZE("discriminator.max_in_flight", remote.max_in_flight),
        DIFT_DOUBLE("discriminator.temperature", remote.temperature),

        DIFT_SIZE("eval.max_queries", max_queries),
        DIFT_BOOL("eval.audit", audit),
    };
    return table;
}

#undef DIFT_SIZE
#undef DIFT_U64
#undef DIFT_DOUBLE
#undef DIFT_BOOL
#undef DIFT_PATH

const Setting& find_setting(const std::string& key) {
    for (const auto& s : settings()) {
        if (s.key == key) return s;
    }
    throw ConfigError("unknown config key '" + key + "'");
}

void validate(const PipelineConfig& c) {
    validate(c.embedder);
    if (c.ranker.m < 1) throw ConfigError("ranker.m must be >= 1");
    if (c.ranker.alpha < 0.0 || c.ranker.beta < 0.0) throw ConfigError("ranker.alpha and ranker.beta must be >= 0");
    if (c.threads < 1) throw ConfigError("run.threads must be >= 1");
    if (c.adapter_d2 < 1) throw ConfigError("adapter.d2 must be >= 1");
    if (c.backend == "scripted" && c.script_file.empty()) {
        throw ConfigError("discriminator.backend = scripted requires discriminator.script_file");
    }
    if (c.backend == "remote" && (c.remote.endpoint.empty() || c.remote.model.empty())) {
        throw ConfigError("discriminator.backend = remote requires discriminator.endpoint and discriminator.model");
    }
    if (c.remote.max_in_flight < 1) throw ConfigError("discriminator.max_in_flight must be >= 1");
}

/// Lines of canonical_config restricted to the given section prefixes.
std::string config_slice(const PipelineConfig& c, std::initializer_list<std::string_view> sections) {
    std::string out;
    for (const auto& s : settings()) {
        if (s.is_path || s.key == "run.threads") continue;
        for (auto prefix : sections) {
            if (s.key.starts_with(std::string(prefix) + ".")) {
                out += s.key + "=" + s.get(c) + "\n";
                break;
            }
        }
    }
    return out;
}

std::string short_digest(const std::string& hex) { return hex.substr(0, 16); }

struct StageDir {
    fs::path final_dir;
    fs::path tmp_dir;
};

/// True when a complete, manifest-verified output already exists.
bool stage_complete(const fs::path& dir, const std::string& digest) {
    const auto manifest = dir / "manifest.json";
    if (!fs::exists(manifest)) return false;
    try {
        std::ifstream in(manifest);
        const auto j = nlohmann::json::parse(in);
        if (j.at("digest").get<std::string>() != digest) return false;
        for (const auto& [name, _] : j.at("files").items()) {
            if (!fs::exists(dir / name)) return false;
        }
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

StageDir prepare_stage(const PipelineConfig& c, std::string_view stage, const std::string& digest) {
    StageDir d;
    d.final_dir = c.workdir / stage / short_digest(digest);
    d.tmp_dir = c.workdir / stage / (short_digest(digest) + ".tmp");
    fs::remove_all(d.tmp_dir);
    fs::create_directories(d.tmp_dir);
    return d;
}

/// Writes manifest.json last, then moves the directory into place.
void commit_stage(const StageDir& d, std::string_view stage, const std::string& digest,
                  const nlohmann::ordered_json& extra) {
    nlohmann::ordered_json m;
    m["stage"] = stage;
    m["digest"] = digest;
    for (const auto& [k, v] : extra.items()) m[k] = v;
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(d.tmp_dir)) names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    auto& files = m["files"] = nlohmann::ordered_json::object();
    for (const auto& n : names) files[n] = sha256_file(d.tmp_dir / n);
    {
        std::ofstream out(d.tmp_dir / "manifest.json", std::ios::binary | std::ios::trunc);
        out << m.dump(2) << '\n';
    }
    fs::remove_all(d.final_dir);
    fs::rename(d.tmp_dir, d.final_dir);
}

std::string embeddings_digest(const PipelineConfig& c, const std::string& data_digest) {
    return sha256_hex(fmt::format("{}\nstage=embeddings\ndataset={}\n{}", kDigestTag, data_digest,
                                  config_slice(c, {"embedder"})));
}

void write_text(const fs::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
}

nlohmann::ordered_json summary_json(const BuildSummary& s) {
    nlohmann::ordered_json j;
    j["which"] = s.which;
    j["source_triples"] = s.source_triples;
    j["queries_before_truncation"] = s.queries;
    j["kept"] = s.kept;
    j["holdout_triples"] = s.holdout_triples;
    j["holdout_queries"] = s.holdout_queries;
    j["gold_in_candidates"] = s.gold_in_candidates;
    j["mean_prompt_chars"] = s.mean_prompt_chars;
    auto& sections = j["sections"];
    sections["description"] = s.description_dropped ? "dropped" : "kept";
    sections["neighbors"] = s.neighbors_dropped ? "dropped" : "kept";
    j["neighbor_sampling"] = s.rc_sampling ? "relation_cooccurrence" : "random";
    j["candidates_shuffled"] = s.candidates_shuffled;
    j["template"] = kTemplateVersion;
    return j;
}

}  // namespace

std::string sha256_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 failed");
    }
    std::string hex;
    hex.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
    return hex;
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return sha256_hex(ss.str());
}

std::string dataset_digest(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("dataset directory not found: " + dir.string());
    std::string acc;
    for (std::string_view name : {"entities.txt", "entity2text.txt", "entity2textlong.txt", "relations.txt",
                                  "relation2text.txt", "train.txt", "train.tsv", "valid.txt", "dev.tsv", "valid.tsv",
                                  "test.txt", "test.tsv"}) {
        const auto p = dir / name;
        if (fs::exists(p)) acc += fmt::format("{}={}\n", name, sha256_file(p));
    }
    return sha256_hex(acc);
}

PipelineConfig load_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
    PipelineConfig c;
    if (file) {
        if (!fs::exists(*file)) throw ConfigError("config file not found: " + file->string());
        boost::property_tree::ptree tree;
        try {
            boost::property_tree::ini_parser::read_ini(file->string(), tree);
        } catch (const boost::property_tree::ini_parser_error& e) {
            throw ConfigError(std::string("cannot parse config: ") + e.what());
        }
        const auto base = file->parent_path();
        for (const auto& [section, body] : tree) {
            if (!body.data().empty()) throw ConfigError("config key '" + section + "' must be inside a [section]");
            for (const auto& [key, value] : body) {
                const auto full = section + "." + key;
                const auto& s = find_setting(full);
                auto v = value.get_value<std::string>();
                if (s.is_path && !v.empty() && fs::path(v).is_relative()) v = (base / v).lexically_normal().string();
                s.set(c, v);
            }
        }
    }
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("override must be section.key=value: '" + o + "'");
        find_setting(o.substr(0, eq)).set(c, o.substr(eq + 1));
    }
    validate(c);
    return c;
}

std::string canonical_config(const PipelineConfig& c) {
    std::string out;
    for (const auto& s : settings()) {
        if (s.is_path || s.key == "run.threads") continue;
        out += s.key + "=" + s.get(c) + "\n";
    }
    return out;
}

StageResult run_train_embeddings(const PipelineConfig& c) {
    const auto data_digest = dataset_digest(c.dataset_dir);
    const auto digest = embeddings_digest(c, data_digest);
    const auto dir = c.workdir / "embeddings" / short_digest(digest);
    if (stage_complete(dir, digest)) {
        spdlog::info("embeddings up to date: {}", dir.string());
        return {dir, digest, true};
    }
    const auto kg = load_kg(c.dataset_dir);
    spdlog::info("training TransE: |E|={} |R|={} |train|={} epochs={}", kg.num_entities(), kg.num_relations(),
                 kg.train().size(), c.embedder.epochs);
    double last_loss = 0.0;
    const auto table = train_transe(kg, c.embedder, [&](std::size_t, double loss) { last_loss = loss; });

    const auto stage = prepare_stage(c, "embeddings", digest);
    save_checkpoint(table, stage.tmp_dir / "checkpoint.bin");
    nlohmann::ordered_json extra;
    extra["dataset_digest"] = data_digest;
    extra["seed"] = c.embedder.seed;
    extra["config"] = config_slice(c, {"embedder"});
    extra["final_epoch_loss"] = last_loss;
    commit_stage(stage, "embeddings", digest, extra);
    return {stage.final_dir, digest, false};
}

StageResult run_build(const PipelineConfig& c, BuildKind kind) {
    const auto emb = run_train_embeddings(c);
    const std::string_view name = kind == BuildKind::Eval ? "build-eval" : "build-finetune";
    const auto slice = config_slice(c, {"ranker", "instruct", "eval"});
    const auto digest = sha256_hex(fmt::format("{}\nstage={}\nembeddings={}\n{}", kDigestTag, name, emb.digest, slice));
    const auto dir = c.workdir / name / short_digest(digest);
    if (stage_complete(dir, digest)) {
        spdlog::info("{} up to date: {}", name, dir.string());
        return {dir, digest, true};
    }
    const auto kg = load_kg(c.dataset_dir);
    const TransE model(load_checkpoint(emb.dir / "checkpoint.bin"));
    const auto stage = prepare_stage(c, name, digest);

    BuildSummary summary;
    if (kind == BuildKind::Eval) {
        const auto set = build_eval_set(kg, model, c.ranker, c.instruct, &summary, c.threads, c.max_queries);
        write_instruction_set(set, stage.tmp_dir, "eval", c.embedder.norm);
    } else {
        const auto sets = build_finetune_set(kg, model, c.ranker, c.instruct, c.split_seed, c.threads);
        write_instruction_set(sets.finetune, stage.tmp_dir, "finetune", c.embedder.norm);
        write_instruction_set(sets.holdout, stage.tmp_dir, "holdout", c.embedder.norm);
        summary = sets.summary;
    }
    write_text(stage.tmp_dir / "summary.json", summary_json(summary).dump(2) + "\n");
    spdlog::info("{}: {} queries, {} kept", name, summary.queries, summary.kept);

    nlohmann::ordered_json extra;
    extra["embeddings"] = emb.digest;
    extra["config"] = slice;
    commit_stage(stage, name, digest, extra);
    return {stage.final_dir, digest, false};
}

std::unique_ptr<Discriminator> make_discriminator(const PipelineConfig& c) {
    if (c.backend == "oracle") return std::make_unique<OracleDiscriminator>();
    if (c.backend == "first_candidate") return std::make_unique<FirstCandidateDiscriminator>();
    if (c.backend == "scripted") {
        return std::make_unique<ScriptedDiscriminator>(ScriptedDiscriminator::from_file(c.script_file));
    }
    return std::make_unique<RemoteDiscriminator>(c.remote);
}

StageResult run_evaluate(const PipelineConfig& c) {
    const auto emb = run_train_embeddings(c);
    auto slice = config_slice(c, {"ranker", "instruct", "eval", "discriminator"});
    if (c.backend == "scripted") slice += "script_digest=" + sha256_file(c.script_file) + "\n";
    const auto digest = sha256_hex(fmt::format("{}\nstage=evaluate\nembeddings={}\n{}", kDigestTag, emb.digest, slice));
    const auto dir = c.workdir / "evaluate" / short_digest(digest);
    if (stage_complete(dir, digest)) {
        spdlog::info("evaluation up to date: {}", dir.string());
        return {dir, digest, true};
    }
    const auto kg = load_kg(c.dataset_dir);
    const TransE model(load_checkpoint(emb.dir / "checkpoint.bin"));
    const auto backend = make_discriminator(c);
    const auto stage = prepare_stage(c, "evaluate", digest);

    std::vector<AuditRecord> audit;
    const auto report =
        evaluate(kg, model, *backend, c.ranker, c.instruct, EvalOptions{c.threads, c.max_queries}, &audit);
    write_text(stage.tmp_dir / "report.json", to_json(report).dump(2) + "\n");
    write_text(stage.tmp_dir / "report.txt", format_report(report));
    if (c.audit) write_audit_file(audit, stage.tmp_dir / "audit.jsonl");

    nlohmann::ordered_json extra;
    extra["embeddings"] = emb.digest;
    extra["config"] = slice;
    commit_stage(stage, "evaluate", digest, extra);
    return {stage.final_dir, digest, false};
}

std::string inspect_sample(const PipelineConfig& c, const fs::path& instruction_file, std::optional<std::size_t> index,
                           std::optional<std::string> id) {
    const auto records = read_instruction_file(instruction_file);
    const InstructionRecord* rec = nullptr;
    if (id) {
        for (const auto& r : records) {
            if (r.id == *id) rec = &r;
        }
        if (!rec) throw DataError("no sample with id " + *id);
    } else {
        const auto i = index.value_or(0);
        if (i >= records.size()) {
            throw DataError(fmt::format("index {} out of range ({} samples)", i, records.size()));
        }
        rec = &records[i];
    }

    std::string out;
    out += fmt::format("id:         {}\n", rec->id);
    out += fmt::format("direction:  {}\n", to_string(rec->direction));
    out += fmt::format("gold:       {} (id {}, base rank {})\n", rec->gold_name, rec->gold_id.value, rec->gold_rank);
    out += fmt::format("candidates: {}\n", rec->candidate_ids.size());
    out += "---- prompt ----\n" + rec->prompt + "\n----------------\n";

    auto stem = instruction_file.filename().string();
    if (stem.ends_with(".jsonl")) stem.resize(stem.size() - 6);
    const auto sidecar_path = instruction_file.parent_path() / (stem + ".knowledge.bin");
    if (fs::exists(sidecar_path)) {
        const auto sidecar = load_sidecar(sidecar_path);
        const auto d2 = c.adapter_d2;
        const auto d1 = c.adapter_d1 == 0 ? std::max<std::size_t>(1, d2 / 2) : c.adapter_d1;
        const auto params = c.adapter_file.empty()
                                ? init_adapter(sidecar.dim, d1, d2, c.adapter_activation, c.adapter_seed)
                                : load_adapter(c.adapter_file);
        const auto vectors = attach_knowledge(rec->knowledge_ref_offsets, sidecar, params);
        out += fmt::format("knowledge:  {} vectors (1 query + {} candidates), d0={} -> d2={}\n", vectors.size(),
                           vectors.size() - 1, sidecar.dim, params.d2);
    }
    return out;
}

}  // namespace dift
