#include "dift/instruct.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "dift/error.hpp"
#include "dift/parallel.hpp"

namespace dift {
namespace {

constexpr std::string_view kQueryPrefix = "Query: ";
constexpr std::string_view kDescriptionPrefix = "Description: ";
constexpr std::string_view kNeighborsHeader = "Neighbor facts:";

void replace_all(std::string& s, std::string_view from, std::string_view to) {
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
        s.replace(pos, from.size(), to);
    }
}

/// Ranks a batch of queries and turns each into a sample. Results are indexed
/// by query position; `keep` decides truncation.
struct BuiltQuery {
    InstructionSample sample;
    CandidateRecord candidates;
    double confidence = 0.0;
    bool gold_in_topm = false;
};

std::vector<BuiltQuery> build_queries(const KnowledgeGraph& kg, const EmbeddingModel& model,
                                      const ConfidenceParams& params, const BuildOptions& options,
                                      std::span<const Query> queries, std::span<const std::string> ids,
                                      std::size_t threads) {
    std::vector<BuiltQuery> out(queries.size());
    parallel_for(queries.size(), threads, [&](std::size_t i) {
        const auto rq = rank_query(model, kg, queries[i], params.m);
        auto& b = out[i];
        b.sample = make_sample(kg, rq, options, ids[i], i);
        b.candidates = to_candidate_record(rq);
        b.confidence = sample_confidence(rq, params);
        b.gold_in_topm = rq.gold_rank <= params.m;
    });
    return out;
}

void fill_summary_flags(BuildSummary& s, const BuildOptions& options) {
    s.description_dropped = options.drop_description;
    s.neighbors_dropped = options.drop_neighbors;
    s.rc_sampling = options.rc_sampling;
    s.candidates_shuffled = options.shuffle_candidates;
}

InstructionSet collect(const EmbeddingModel& model, std::vector<BuiltQuery>& built, const std::vector<bool>& keep,
                       BuildSummary* summary) {
    InstructionSet set;
    set.sidecar = std::make_shared<SidecarBuilder>(model);
    std::size_t prompt_chars = 0;
    for (std::size_t i = 0; i < built.size(); ++i) {
        if (!keep[i]) continue;
        auto& b = built[i];
        set.sidecar->add(b.sample);
        prompt_chars += render_prompt(b.sample).size();
        if (summary && b.gold_in_topm) ++summary->gold_in_candidates;
        set.samples.push_back(std::move(b.sample));
        set.candidates.push_back(std::move(b.candidates));
    }
    if (summary) {
        summary->kept += set.samples.size();
        summary->mean_prompt_chars =
            set.samples.empty() ? 0.0 : static_cast<double>(prompt_chars) / static_cast<double>(set.samples.size());
    }
    return set;
}

}  // namespace

std::vector<Triple> rc_sample_neighbors(const KnowledgeGraph& kg, const CooccurrenceTable& cooc, const Query& q,
                                        std::size_t gamma) {
    if (gamma == 0) return {};
    auto facts = kg.neighbors(q.known);
    if (q.gold) {
        const auto own = q.complete(*q.gold);
        std::erase(facts, own);
    }
    std::stable_sort(facts.begin(), facts.end(), [&](const Triple& a, const Triple& b) {
        const auto ca = cooc.count(a.relation, q.relation);
        const auto cb = cooc.count(b.relation, q.relation);
        if (ca != cb) return ca > cb;
        return a.relation < b.relation;
    });
    if (facts.size() > gamma) facts.resize(gamma);
    return facts;
}

std::vector<Triple> random_sample_neighbors(const KnowledgeGraph& kg, const Query& q, std::size_t gamma,
                                            std::uint64_t seed) {
    if (gamma == 0) return {};
    auto facts = kg.neighbors(q.known);
    if (q.gold) {
        std::erase(facts, q.complete(*q.gold));
    }
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), q.known.value,
                      q.relation.value, static_cast<std::uint32_t>(q.direction)};
    std::mt19937_64 rng(seq);
    std::shuffle(facts.begin(), facts.end(), rng);
    if (facts.size() > gamma) facts.resize(gamma);
    return facts;
}

std::string sanitize_text(std::string_view s) {
    std::string out(s);
    for (char& c : out) {
        if (c == '\n' || c == '\r' || c == '\t') c = ' ';
    }
    replace_all(out, kQueryPlaceholder, "(QUERY)");
    replace_all(out, kEntityPlaceholder, "(ENTITY)");
    return out;
}

std::string truncate_utf8(std::string_view s, std::size_t max_bytes) {
    if (s.size() <= max_bytes) return std::string(s);
    std::size_t cut = max_bytes;
    // Back up over continuation bytes (10xxxxxx).
    while (cut > 0 && (static_cast<unsigned char>(s[cut]) & 0xC0) == 0x80) --cut;
    return std::string(s.substr(0, cut));
}

std::string render_fact(const KnowledgeGraph& kg, const Triple& t) {
    return fmt::format("({}, {}, {})", sanitize_text(kg.entity_name(t.head)), sanitize_text(kg.relation_name(t.relation)),
                       sanitize_text(kg.entity_name(t.tail)));
}

InstructionSample make_sample(const KnowledgeGraph& kg, const RankedQuery& rq, const BuildOptions& options,
                              std::string id, std::uint64_t sample_index) {
    const auto& q = rq.query;
    if (!q.gold) {
        throw std::invalid_argument("make_sample: query has no gold entity");
    }
    InstructionSample s;
    s.id = std::move(id);
    s.source_query = q;

    const auto known = sanitize_text(kg.entity_name(q.known));
    const auto rel = sanitize_text(kg.relation_name(q.relation));
    s.query_text = q.direction == Direction::Tail ? fmt::format("({}, {}, ?{})", known, rel, kQueryPlaceholder)
                                                  : fmt::format("(?{}, {}, {})", kQueryPlaceholder, rel, known);

    if (!options.drop_description) {
        s.description_text =
            truncate_utf8(sanitize_text(kg.entity_description(q.known)), options.max_description_chars);
    }
    if (!options.drop_neighbors) {
        const auto facts = options.rc_sampling ? rc_sample_neighbors(kg, kg.cooccurrence(), q, options.gamma)
                                               : random_sample_neighbors(kg, q, options.gamma, options.neighbor_seed);
        for (const auto& f : facts) s.neighbor_texts.push_back(render_fact(kg, f));
    }

    const auto top = rq.topm();
    s.candidate_ids.assign(top.begin(), top.end());
    if (options.shuffle_candidates) {
        std::seed_seq seq{static_cast<std::uint32_t>(options.shuffle_seed),
                          static_cast<std::uint32_t>(options.shuffle_seed >> 32),
                          static_cast<std::uint32_t>(sample_index), static_cast<std::uint32_t>(sample_index >> 32)};
        std::mt19937_64 rng(seq);
        std::shuffle(s.candidate_ids.begin(), s.candidate_ids.end(), rng);
    }
    s.knowledge_refs.push_back(KnowledgeRef{true, EntityId{}});
    for (auto e : s.candidate_ids) {
        s.candidate_names.push_back(sanitize_text(kg.entity_name(e)));
        s.knowledge_refs.push_back(KnowledgeRef{false, e});
    }
    s.gold_id = *q.gold;
    s.gold_name = sanitize_text(kg.entity_name(*q.gold));
    s.gold_rank = rq.gold_rank;
    return s;
}

std::string render_prompt(const InstructionSample& sample) {
    std::string p;
    p.reserve(256 + 32 * sample.candidate_names.size());
    p.append(kQueryPrefix).append(sample.query_text).push_back('\n');
    if (!sample.description_text.empty()) {
        p.append(kDescriptionPrefix).append(sample.description_text).push_back('\n');
    }
    if (!sample.neighbor_texts.empty()) {
        p.append(kNeighborsHeader).push_back('\n');
        for (const auto& f : sample.neighbor_texts) p.append(f).push_back('\n');
    }
    p.append(kCandidatesHeader).push_back('\n');
    for (std::size_t i = 0; i < sample.candidate_names.size(); ++i) {
        p.append(fmt::format("{}. {}{}\n", i + 1, sample.candidate_names[i], kEntityPlaceholder));
    }
    p.append(kSelectionDirective);
    return p;
}

std::vector<std::string> parse_candidate_names(std::string_view prompt) {
    const std::string header = std::string(kCandidatesHeader) + "\n";
    std::size_t start;
    if (prompt.starts_with(header)) {
        start = header.size();
    } else {
        const auto pos = prompt.rfind("\n" + header);
        if (pos == std::string_view::npos) throw DataError("prompt has no candidate section");
        start = pos + 1 + header.size();
    }
    std::vector<std::string> names;
    while (start < prompt.size()) {
        auto end = prompt.find('\n', start);
        if (end == std::string_view::npos) end = prompt.size();
        auto line = prompt.substr(start, end - start);
        start = end + 1;
        if (line == kSelectionDirective) break;
        const auto dot = line.find(". ");
        if (dot == std::string_view::npos || !line.ends_with(kEntityPlaceholder)) {
            throw DataError("malformed candidate line: " + std::string(line));
        }
        line.remove_prefix(dot + 2);
        line.remove_suffix(kEntityPlaceholder.size());
        names.emplace_back(line);
    }
    return names;
}

std::uint64_t SidecarBuilder::intern_query(const Query& q) {
    const auto key = std::make_tuple(static_cast<int>(q.direction), q.known.value, q.relation.value);
    if (auto it = queries_.find(key); it != queries_.end()) return it->second;
    const auto row = rows();
    const auto v = model_.query_embedding(q);
    rows_.insert(rows_.end(), v.begin(), v.end());
    queries_.emplace(key, row);
    return row;
}

std::uint64_t SidecarBuilder::intern_entity(EntityId e) {
    if (auto it = entities_.find(e.value); it != entities_.end()) return it->second;
    const auto row = rows();
    const auto v = model_.entity_embedding(e);
    rows_.insert(rows_.end(), v.begin(), v.end());
    entities_.emplace(e.value, row);
    return row;
}

void SidecarBuilder::add(InstructionSample& sample) {
    sample.knowledge_ref_offsets.clear();
    for (const auto& ref : sample.knowledge_refs) {
        sample.knowledge_ref_offsets.push_back(ref.is_query ? intern_query(sample.source_query)
                                                            : intern_entity(ref.entity));
    }
}

void SidecarBuilder::save(const std::filesystem::path& path, NormKind norm) const {
    EmbeddingTable t(rows(), 0, model_.dim(), norm);
    t.entities = rows_;
    save_checkpoint(t, path);
}

std::span<const double> KnowledgeSidecar::row(std::uint64_t i) const {
    if (i >= rows()) {
        throw DataError("knowledge sidecar has no row " + std::to_string(i));
    }
    return {data.data() + i * dim, dim};
}

KnowledgeSidecar load_sidecar(const std::filesystem::path& path) {
    auto t = load_checkpoint(path);
    if (t.num_relations != 0) {
        throw DataError(path.string() + " is a model checkpoint, not a knowledge sidecar");
    }
    return KnowledgeSidecar{t.dim, std::move(t.entities)};
}

InstructionRecord to_record(const InstructionSample& s) {
    InstructionRecord r;
    r.id = s.id;
    r.direction = s.direction();
    r.prompt = render_prompt(s);
    r.gold_name = s.gold_name;
    r.gold_id = s.gold_id;
    r.candidate_ids = s.candidate_ids;
    r.candidate_names = s.candidate_names;
    r.gold_rank = s.gold_rank;
    r.knowledge_ref_offsets = s.knowledge_ref_offsets;
    return r;
}

void write_instruction_file(std::span<const InstructionSample> samples, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& s : samples) {
        const auto r = to_record(s);
        nlohmann::ordered_json j;
        j["id"] = r.id;
        j["direction"] = to_string(r.direction);
        j["prompt"] = r.prompt;
        j["gold_name"] = r.gold_name;
        j["gold_id"] = r.gold_id.value;
        auto& ids = j["candidate_ids"] = nlohmann::ordered_json::array();
        for (auto e : r.candidate_ids) ids.push_back(e.value);
        j["candidate_names"] = r.candidate_names;
        j["gold_rank"] = r.gold_rank;
        j["knowledge_ref_offsets"] = r.knowledge_ref_offsets;
        // Invalid UTF-8 in source text is replaced rather than aborting the run.
        out << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
    }
}

std::vector<InstructionRecord> read_instruction_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<InstructionRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            InstructionRecord r;
            r.id = j.at("id").get<std::string>();
            r.direction = direction_from_string(j.at("direction").get<std::string>());
            r.prompt = j.at("prompt").get<std::string>();
            r.gold_name = j.at("gold_name").get<std::string>();
            r.gold_id = EntityId(j.at("gold_id").get<std::uint32_t>());
            for (const auto& e : j.at("candidate_ids")) r.candidate_ids.push_back(EntityId(e.get<std::uint32_t>()));
            r.candidate_names = j.at("candidate_names").get<std::vector<std::string>>();
            r.gold_rank = j.at("gold_rank").get<std::size_t>();
            r.knowledge_ref_offsets = j.at("knowledge_ref_offsets").get<std::vector<std::uint64_t>>();
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto holdout = n / 10;
    std::vector<std::size_t> part2(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(holdout));
    std::vector<std::size_t> part1(order.begin() + static_cast<std::ptrdiff_t>(holdout), order.end());
    std::sort(part1.begin(), part1.end());
    std::sort(part2.begin(), part2.end());
    return {std::move(part1), std::move(part2)};
}

std::string sample_id(std::string_view set, std::size_t triple_index, Direction d) {
    return fmt::format("{}-{:06d}-{}", set, triple_index, to_string(d));
}

std::vector<Query> queries_for(std::span<const Triple> triples) {
    std::vector<Query> qs;
    qs.reserve(2 * triples.size());
    for (const auto& t : triples) {
        qs.push_back(Query::tail_query(t));
        qs.push_back(Query::head_query(t));
    }
    return qs;
}

FinetuneSets build_finetune_set(const KnowledgeGraph& kg, const EmbeddingModel& model, const ConfidenceParams& params,
                                const BuildOptions& options, std::uint64_t split_seed, std::size_t threads) {
    const auto valid = kg.valid();
    if (valid.empty()) {
        throw DataError("validation split is empty; cannot build finetuning instructions");
    }
    auto [part1, part2] = split_validation(valid.size(), split_seed);

    auto make_part = [&](const std::vector<std::size_t>& idx, std::string_view set_name) {
        std::vector<Query> queries;
        std::vector<std::string> ids;
        for (auto i : idx) {
            queries.push_back(Query::tail_query(valid[i]));
            ids.push_back(sample_id(set_name, i, Direction::Tail));
            queries.push_back(Query::head_query(valid[i]));
            ids.push_back(sample_id(set_name, i, Direction::Head));
        }
        return build_queries(kg, model, params, options, queries, ids, threads);
    };

    FinetuneSets sets;
    auto& summary = sets.summary;
    summary.which = "finetune";
    summary.source_triples = part1.size();
    summary.holdout_triples = part2.size();
    fill_summary_flags(summary, options);

    auto built1 = make_part(part1, "finetune");
    summary.queries = built1.size();
    std::vector<bool> keep1(built1.size());
    for (std::size_t i = 0; i < built1.size(); ++i) keep1[i] = built1[i].confidence > params.beta;
    sets.finetune = collect(model, built1, keep1, &summary);
    if (sets.finetune.samples.empty()) {
        spdlog::warn("no finetuning samples survived truncation (beta = {})", params.beta);
    }

    auto built2 = make_part(part2, "holdout");
    summary.holdout_queries = built2.size();
    sets.holdout = collect(model, built2, std::vector<bool>(built2.size(), true), nullptr);
    return sets;
}

InstructionSet build_eval_set(const KnowledgeGraph& kg, const EmbeddingModel& model, const ConfidenceParams& params,
                              const BuildOptions& options, BuildSummary* summary, std::size_t threads,
                              std::size_t max_queries) {
    const auto test = kg.test();
    std::vector<Query> queries;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < test.size(); ++i) {
        queries.push_back(Query::tail_query(test[i]));
        ids.push_back(sample_id("test", i, Direction::Tail));
        queries.push_back(Query::head_query(test[i]));
        ids.push_back(sample_id("test", i, Direction::Head));
    }
    if (max_queries > 0 && queries.size() > max_queries) {
        queries.resize(max_queries);
        ids.resize(max_queries);
    }
    auto built = build_queries(kg, model, params, options, queries, ids, threads);
    if (summary) {
        *summary = BuildSummary{};
        summary->which = "eval";
        summary->source_triples = test.size();
        summary->queries = built.size();
        fill_summary_flags(*summary, options);
    }
    return collect(model, built, std::vector<bool>(built.size(), true), summary);
}

void write_instruction_set(const InstructionSet& set, const std::filesystem::path& dir, std::string_view stem,
                           NormKind norm) {
    std::filesystem::create_directories(dir);
    const std::string s(stem);
    write_instruction_file(set.samples, dir / (s + ".jsonl"));
    set.sidecar->save(dir / (s + ".knowledge.bin"), norm);
    write_candidate_dump(set.candidates, dir / (s + ".candidates.jsonl"));
}

}  // namespace dift
