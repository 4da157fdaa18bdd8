#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "dift/embedder.hpp"
#include "dift/kg_store.hpp"
#include "dift/ranker.hpp"

namespace dift {

inline constexpr std::string_view kQueryPlaceholder = "[QUERY]";
inline constexpr std::string_view kEntityPlaceholder = "[ENTITY]";

/// Prompt layout, version "dift-prompt-v1". {..} marks substituted fields;
/// bracketed sections are omitted when empty or ablated.
///
///     Query: ({head}, {relation}, ?[QUERY])        tail prediction
///     Query: (?[QUERY], {relation}, {tail})        head prediction
///     [Description: {known entity description}]
///     [Neighbor facts:
///     ({head}, {relation}, {tail})                 one line per fact]
///     Candidates:
///     1. {name}[ENTITY]                            one line per candidate
///     Select the most plausible entity from the candidates to fill the missing slot of the query. Answer with the
///     entity name only.                            (single line)
inline constexpr std::string_view kTemplateVersion = "dift-prompt-v1";
inline constexpr std::string_view kCandidatesHeader = "Candidates:";
inline constexpr std::string_view kSelectionDirective =
    "Select the most plausible entity from the candidates to fill the missing slot of the query. "
    "Answer with the entity name only.";

struct BuildOptions {
    std::size_t gamma = 10;
    std::size_t max_description_chars = 512;
    bool shuffle_candidates = false;
    std::uint64_t shuffle_seed = 0;
    bool drop_description = false;
    bool drop_neighbors = false;
    bool rc_sampling = true;
    std::uint64_t neighbor_seed = 0;
};

/// Reference to one knowledge vector: the query vector or an entity vector.
struct KnowledgeRef {
    bool is_query = false;
    EntityId entity;  // meaningful only when !is_query

    friend bool operator==(const KnowledgeRef&, const KnowledgeRef&) = default;
};

struct InstructionSample {
    std::string id;
    Query source_query;
    std::string query_text;
    std::string description_text;
    std::vector<std::string> neighbor_texts;
    std::vector<std::string> candidate_names;
    std::vector<EntityId> candidate_ids;
    std::string gold_name;
    EntityId gold_id;
    std::size_t gold_rank = 0;
    /// Query first, then one entry per candidate in prompt order.
    std::vector<KnowledgeRef> knowledge_refs;
    /// Row indices into the knowledge sidecar, parallel to knowledge_refs.
    /// Empty until the sample is registered with a SidecarBuilder.
    std::vector<std::uint64_t> knowledge_ref_offsets;

    Direction direction() const { return source_query.direction; }
    std::size_t m() const { return candidate_ids.size(); }
};

/// Neighbor facts of the query's known entity, minus the query's own fact,
/// ordered by descending co-occurrence of their relation with the query
/// relation (ties: ascending relation id, then train-file order), cut at gamma.
std::vector<Triple> rc_sample_neighbors(const KnowledgeGraph& kg, const CooccurrenceTable& cooc, const Query& q,
                                        std::size_t gamma);

/// Uniform random alternative to RC sampling, seeded per query.
std::vector<Triple> random_sample_neighbors(const KnowledgeGraph& kg, const Query& q, std::size_t gamma,
                                            std::uint64_t seed);

/// Replaces newlines/tabs with spaces and defuses literal placeholders so a
/// name can never add or hide a slot.
std::string sanitize_text(std::string_view s);

/// Truncates on a UTF-8 code point boundary.
std::string truncate_utf8(std::string_view s, std::size_t max_bytes);

std::string render_fact(const KnowledgeGraph& kg, const Triple& t);

/// Assembles one sample from a ranked query. `sample_index` only seeds the
/// candidate shuffle.
InstructionSample make_sample(const KnowledgeGraph& kg, const RankedQuery& rq, const BuildOptions& options,
                              std::string id, std::uint64_t sample_index);

std::string render_prompt(const InstructionSample& sample);

/// Recovers the candidate names, in order, from a rendered prompt.
/// Throws DataError if the candidate section is missing.
std::vector<std::string> parse_candidate_names(std::string_view prompt);

/// Deduplicating store of knowledge vectors. Entity vectors are stored once;
/// query vectors once per distinct (direction, known, relation).
class SidecarBuilder {
public:
    explicit SidecarBuilder(const EmbeddingModel& model) : model_(model) {}

    /// Fills sample.knowledge_ref_offsets.
    void add(InstructionSample& sample);

    std::size_t rows() const { return rows_.size() / std::max<std::size_t>(model_.dim(), 1); }

    /// Writes the vectors in the checkpoint format with |R| = 0.
    void save(const std::filesystem::path& path, NormKind norm) const;

private:
    std::uint64_t intern_query(const Query& q);
    std::uint64_t intern_entity(EntityId e);

    const EmbeddingModel& model_;
    std::map<std::tuple<int, std::uint32_t, std::uint32_t>, std::uint64_t> queries_;
    std::map<std::uint32_t, std::uint64_t> entities_;
    std::vector<double> rows_;
};

/// Loaded sidecar: `rows` vectors of length `dim`.
struct KnowledgeSidecar {
    std::size_t dim = 0;
    std::vector<double> data;

    std::size_t rows() const { return dim == 0 ? 0 : data.size() / dim; }
    std::span<const double> row(std::uint64_t i) const;
};

KnowledgeSidecar load_sidecar(const std::filesystem::path& path);

/// Serialized view of a sample (one JSON line of an instruction file).
struct InstructionRecord {
    std::string id;
    Direction direction = Direction::Tail;
    std::string prompt;
    std::string gold_name;
    EntityId gold_id;
    std::vector<EntityId> candidate_ids;
    std::vector<std::string> candidate_names;
    std::size_t gold_rank = 0;
    std::vector<std::uint64_t> knowledge_ref_offsets;
};

InstructionRecord to_record(const InstructionSample& sample);
void write_instruction_file(std::span<const InstructionSample> samples, const std::filesystem::path& path);
std::vector<InstructionRecord> read_instruction_file(const std::filesystem::path& path);

/// Counts reported by the dataset builders.
struct BuildSummary {
    std::string which;  // "finetune" or "eval"
    std::size_t source_triples = 0;
    std::size_t holdout_triples = 0;
    std::size_t queries = 0;          // before truncation
    std::size_t kept = 0;             // after truncation
    std::size_t holdout_queries = 0;
    std::size_t gold_in_candidates = 0;
    double mean_prompt_chars = 0.0;
    bool description_dropped = false;
    bool neighbors_dropped = false;
    bool rc_sampling = true;
    bool candidates_shuffled = false;
};

/// In-memory instruction set ready to be written.
struct InstructionSet {
    std::vector<InstructionSample> samples;
    std::vector<CandidateRecord> candidates;
    std::shared_ptr<SidecarBuilder> sidecar;
};

/// 9:1 split of the validation triples by seed. Returns (part1, part2) as
/// index lists into kg.valid(), each ascending. |part2| = floor(n / 10).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(std::size_t n, std::uint64_t seed);

struct FinetuneSets {
    InstructionSet finetune;  // part 1, truncated
    InstructionSet holdout;   // part 2, untruncated
    BuildSummary summary;
};

/// Finetuning data from the validation split: part 1 queries (both directions)
/// kept when sample_confidence > beta; part 2 kept whole for model selection.
FinetuneSets build_finetune_set(const KnowledgeGraph& kg, const EmbeddingModel& model, const ConfidenceParams& params,
                                const BuildOptions& options, std::uint64_t split_seed, std::size_t threads = 1);

/// One sample per test query, both directions, no truncation.
InstructionSet build_eval_set(const KnowledgeGraph& kg, const EmbeddingModel& model, const ConfidenceParams& params,
                              const BuildOptions& options, BuildSummary* summary = nullptr, std::size_t threads = 1,
                              std::size_t max_queries = 0);

/// Writes `<stem>.jsonl`, `<stem>.knowledge.bin` and `<stem>.candidates.jsonl`.
void write_instruction_set(const InstructionSet& set, const std::filesystem::path& dir, std::string_view stem,
                           NormKind norm);

/// Sample id: "<set>-<triple index, 6 digits>-<head|tail>".
std::string sample_id(std::string_view set, std::size_t triple_index, Direction d);

/// The labelled queries for a list of triples: tail then head for each.
std::vector<Query> queries_for(std::span<const Triple> triples);

}  // namespace dift
