#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "dift/embedder.hpp"
#include "dift/kg_store.hpp"

namespace dift {

/// How the local confidence term is computed.
enum class LocalScore {
    MinMax,  // gold score min-max normalized over the top-m scores
    Raw,     // raw model score of the gold fact
};

struct ConfidenceParams {
    double alpha = 1.0;
    double beta = 0.05;
    std::size_t m = 20;
    LocalScore local = LocalScore::MinMax;
};

/// A query with its filtered ranking over all entities.
struct RankedQuery {
    Query query;
    /// All entity ids, best first. Filtered competitors sit at the bottom.
    std::vector<EntityId> ranking;
    /// Scores of ranking[0..m); filtered entries are -inf.
    std::vector<double> topm_scores;
    /// 1-based position of the gold entity; 0 when the query has no gold.
    std::size_t gold_rank = 0;
    double gold_score = 0.0;

    std::size_t m() const { return topm_scores.size(); }
    std::span<const EntityId> topm() const { return std::span(ranking).first(topm_scores.size()); }
};

/// Scores every entity, pushes known-true competitors (all splits, except the
/// gold) to -inf, and sorts by descending score with ascending id on ties.
/// Throws std::invalid_argument if m > |E| or m == 0.
RankedQuery rank_query(const EmbeddingModel& model, const KnowledgeGraph& kg, const Query& q, std::size_t m);

/// Same as rank_query, without the filtering step.
RankedQuery rank_query_unfiltered(const EmbeddingModel& model, const Query& q, std::size_t m);

double global_confidence(const RankedQuery& rq);
double local_confidence(const RankedQuery& rq, std::size_t m, LocalScore mode = LocalScore::MinMax);

/// global + alpha * local.
double sample_confidence(const RankedQuery& rq, const ConfidenceParams& params);

/// Keeps samples with confidence strictly greater than beta, in input order.
std::vector<RankedQuery> truncate_samples(std::span<const RankedQuery> rqs, const ConfidenceParams& params);

/// One line of the candidate dump.
struct CandidateRecord {
    Direction direction = Direction::Tail;
    EntityId known;
    RelationId relation;
    EntityId gold;
    std::size_t gold_rank = 0;
    std::vector<EntityId> candidates;
    std::vector<double> scores;

    friend bool operator==(const CandidateRecord&, const CandidateRecord&) = default;
};

CandidateRecord to_candidate_record(const RankedQuery& rq);

/// JSON lines, one record per query.
void write_candidate_dump(std::span<const CandidateRecord> records, const std::filesystem::path& path);
std::vector<CandidateRecord> read_candidate_dump(const std::filesystem::path& path);

}  // namespace dift
