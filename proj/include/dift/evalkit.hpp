#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dift/discriminator.hpp"
#include "dift/embedder.hpp"
#include "dift/instruct.hpp"
#include "dift/kg_store.hpp"
#include "dift/ranker.hpp"

namespace dift {

/// Moves the selected candidate to the front; everything else keeps its
/// relative order. Abstention returns the ranking unchanged.
std::vector<EntityId> rerank(std::span<const EntityId> ranking, const Selection& selection,
                             std::span<const EntityId> candidate_ids);

struct Metrics {
    double mrr = 0.0;
    double hits1 = 0.0;
    double hits3 = 0.0;
    double hits10 = 0.0;
    std::size_t count = 0;
};

/// Throws std::invalid_argument on empty input or a rank of 0.
Metrics metrics(std::span<const std::size_t> ranks);

struct EvalOptions {
    std::size_t threads = 1;
    /// Evaluate only the first N queries (tail, head per test triple); 0 = all.
    std::size_t max_queries = 0;
};

/// Per-query audit line.
struct AuditRecord {
    std::string id;
    Direction direction = Direction::Tail;
    EntityId known;
    RelationId relation;
    EntityId gold;
    std::size_t base_rank = 0;
    bool abstained = true;
    EntityId selected;  // valid when !abstained
    std::size_t final_rank = 0;
    /// Selected a different entity whose name matches the gold's.
    bool name_collision = false;
};

struct DirectionReport {
    Metrics base;      // the embedding model's own filtered metrics
    Metrics reranked;  // after moving the selection to the top
    std::size_t abstentions = 0;
    std::size_t gold_in_topm = 0;
};

struct EvalReport {
    DirectionReport head;
    DirectionReport tail;
    DirectionReport combined;
    std::size_t m = 0;
    double alpha = 0.0;
    double beta = 0.0;
    std::size_t gamma = 0;
    std::string backend;

    double candidate_recall() const {
        return combined.reranked.count == 0
                   ? 0.0
                   : static_cast<double>(combined.gold_in_topm) / static_cast<double>(combined.reranked.count);
    }
};

/// Rank, build sample, select, rerank for every test query in both
/// directions. Abstentions are counted, never fatal.
EvalReport evaluate(const KnowledgeGraph& kg, const EmbeddingModel& model, const Discriminator& backend,
                    const ConfidenceParams& params, const BuildOptions& options, const EvalOptions& eval_options = {},
                    std::vector<AuditRecord>* audit = nullptr);

nlohmann::ordered_json to_json(const EvalReport& report);

/// Aligned plain-text table.
std::string format_report(const EvalReport& report);

void write_audit_file(std::span<const AuditRecord> records, const std::filesystem::path& path);

}  // namespace dift
