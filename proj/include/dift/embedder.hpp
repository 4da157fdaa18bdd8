#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "dift/kg_store.hpp"
#include "dift/types.hpp"

namespace dift {

enum class NormKind : std::uint32_t { L1 = 1, L2 = 2 };

/// Scoring/ranking/export surface of the embedding-based model. Downstream
/// modules only see this interface.
class EmbeddingModel {
public:
    virtual ~EmbeddingModel() = default;

    virtual std::size_t num_entities() const = 0;
    virtual std::size_t dim() const = 0;

    /// Plausibility of a fact; higher is more plausible.
    virtual double score(const Triple& t) const = 0;

    /// out[e] = score(q.complete(e)) for every entity e.
    virtual void score_candidates(const Query& q, std::span<double> out) const = 0;

    /// Vector injected at the [QUERY] placeholder.
    virtual std::vector<double> query_embedding(const Query& q) const = 0;

    /// Vector injected at an [ENTITY] placeholder.
    virtual std::span<const double> entity_embedding(EntityId e) const = 0;
};

/// Dense entity and relation vectors, row-major.
struct EmbeddingTable {
    std::size_t num_entities = 0;
    std::size_t num_relations = 0;
    std::size_t dim = 0;
    NormKind norm = NormKind::L2;
    std::vector<double> entities;
    std::vector<double> relations;

    EmbeddingTable() = default;
    EmbeddingTable(std::size_t ne, std::size_t nr, std::size_t d, NormKind nk)
        : num_entities(ne), num_relations(nr), dim(d), norm(nk), entities(ne * d, 0.0), relations(nr * d, 0.0) {}

    std::span<const double> entity(EntityId e) const { return {entities.data() + e.index() * dim, dim}; }
    std::span<double> entity(EntityId e) { return {entities.data() + e.index() * dim, dim}; }
    std::span<const double> relation(RelationId r) const { return {relations.data() + r.index() * dim, dim}; }
    std::span<double> relation(RelationId r) { return {relations.data() + r.index() * dim, dim}; }

    friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;
};

struct TrainConfig {
    std::size_t dim = 100;
    double learning_rate = 0.01;
    double margin = 1.0;
    std::size_t epochs = 1000;
    std::size_t negatives_per_positive = 1;
    std::uint64_t seed = 0;
    std::size_t batch_size = 128;
    NormKind norm = NormKind::L2;
};

/// Validates a config; throws ConfigError.
void validate(const TrainConfig& config);

/// Uniform in [-6/sqrt(d), 6/sqrt(d)], then entity rows scaled to unit L2 norm.
EmbeddingTable init_embeddings(std::size_t num_entities, std::size_t num_relations, const TrainConfig& config);

/// -||h + r - t|| under the table's norm.
double score(const EmbeddingTable& table, EntityId h, RelationId r, EntityId t);

/// ||h + r - t||.
double distance(const EmbeddingTable& table, const Triple& t);

/// Sparse per-row gradient accumulator.
class GradientBuffer {
public:
    explicit GradientBuffer(std::size_t dim) : dim_(dim) {}

    std::span<double> entity_row(EntityId e) { return row(entity_slots_, e.value); }
    std::span<double> relation_row(RelationId r) { return row(relation_slots_, r.value); }

    /// Gradient row if present, else empty.
    std::span<const double> find_entity(EntityId e) const { return find(entity_slots_, e.value); }
    std::span<const double> find_relation(RelationId r) const { return find(relation_slots_, r.value); }

    /// table -= lr * gradient, then clears.
    void apply(EmbeddingTable& table, double learning_rate);
    void clear();

private:
    std::span<double> row(std::unordered_map<std::uint32_t, std::size_t>& slots, std::uint32_t key);
    std::span<const double> find(const std::unordered_map<std::uint32_t, std::size_t>& slots, std::uint32_t key) const;

    std::size_t dim_;
    std::unordered_map<std::uint32_t, std::size_t> entity_slots_;
    std::unordered_map<std::uint32_t, std::size_t> relation_slots_;
    std::vector<double> data_;
};

/// max(0, margin + d(pos) - d(neg)).
double margin_loss(const EmbeddingTable& table, const Triple& pos, const Triple& neg, double margin);

/// Adds d(margin_loss)/d(params) into `grad` and returns the loss.
double accumulate_margin_gradient(const EmbeddingTable& table, const Triple& pos, const Triple& neg, double margin,
                                  GradientBuffer& grad);

/// Called after every epoch with (epoch index, mean pair loss).
using EpochCallback = std::function<void(std::size_t, double)>;

/// Minibatch SGD on the margin ranking loss with head-or-tail corruption.
/// Throws std::runtime_error on a non-finite loss.
EmbeddingTable train_transe(const KnowledgeGraph& kg, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// TransE over an EmbeddingTable.
class TransE final : public EmbeddingModel {
public:
    explicit TransE(EmbeddingTable table);

    std::size_t num_entities() const override { return table_.num_entities; }
    std::size_t dim() const override { return table_.dim; }
    double score(const Triple& t) const override;
    void score_candidates(const Query& q, std::span<double> out) const override;
    /// (h, r, ?) -> h + r; (?, r, t) -> t - r.
    std::vector<double> query_embedding(const Query& q) const override;
    std::span<const double> entity_embedding(EntityId e) const override { return table_.entity(e); }

    const EmbeddingTable& table() const { return table_; }

private:
    EmbeddingTable table_;
};

/// Binary checkpoint: 8-byte magic, u32 version, u64 |E|, u64 |R|, u64 dim,
/// u32 norm, then little-endian f64 rows (entities, then relations).
void save_checkpoint(const EmbeddingTable& table, const std::filesystem::path& path);
EmbeddingTable load_checkpoint(const std::filesystem::path& path);

}  // namespace dift
