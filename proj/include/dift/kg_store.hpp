#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "dift/types.hpp"

namespace dift {

enum class Split : std::uint8_t { Train = 0, Valid = 1, Test = 2 };

/// Relation co-occurrence counts over the training graph.
///
/// count(r, r') is the number of entities that appear (as head or tail) in at
/// least one training fact with r and at least one with r'. The diagonal holds
/// the number of entities incident to r.
class CooccurrenceTable {
public:
    CooccurrenceTable() = default;
    explicit CooccurrenceTable(std::size_t num_relations)
        : n_(num_relations), counts_(num_relations * num_relations, 0) {}

    std::size_t num_relations() const { return n_; }
    std::uint32_t count(RelationId a, RelationId b) const { return counts_[a.index() * n_ + b.index()]; }
    void increment(RelationId a, RelationId b) { ++counts_[a.index() * n_ + b.index()]; }

    friend bool operator==(const CooccurrenceTable&, const CooccurrenceTable&) = default;

private:
    std::size_t n_ = 0;
    std::vector<std::uint32_t> counts_;
};

/// Everything needed to assemble a graph. `entity_keys` / `relation_keys` hold
/// the raw dataset identifiers; index i of each table is id i.
struct KgParts {
    std::vector<std::string> entity_keys;
    std::vector<std::string> entity_names;
    std::vector<std::string> entity_descriptions;
    std::vector<std::string> relation_keys;
    std::vector<std::string> relation_names;
    std::array<std::vector<Triple>, 3> splits;
};

/// Immutable knowledge graph with text attributes and lookup indices.
class KnowledgeGraph {
public:
    /// Validates ids, deduplicates each split (with a warning) and rejects
    /// triples shared between splits. Throws DataError.
    explicit KnowledgeGraph(KgParts parts);

    std::size_t num_entities() const { return parts_.entity_keys.size(); }
    std::size_t num_relations() const { return parts_.relation_keys.size(); }

    const std::string& entity_key(EntityId e) const { return parts_.entity_keys.at(e.index()); }
    const std::string& entity_name(EntityId e) const { return parts_.entity_names.at(e.index()); }
    const std::string& entity_description(EntityId e) const { return parts_.entity_descriptions.at(e.index()); }
    const std::string& relation_key(RelationId r) const { return parts_.relation_keys.at(r.index()); }
    const std::string& relation_name(RelationId r) const { return parts_.relation_names.at(r.index()); }

    std::optional<EntityId> find_entity(const std::string& key) const;
    std::optional<RelationId> find_relation(const std::string& key) const;

    std::span<const Triple> split(Split s) const { return parts_.splits[static_cast<std::size_t>(s)]; }
    std::span<const Triple> train() const { return split(Split::Train); }
    std::span<const Triple> valid() const { return split(Split::Valid); }
    std::span<const Triple> test() const { return split(Split::Test); }

    /// Training facts incident to `e`, in train-file order. A self-loop is
    /// listed once. Throws std::out_of_range for an invalid id.
    std::vector<Triple> neighbors(EntityId e) const;

    /// True if the triple occurs in any split.
    bool is_true(const Triple& t) const { return all_true_.contains(t); }
    bool is_train(const Triple& t) const { return train_set_.contains(t); }

    /// Every entity that completes `q` to a triple in train ∪ valid ∪ test.
    std::span<const EntityId> true_answers(const Query& q) const;

    const CooccurrenceTable& cooccurrence() const { return cooc_; }

    const KgParts& parts() const { return parts_; }

private:
    KgParts parts_;
    std::unordered_map<std::string, EntityId> entity_index_;
    std::unordered_map<std::string, RelationId> relation_index_;
    std::vector<std::vector<std::uint32_t>> adjacency_;  // positions in train
    std::unordered_set<Triple> all_true_;
    std::unordered_set<Triple> train_set_;
    std::unordered_map<std::uint64_t, std::vector<EntityId>> tail_answers_;  // (h, r) -> tails
    std::unordered_map<std::uint64_t, std::vector<EntityId>> head_answers_;  // (r, t) -> heads
    CooccurrenceTable cooc_;
};

/// Loads a dataset directory.
///
/// Required: entity2text.txt, relation2text.txt and the three triple files
/// (train.txt / valid.txt / test.txt, or the train.tsv / dev.tsv / test.tsv
/// spelling). Optional: entity2textlong.txt (descriptions), entities.txt and
/// relations.txt (which, when present, define the id universe and order).
KnowledgeGraph load_kg(const std::filesystem::path& dataset_dir);

/// Writes the graph back in the load_kg layout (*.txt spelling).
void write_kg(const KnowledgeGraph& kg, const std::filesystem::path& dataset_dir);

/// Entity-level relation co-occurrence over the training split.
CooccurrenceTable build_cooccurrence(const KnowledgeGraph& kg);

}  // namespace dift
