#include <random>

#include <gtest/gtest.h>

#include "dift/evalkit.hpp"
#include "fixtures.hpp"
#include "rank_oracle.hpp"

using namespace dift;
using dift::tests::T;

namespace {

std::vector<EntityId> ids(std::initializer_list<std::uint32_t> v) {
    std::vector<EntityId> out;
    for (auto x : v) out.push_back(EntityId(x));
    return out;
}

EmbeddingTable random_table(std::uint64_t seed, std::size_t ne, std::size_t nr, std::size_t d) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    EmbeddingTable t(ne, nr, d, NormKind::L2);
    for (auto& x : t.entities) x = g(rng);
    for (auto& x : t.relations) x = g(rng);
    return t;
}

/// Picks a uniformly random candidate (seeded by sample id) or abstains.
class RandomPick final : public Discriminator {
public:
    Selection select(const InstructionSample& s) const override {
        std::mt19937_64 rng(std::hash<std::string>{}(s.id));
        const auto k = rng() % (s.m() + 1);
        return k == s.m() ? Selection::abstain() : Selection::chosen(k);
    }
    std::string name() const override { return "random"; }
};

}  // namespace

TEST(Rerank, ProtocolExamples) {
    const auto ranking = ids({0, 1, 2, 3});  // A B C D
    const auto cands = ids({0, 1, 2});
    EXPECT_EQ(rerank(ranking, Selection::chosen(2), cands), ids({2, 0, 1, 3}));
    EXPECT_EQ(rerank(ranking, Selection::chosen(0), cands), ranking);
    EXPECT_EQ(rerank(ranking, Selection::abstain(), cands), ranking);
    // Candidate order may differ from ranking order (shuffled prompts).
    EXPECT_EQ(rerank(ranking, Selection::chosen(0), ids({3, 0})), ids({3, 0, 1, 2}));
    EXPECT_THROW(rerank(ranking, Selection::chosen(5), cands), std::invalid_argument);
}

TEST(Rerank, IsPermutation) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<EntityId> ranking;
        for (std::uint32_t i = 0; i < 30; ++i) ranking.push_back(EntityId(i));
        std::shuffle(ranking.begin(), ranking.end(), rng);
        const std::vector<EntityId> cands(ranking.begin(), ranking.begin() + 10);
        const auto out = rerank(ranking, Selection::chosen(rng() % 10), cands);
        EXPECT_TRUE(std::is_permutation(out.begin(), out.end(), ranking.begin(), ranking.end()));
    }
}

TEST(Metrics, Examples) {
    const auto m = metrics(std::vector<std::size_t>{1, 2, 4});
    EXPECT_DOUBLE_EQ(m.mrr, 1.75 / 3);
    EXPECT_DOUBLE_EQ(m.hits1, 1.0 / 3);
    EXPECT_DOUBLE_EQ(m.hits3, 2.0 / 3);
    EXPECT_EQ(m.hits10, 1.0);

    const auto ones = metrics(std::vector<std::size_t>(7, 1));
    EXPECT_EQ(ones.mrr, 1.0);
    EXPECT_EQ(ones.hits1, 1.0);
    EXPECT_EQ(ones.hits10, 1.0);

    const auto ten = metrics(std::vector<std::size_t>{10});
    EXPECT_EQ(ten.mrr, 0.1);
    EXPECT_EQ(ten.hits10, 1.0);
    EXPECT_EQ(ten.hits3, 0.0);

    EXPECT_THROW(metrics(std::vector<std::size_t>{}), std::invalid_argument);
    EXPECT_THROW(metrics(std::vector<std::size_t>{0}), std::invalid_argument);
}

class EvaluateTest : public ::testing::Test {
protected:
    EvaluateTest() : kg_(tests::random_parts(21, 40, 3, 150, 10, 40)), model_(random_table(8, 40, 3, 5)) {}
    KnowledgeGraph kg_;
    TransE model_;
    ConfidenceParams params_;
    BuildOptions options_;
};

TEST_F(EvaluateTest, FirstCandidateReproducesModelMetrics) {
    const auto report = evaluate(kg_, model_, FirstCandidateDiscriminator{}, params_, options_);
    const auto oracle = tests::oracle_metrics(model_, kg_);
    ASSERT_EQ(report.combined.reranked.count, oracle.count);
    EXPECT_NEAR(report.combined.reranked.mrr, oracle.mrr, 1e-12);
    EXPECT_NEAR(report.combined.reranked.hits1, oracle.hits1, 1e-12);
    EXPECT_NEAR(report.combined.reranked.hits3, oracle.hits3, 1e-12);
    EXPECT_NEAR(report.combined.reranked.hits10, oracle.hits10, 1e-12);
    EXPECT_NEAR(report.combined.base.mrr, oracle.mrr, 1e-12);
    EXPECT_EQ(report.combined.abstentions, 0u);
}

TEST_F(EvaluateTest, OracleHits1EqualsCandidateRecall) {
    std::vector<AuditRecord> audit;
    const auto report = evaluate(kg_, model_, OracleDiscriminator{}, params_, options_, {}, &audit);
    std::size_t in_topm = 0;
    for (const auto& r : audit) in_topm += r.base_rank <= params_.m;
    EXPECT_EQ(report.combined.reranked.hits1, static_cast<double>(in_topm) / static_cast<double>(audit.size()));
    EXPECT_EQ(report.combined.reranked.hits1, report.candidate_recall());
    EXPECT_EQ(report.combined.abstentions, audit.size() - in_topm);

    const auto first = evaluate(kg_, model_, FirstCandidateDiscriminator{}, params_, options_);
    EXPECT_GE(report.combined.reranked.hits10, first.combined.reranked.hits10);
}

TEST_F(EvaluateTest, PooledCountsAndDirections) {
    const auto report = evaluate(kg_, model_, FirstCandidateDiscriminator{}, params_, options_);
    EXPECT_EQ(report.head.reranked.count, 40u);
    EXPECT_EQ(report.tail.reranked.count, 40u);
    EXPECT_EQ(report.combined.reranked.count, 80u);
    EXPECT_NEAR(report.combined.reranked.mrr, (report.head.reranked.mrr + report.tail.reranked.mrr) / 2, 1e-12);
    EXPECT_LE(report.combined.reranked.hits1, report.combined.reranked.hits3);
    EXPECT_LE(report.combined.reranked.hits3, report.combined.reranked.hits10);
}

TEST_F(EvaluateTest, RerankMovesGoldByAtMostOneUnlessSelected) {
    std::vector<AuditRecord> audit;
    evaluate(kg_, model_, RandomPick{}, params_, options_, {}, &audit);
    std::size_t chosen = 0;
    for (const auto& r : audit) {
        if (!r.abstained && r.selected == r.gold) {
            EXPECT_EQ(r.final_rank, 1u);
            continue;
        }
        chosen += !r.abstained;
        EXPECT_LE(r.final_rank, r.base_rank + 1);
        EXPECT_GE(r.final_rank, r.base_rank);
        if (r.abstained) EXPECT_EQ(r.final_rank, r.base_rank);
    }
    EXPECT_GT(chosen, 0u);
}

TEST_F(EvaluateTest, ThreadCountDoesNotChangeReport) {
    std::vector<AuditRecord> a1, a4;
    const auto r1 = evaluate(kg_, model_, RandomPick{}, params_, options_, {1, 0}, &a1);
    const auto r4 = evaluate(kg_, model_, RandomPick{}, params_, options_, {4, 0}, &a4);
    EXPECT_EQ(to_json(r1).dump(), to_json(r4).dump());
    ASSERT_EQ(a1.size(), a4.size());
    for (std::size_t i = 0; i < a1.size(); ++i) EXPECT_EQ(a1[i].final_rank, a4[i].final_rank);
}

TEST_F(EvaluateTest, MaxQueriesLimitsWork) {
    const auto r = evaluate(kg_, model_, FirstCandidateDiscriminator{}, params_, options_, {1, 9});
    EXPECT_EQ(r.combined.reranked.count, 9u);
    EXPECT_EQ(r.tail.reranked.count, 5u);
    EXPECT_NEAR(r.combined.reranked.mrr, tests::oracle_metrics(model_, kg_, 9).mrr, 1e-12);
}

TEST(Evaluate, NameCollisionIsAudited) {
    auto parts = tests::tiny_parts(4, 1, {T(0, 0, 1)}, {}, {T(0, 0, 2)});
    parts.entity_names[3] = parts.entity_names[2];
    const KnowledgeGraph kg(std::move(parts));
    EmbeddingTable t(4, 1, 1, NormKind::L2);
    t.entities = {10, 5, 3, 1};
    t.relations = {-9};  // tail query vector 1: entity 3 ranks first
    const TransE model(t);
    ConfidenceParams p;
    p.m = 4;
    std::vector<AuditRecord> audit;
    evaluate(kg, model, FirstCandidateDiscriminator{}, p, {}, {}, &audit);
    EXPECT_EQ(audit[0].selected, EntityId(3u));
    EXPECT_TRUE(audit[0].name_collision);
    EXPECT_EQ(audit[0].final_rank, 2u);
}

TEST(Evaluate, ReportRendering) {
    const KnowledgeGraph kg(tests::chain_parts());
    const TransE model(random_table(1, 4, 2, 3));
    ConfidenceParams p;
    p.m = 4;
    const auto report = evaluate(kg, model, OracleDiscriminator{}, p, {});
    const auto j = to_json(report);
    EXPECT_EQ(j.at("config").at("backend"), "oracle");
    EXPECT_EQ(j.at("combined").at("reranked").at("hits@1"), 1.0);
    const auto table = format_report(report);
    EXPECT_NE(table.find("MRR"), std::string::npos);
    EXPECT_NE(table.find("combined"), std::string::npos);
}
