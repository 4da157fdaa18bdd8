#include "dift/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "dift/error.hpp"

namespace dift {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

RankedQuery sort_scores(const Query& q, std::vector<double>& scores, std::size_t m) {
    const auto n = scores.size();
    if (m == 0 || m > n) {
        throw std::invalid_argument("rank_query: m must be in [1, |E|]");
    }
    RankedQuery rq;
    rq.query = q;
    rq.ranking.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        rq.ranking[i] = EntityId(i);
    }
    std::sort(rq.ranking.begin(), rq.ranking.end(), [&](EntityId a, EntityId b) {
        const double sa = scores[a.index()];
        const double sb = scores[b.index()];
        if (sa != sb) {
            return sa > sb;
        }
        return a < b;
    });
    rq.topm_scores.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        rq.topm_scores[i] = scores[rq.ranking[i].index()];
    }
    if (q.gold) {
        const auto it = std::find(rq.ranking.begin(), rq.ranking.end(), *q.gold);
        rq.gold_rank = static_cast<std::size_t>(it - rq.ranking.begin()) + 1;
        rq.gold_score = scores[q.gold->index()];
    }
    return rq;
}

}  // namespace

RankedQuery rank_query(const EmbeddingModel& model, const KnowledgeGraph& kg, const Query& q, std::size_t m) {
    std::vector<double> scores(model.num_entities());
    model.score_candidates(q, scores);
    for (EntityId e : kg.true_answers(q)) {
        if (!q.gold || e != *q.gold) {
            scores[e.index()] = kNegInf;
        }
    }
    return sort_scores(q, scores, m);
}

RankedQuery rank_query_unfiltered(const EmbeddingModel& model, const Query& q, std::size_t m) {
    std::vector<double> scores(model.num_entities());
    model.score_candidates(q, scores);
    return sort_scores(q, scores, m);
}

double global_confidence(const RankedQuery& rq) {
    if (rq.gold_rank == 0) {
        throw std::invalid_argument("global_confidence: query has no gold");
    }
    return 1.0 / static_cast<double>(rq.gold_rank);
}

double local_confidence(const RankedQuery& rq, std::size_t m, LocalScore mode) {
    if (rq.gold_rank == 0) {
        throw std::invalid_argument("local_confidence: query has no gold");
    }
    if (m > rq.m()) {
        throw std::invalid_argument("local_confidence: m exceeds the ranked candidate count");
    }
    if (rq.gold_rank > m) {
        return 0.0;
    }
    if (mode == LocalScore::Raw) {
        return rq.gold_score;
    }
    const auto top = std::span(rq.topm_scores).first(m);
    const double hi = top.front();
    double lo = top.back();
    // Filtered competitors can only reach the top-m when fewer than m
    // entities survive; normalize over the finite part.
    for (auto it = top.rbegin(); it != top.rend() && !std::isfinite(lo); ++it) {
        lo = *it;
    }
    if (!(hi > lo)) {
        return 1.0;
    }
    return (rq.gold_score - lo) / (hi - lo);
}

double sample_confidence(const RankedQuery& rq, const ConfidenceParams& params) {
    return global_confidence(rq) + params.alpha * local_confidence(rq, params.m, params.local);
}

std::vector<RankedQuery> truncate_samples(std::span<const RankedQuery> rqs, const ConfidenceParams& params) {
    std::vector<RankedQuery> kept;
    for (const auto& rq : rqs) {
        if (sample_confidence(rq, params) > params.beta) {
            kept.push_back(rq);
        }
    }
    return kept;
}

CandidateRecord to_candidate_record(const RankedQuery& rq) {
    CandidateRecord rec;
    rec.direction = rq.query.direction;
    rec.known = rq.query.known;
    rec.relation = rq.query.relation;
    rec.gold = rq.query.gold.value_or(EntityId{});
    rec.gold_rank = rq.gold_rank;
    const auto top = rq.topm();
    rec.candidates.assign(top.begin(), top.end());
    rec.scores = rq.topm_scores;
    return rec;
}

void write_candidate_dump(std::span<const CandidateRecord> records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    for (const auto& r : records) {
        nlohmann::json j;
        j["direction"] = to_string(r.direction);
        j["known"] = r.known.value;
        j["relation"] = r.relation.value;
        j["gold"] = r.gold.value;
        j["gold_rank"] = r.gold_rank;
        auto& cands = j["candidates"] = nlohmann::json::array();
        for (auto e : r.candidates) cands.push_back(e.value);
        auto& scores = j["scores"] = nlohmann::json::array();
        for (double s : r.scores) {
            // JSON has no infinities; filtered slots are written as null.
            if (std::isfinite(s)) {
                scores.push_back(s);
            } else {
                scores.push_back(nullptr);
            }
        }
        out << j.dump() << '\n';
    }
}

std::vector<CandidateRecord> read_candidate_dump(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::vector<CandidateRecord> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            CandidateRecord r;
            r.direction = direction_from_string(j.at("direction").get<std::string>());
            r.known = EntityId(j.at("known").get<std::uint32_t>());
            r.relation = RelationId(j.at("relation").get<std::uint32_t>());
            r.gold = EntityId(j.at("gold").get<std::uint32_t>());
            r.gold_rank = j.at("gold_rank").get<std::size_t>();
            for (const auto& c : j.at("candidates")) r.candidates.push_back(EntityId(c.get<std::uint32_t>()));
            for (const auto& s : j.at("scores")) r.scores.push_back(s.is_null() ? kNegInf : s.get<double>());
            records.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return records;
}

}  // namespace dift
