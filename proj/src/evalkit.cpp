#include "dift/evalkit.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

#include "dift/error.hpp"
#include "dift/parallel.hpp"

namespace dift {

std::vector<EntityId> rerank(std::span<const EntityId> ranking, const Selection& selection,
                             std::span<const EntityId> candidate_ids) {
    std::vector<EntityId> out(ranking.begin(), ranking.end());
    if (selection.abstained()) return out;
    if (selection.index() >= candidate_ids.size()) {
        throw std::invalid_argument("rerank: selection index outside the candidate list");
    }
    const auto chosen = candidate_ids[selection.index()];
    const auto it = std::find(out.begin(), out.end(), chosen);
    if (it == out.end()) {
        throw std::invalid_argument("rerank: selected entity is not in the ranking");
    }
    std::rotate(out.begin(), it, it + 1);
    return out;
}

Metrics metrics(std::span<const std::size_t> ranks) {
    if (ranks.empty()) throw std::invalid_argument("metrics: no ranks");
    Metrics m;
    m.count = ranks.size();
    std::size_t h1 = 0, h3 = 0, h10 = 0;
    double rr = 0.0;
    for (auto r : ranks) {
        if (r == 0) throw std::invalid_argument("metrics: ranks are 1-based");
        rr += 1.0 / static_cast<double>(r);
        h1 += r <= 1;
        h3 += r <= 3;
        h10 += r <= 10;
    }
    const auto n = static_cast<double>(ranks.size());
    m.mrr = rr / n;
    m.hits1 = static_cast<double>(h1) / n;
    m.hits3 = static_cast<double>(h3) / n;
    m.hits10 = static_cast<double>(h10) / n;
    return m;
}

EvalReport evaluate(const KnowledgeGraph& kg, const EmbeddingModel& model, const Discriminator& backend,
                    const ConfidenceParams& params, const BuildOptions& options, const EvalOptions& eval_options,
                    std::vector<AuditRecord>* audit) {
    const auto test = kg.test();
    if (test.empty()) throw DataError("test split is empty; nothing to evaluate");

    auto queries = queries_for(test);
    if (eval_options.max_queries > 0 && queries.size() > eval_options.max_queries) {
        queries.resize(eval_options.max_queries);
    }

    std::vector<AuditRecord> records(queries.size());
    std::vector<char> in_topm(queries.size(), 0);
    auto threads = eval_options.threads;
    if (backend.max_concurrency() > 0) threads = std::min(threads, backend.max_concurrency());

    parallel_for(queries.size(), threads, [&](std::size_t i) {
        const auto& q = queries[i];
        const auto rq = rank_query(model, kg, q, params.m);
        const auto sample = make_sample(kg, rq, options, sample_id("test", i / 2, q.direction), i);
        const auto sel = backend.select(sample);
        const auto reranked = rerank(rq.ranking, sel, sample.candidate_ids);

        auto& rec = records[i];
        rec.id = sample.id;
        rec.direction = q.direction;
        rec.known = q.known;
        rec.relation = q.relation;
        rec.gold = *q.gold;
        rec.base_rank = rq.gold_rank;
        rec.abstained = sel.abstained();
        if (!sel.abstained()) {
            rec.selected = sample.candidate_ids[sel.index()];
            rec.name_collision = rec.selected != rec.gold &&
                                 normalize_answer(kg.entity_name(rec.selected)) == normalize_answer(kg.entity_name(rec.gold));
        }
        rec.final_rank =
            static_cast<std::size_t>(std::find(reranked.begin(), reranked.end(), rec.gold) - reranked.begin()) + 1;
        in_topm[i] = rq.gold_rank <= params.m;
    });

    EvalReport report;
    report.m = params.m;
    report.alpha = params.alpha;
    report.beta = params.beta;
    report.gamma = options.gamma;
    report.backend = backend.name();

    auto fill = [&](DirectionReport& dr, auto&& include) {
        std::vector<std::size_t> base, final_ranks;
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (!include(records[i])) continue;
            base.push_back(records[i].base_rank);
            final_ranks.push_back(records[i].final_rank);
            dr.abstentions += records[i].abstained;
            dr.gold_in_topm += in_topm[i];
        }
        if (!base.empty()) {
            dr.base = metrics(base);
            dr.reranked = metrics(final_ranks);
        }
    };
    fill(report.head, [](const AuditRecord& r) { return r.direction == Direction::Head; });
    fill(report.tail, [](const AuditRecord& r) { return r.direction == Direction::Tail; });
    fill(report.combined, [](const AuditRecord&) { return true; });

    if (audit) *audit = std::move(records);
    return report;
}

namespace {

nlohmann::ordered_json metrics_json(const Metrics& m) {
    nlohmann::ordered_json j;
    j["mrr"] = m.mrr;
    j["hits@1"] = m.hits1;
    j["hits@3"] = m.hits3;
    j["hits@10"] = m.hits10;
    j["queries"] = m.count;
    return j;
}

nlohmann::ordered_json direction_json(const DirectionReport& d) {
    nlohmann::ordered_json j;
    j["reranked"] = metrics_json(d.reranked);
    j["base"] = metrics_json(d.base);
    j["abstentions"] = d.abstentions;
    j["gold_in_topm"] = d.gold_in_topm;
    return j;
}

}  // namespace

nlohmann::ordered_json to_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["combined"] = direction_json(r.combined);
    j["head"] = direction_json(r.head);
    j["tail"] = direction_json(r.tail);
    j["candidate_recall"] = r.candidate_recall();
    auto& cfg = j["config"];
    cfg["m"] = r.m;
    cfg["alpha"] = r.alpha;
    cfg["beta"] = r.beta;
    cfg["gamma"] = r.gamma;
    cfg["backend"] = r.backend;
    return j;
}

std::string format_report(const EvalReport& r) {
    std::string out = fmt::format("{:<10} {:<9} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}\n", "direction", "ranking", "MRR",
                                  "Hits@1", "Hits@3", "Hits@10", "queries", "abstain");
    auto row = [&](std::string_view name, const DirectionReport& d) {
        for (auto [label, m] : {std::pair{"base", d.base}, std::pair{"reranked", d.reranked}}) {
            out += fmt::format("{:<10} {:<9} {:>8.4f} {:>8.4f} {:>8.4f} {:>8.4f} {:>8} {:>8}\n", name, label, m.mrr,
                               m.hits1, m.hits3, m.hits10, m.count, d.abstentions);
        }
    };
    row("head", r.head);
    row("tail", r.tail);
    row("combined", r.combined);
    out += fmt::format("backend={} m={} alpha={} beta={} gamma={} candidate_recall={:.4f}\n", r.backend, r.m, r.alpha,
                       r.beta, r.gamma, r.candidate_recall());
    return out;
}

void write_audit_file(std::span<const AuditRecord> records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["id"] = r.id;
        j["direction"] = to_string(r.direction);
        j["known"] = r.known.value;
        j["relation"] = r.relation.value;
        j["gold"] = r.gold.value;
        j["base_rank"] = r.base_rank;
        if (r.abstained) {
            j["selected"] = nullptr;
        } else {
            j["selected"] = r.selected.value;
        }
        j["final_rank"] = r.final_rank;
        j["name_collision"] = r.name_collision;
        out << j.dump() << '\n';
    }
}

}  // namespace dift
