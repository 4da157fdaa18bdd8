// Acceptance suite: one PASS/FAIL/SKIP line per criterion.
//
//   dift_acceptance                     fast criteria (synthetic data only)
//   dift_acceptance --dataset-criteria  criteria that need FB15K-237
//   dift_acceptance --extended          full-length TransE benchmark run
//
// Dataset modes read the graph from $DIFT_FB15K237_DIR and exit 77 (skipped)
// when it is unset.

#include <chrono>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "dift/adapter.hpp"
#include "dift/evalkit.hpp"
#include "dift/pipeline.hpp"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "rank_oracle.hpp"

using namespace dift;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr int kSkipped = 77;

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Suite {
    int failures = 0;

    void run(std::string_view name, const std::function<Outcome()>& body) {
        const auto start = Clock::now();
        Outcome o;
        try {
            o = body();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(Clock::now() - start).count();
        failures += !o.pass;
        std::cout << fmt::format("{} {:<28} {} [{:.2f} s]", o.pass ? "PASS" : "FAIL", name, o.detail, secs)
                  << std::endl;
    }

    static void skip(std::string_view name, std::string_view why) {
        std::cout << fmt::format("SKIP {:<28} {}", name, why) << std::endl;
    }
};

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

EmbeddingTable gaussian_table(std::mt19937_64& rng, std::size_t ne, std::size_t nr, std::size_t d) {
    std::normal_distribution<double> g;
    EmbeddingTable t(ne, nr, d, NormKind::L2);
    for (auto& x : t.entities) x = g(rng);
    for (auto& x : t.relations) x = g(rng);
    return t;
}

std::size_t count_of(std::string_view hay, std::string_view needle) {
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + needle.size())) ++n;
    return n;
}

// ---- fast criteria --------------------------------------------------------

Outcome ranking_oracle() {
    const auto start = Clock::now();
    std::mt19937_64 rng(20240601);
    std::size_t graphs = 0, queries = 0;
    for (; graphs < 120; ++graphs) {
        const std::size_t ne = 2 + rng() % 49;
        const std::size_t nr = 1 + rng() % 5;
        const KnowledgeGraph kg(tests::random_parts(rng(), ne, nr, 2 * ne, ne / 4, ne / 3 + 1));
        auto table = gaussian_table(rng, ne, nr, 4);
        if (ne > 3 && graphs % 3 == 0) {
            std::copy_n(table.entity(EntityId(1u)).begin(), 4, table.entity(EntityId(2u)).begin());
        }
        const TransE model(table);
        std::set<Triple> known_true;
        for (auto s : {Split::Train, Split::Valid, Split::Test}) known_true.insert(kg.split(s).begin(), kg.split(s).end());
        const std::size_t m = 1 + rng() % ne;
        for (const auto& t : kg.test()) {
            for (const auto& q : {Query::tail_query(t), Query::head_query(t)}) {
                // Full ordering oracle: position of each entity by pairwise counting.
                std::vector<double> s(ne);
                for (std::size_t e = 0; e < ne; ++e) {
                    const auto c = q.complete(EntityId(e));
                    s[e] = EntityId(e) != *q.gold && known_true.contains(c) ? -std::numeric_limits<double>::infinity()
                                                                            : model.score(c);
                }
                std::vector<EntityId> expected(ne);
                for (std::size_t e = 0; e < ne; ++e) {
                    std::size_t pos = 0;
                    for (std::size_t o = 0; o < ne; ++o) pos += s[o] > s[e] || (s[o] == s[e] && o < e);
                    expected[pos] = EntityId(e);
                }
                const auto rq = rank_query(model, kg, q, m);
                if (rq.ranking != expected || rq.gold_rank != tests::oracle_gold_rank(model, known_true, q) ||
                    rq.m() != m) {
                    return {false, fmt::format("mismatch on graph {} (|E|={}, |R|={})", graphs, ne, nr)};
                }
                ++queries;
            }
        }
    }
    const double secs = seconds_since(start);
    return {secs < 60.0, fmt::format("{} graphs, {} queries, exact match (limit 60 s)", graphs, queries)};
}

Outcome compare_metrics(const EvalReport& report, const tests::OracleMetrics& oracle, std::string_view what) {
    const auto& r = report.combined.reranked;
    const double err = std::max({std::abs(r.mrr - oracle.mrr), std::abs(r.hits1 - oracle.hits1),
                                 std::abs(r.hits3 - oracle.hits3), std::abs(r.hits10 - oracle.hits10)});
    const bool ok = r.count == oracle.count && err <= 1e-12;
    return {ok, fmt::format("{}: {} queries, MRR {:.6f} vs {:.6f}, max |diff| {:.1e} (tol 1e-12)", what, r.count, r.mrr,
                            oracle.mrr, err)};
}

Outcome metric_identity_chain() {
    const KnowledgeGraph kg(tests::chain_parts());
    TrainConfig tc;
    tc.dim = 16;
    tc.epochs = 200;
    const TransE model(train_transe(kg, tc));
    ConfidenceParams p;
    p.m = 4;
    const auto report = evaluate(kg, model, FirstCandidateDiscriminator{}, p, {});
    return compare_metrics(report, tests::oracle_metrics(model, kg), "chain KG");
}

Outcome oracle_identity() {
    std::string detail;
    bool ok = true;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const KnowledgeGraph kg(tests::random_parts(seed, 60, 4, 240, 20, 40));
        std::mt19937_64 rng(seed);
        const TransE model(gaussian_table(rng, 60, 4, 6));
        ConfidenceParams p;
        std::vector<AuditRecord> audit;
        const auto report = evaluate(kg, model, OracleDiscriminator{}, p, {}, {}, &audit);
        std::size_t in_topm = 0;
        for (const auto& r : audit) in_topm += r.base_rank <= p.m;
        const double rate = static_cast<double>(in_topm) / static_cast<double>(audit.size());
        ok = ok && report.combined.reranked.hits1 == rate;
        detail += fmt::format("{}Hits@1 {:.4f} = recall {:.4f}", detail.empty() ? "" : "; ",
                              report.combined.reranked.hits1, rate);
    }
    return {ok, detail};
}

Outcome truncation() {
    const KnowledgeGraph kg(tests::random_parts(11, 80, 4, 400, 150, 10));
    std::mt19937_64 rng(11);
    const TransE model(gaussian_table(rng, 80, 4, 6));
    std::vector<RankedQuery> rqs;
    for (const auto& q : queries_for(kg.valid())) rqs.push_back(rank_query(model, kg, q, 20));

    std::vector<std::size_t> kept_counts;
    bool excluded_ok = true;
    for (double beta : {0.0, 0.05, 0.5, 1.0}) {
        ConfidenceParams p;
        p.beta = beta;
        const auto kept = truncate_samples(rqs, p);
        kept_counts.push_back(kept.size());
        if (beta > 0.0) {
            std::set<std::pair<std::uint32_t, std::uint32_t>> kept_keys;
            for (const auto& k : kept) kept_keys.emplace(k.query.known.value * 2 + (k.query.direction == Direction::Head),
                                                          k.query.relation.value * 100000 + k.query.gold->value);
            for (const auto& rq : rqs) {
                const bool low = static_cast<double>(rq.gold_rank) > 1.0 / beta && local_confidence(rq, p.m) == 0.0;
                const bool is_kept = kept_keys.contains(
                    {rq.query.known.value * 2 + (rq.query.direction == Direction::Head),
                     rq.query.relation.value * 100000 + rq.query.gold->value});
                if (low && is_kept) excluded_ok = false;
            }
        }
    }
    const bool monotone = std::is_sorted(kept_counts.rbegin(), kept_counts.rend());
    const bool all_at_zero = kept_counts[0] == rqs.size();

    // Boundary: confidence exactly beta is discarded.
    RankedQuery edge;
    edge.query.gold = EntityId(19u);
    for (std::uint32_t i = 0; i < 20; ++i) {
        edge.ranking.push_back(EntityId(i));
        edge.topm_scores.push_back(-static_cast<double>(i));
    }
    edge.gold_rank = 20;
    edge.gold_score = -19.0;
    ConfidenceParams p;
    const bool boundary = sample_confidence(edge, p) == 0.05 && truncate_samples(std::vector{edge}, p).empty();

    return {monotone && all_at_zero && excluded_ok && boundary,
            fmt::format("kept {}/{}/{}/{} of {} for beta 0/0.05/0.5/1; low-confidence excluded: {}; "
                        "boundary conf == beta dropped: {}",
                        kept_counts[0], kept_counts[1], kept_counts[2], kept_counts[3], rqs.size(), excluded_ok,
                        boundary)};
}

Outcome adapter_gradcheck() {
    const auto start = Clock::now();
    const auto small = tests::check_adapter_gradients(3, 4, 2, 100, 101);
    const auto large = tests::check_adapter_gradients(16, 32, 64, 100, 102);
    const double secs = seconds_since(start);
    const bool ok = small.max_rel_error < 1e-5 && large.max_rel_error < 1e-5 && secs < 60.0;
    return {ok, fmt::format("100 draws each; max rel err {:.2e} at (3,4,2), {:.2e} at (16,32,64) (tol 1e-5)",
                            small.max_rel_error, large.max_rel_error)};
}

Outcome adapter_zero() {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    bool ok = true;
    for (auto act : {Activation::SwiGLU, Activation::SiLU}) {
        for (int draw = 0; draw < 50; ++draw) {
            AdapterParams p(7, 5, 9, act);
            for (auto* v : {&p.w1, &p.w2, &p.b2})
                for (auto& x : *v) x = g(rng);
            ok = ok && project(p, std::vector<double>(7, 0.0)) == p.b2;
        }
    }
    return {ok, "project(e = 0, b1 = 0) == b2 bit-for-bit over 100 draws"};
}

Outcome prompt_shape() {
    auto parts = tests::random_parts(42, 50, 4, 250, 10, 30);
    parts.entity_names[2] = "Name [ENTITY] injected";
    parts.entity_names[3] = "7. Numbered";
    const KnowledgeGraph kg(std::move(parts));
    std::mt19937_64 rng(42);
    const TransE model(gaussian_table(rng, 50, 4, 6));
    ConfidenceParams p;
    std::size_t checked = 0;
    for (bool shuffle : {false, true}) {
        BuildOptions o;
        o.shuffle_candidates = shuffle;
        const auto set = build_eval_set(kg, model, p, o);
        for (const auto& s : set.samples) {
            const auto prompt = render_prompt(s);
            if (count_of(prompt, kQueryPlaceholder) != 1 || count_of(prompt, kEntityPlaceholder) != p.m) {
                return {false, "placeholder count wrong for " + s.id};
            }
            if (parse_candidate_names(prompt) != s.candidate_names) return {false, "round-trip failed for " + s.id};
            ++checked;
        }
    }
    // RC neighbors on train-derived queries, where the gold fact is a neighbor.
    std::size_t leak_checks = 0;
    for (const auto& t : kg.train()) {
        for (const auto& q : {Query::tail_query(t), Query::head_query(t)}) {
            const auto nb = rc_sample_neighbors(kg, kg.cooccurrence(), q, 1000);
            if (std::find(nb.begin(), nb.end(), t) != nb.end()) return {false, "gold fact leaked into neighbors"};
            ++leak_checks;
        }
    }
    return {true, fmt::format("{} prompts with 1 [QUERY] and {} [ENTITY], round-trip exact; {} leakage checks",
                              checked, p.m, leak_checks)};
}

PipelineConfig small_pipeline(const fs::path& data, const fs::path& work) {
    PipelineConfig c;
    c.dataset_dir = data;
    c.workdir = work;
    c.embedder.dim = 16;
    c.embedder.epochs = 50;
    c.adapter_d2 = 32;
    return c;
}

Outcome determinism() {
    tests::TempDir data, w1, w2;
    tests::write_synthetic_dataset(data.path(), 8, 30, 3, 120, 30, 15);
    std::vector<fs::path> dirs[2];
    for (int run = 0; run < 2; ++run) {
        auto c = small_pipeline(data.path(), run == 0 ? w1.path() : w2.path());
        c.threads = run == 0 ? 1 : 4;
        c.instruct.shuffle_candidates = true;
        dirs[run] = {run_build(c, BuildKind::Finetune).dir, run_build(c, BuildKind::Eval).dir, run_evaluate(c).dir};
    }
    std::size_t files = 0;
    for (std::size_t s = 0; s < dirs[0].size(); ++s) {
        for (const auto& entry : fs::directory_iterator(dirs[0][s])) {
            const auto other = dirs[1][s] / entry.path().filename();
            if (tests::read_file(entry.path()) != tests::read_file(other)) {
                return {false, "differs: " + entry.path().filename().string()};
            }
            ++files;
        }
    }
    return {true, fmt::format("{} files byte-identical across two runs (1 vs 4 threads)", files)};
}

Outcome end_to_end_smoke() {
    const auto start = Clock::now();
    tests::TempDir data, work;
    tests::write_synthetic_dataset(data.path(), 3, 20, 3, 60, 10, 12);
    const auto kg = load_kg(data.path());
    // Scripted outputs: exact names, wrapped names, and unmatched text.
    std::string script;
    for (std::size_t i = 0; i < kg.test().size(); ++i) {
        const auto& t = kg.test()[i];
        script += sample_id("test", i, Direction::Tail) + "\t" + kg.entity_name(t.tail) + "\n";
        script += sample_id("test", i, Direction::Head) + "\t" +
                  (i % 3 == 0 ? "I cannot tell." : "The answer is " + kg.entity_name(t.head) + ".") + "\n";
    }
    tests::write_file(data / "script.tsv", script);

    PipelineConfig c;  // defaults, m = 20 = |E|
    c.dataset_dir = data.path();
    c.workdir = work.path();
    c.backend = "scripted";
    c.script_file = data / "script.tsv";
    run_train_embeddings(c);
    run_build(c, BuildKind::Eval);
    const auto ev = run_evaluate(c);
    const auto report = nlohmann::json::parse(tests::read_file(ev.dir / "report.json"));
    const auto& r = report.at("combined").at("reranked");
    const double h1 = r.at("hits@1"), h3 = r.at("hits@3"), h10 = r.at("hits@10");
    const double secs = seconds_since(start);
    return {secs < 30.0 && h1 <= h3 && h3 <= h10,
            fmt::format("Hits@1 {:.3f} <= Hits@3 {:.3f} <= Hits@10 {:.3f}, {:.1f} s (limit 30 s)", h1, h3, h10, secs)};
}

// ---- dataset criteria -----------------------------------------------------

const char* dataset_dir() {
    const char* d = std::getenv("DIFT_FB15K237_DIR");
    return d && *d ? d : nullptr;
}

Outcome metric_identity_fb15k237(const KnowledgeGraph& kg) {
    const auto start = Clock::now();
    TrainConfig tc;  // defaults, shortened: the identity holds for any table
    tc.epochs = 5;
    const TransE model(train_transe(kg, tc));
    ConfidenceParams p;
    const auto report = evaluate(kg, model, FirstCandidateDiscriminator{}, p, {}, EvalOptions{4, 1000});
    auto o = compare_metrics(report, tests::oracle_metrics(model, kg, 1000), "FB15K-237 first 1,000 queries");
    o.pass = o.pass && seconds_since(start) < 300.0;
    return o;
}

Outcome transe_benchmark(const KnowledgeGraph& kg) {
    const TrainConfig tc;  // defaults: d 100, lr 0.01, margin 1, 1000 epochs, L2
    const TransE model(train_transe(kg, tc, [](std::size_t epoch, double loss) {
        if ((epoch + 1) % 50 == 0) spdlog::info("epoch {}: loss {:.5f}", epoch + 1, loss);
    }));
    const auto report = evaluate(kg, model, FirstCandidateDiscriminator{}, ConfidenceParams{}, {}, EvalOptions{4, 0});
    const auto& m = report.combined.base;
    const bool ok = std::abs(m.mrr - 0.312) <= 0.03 && std::abs(m.hits10 - 0.510) <= 0.04;
    return {ok, fmt::format("filtered MRR {:.4f} (target 0.312 +/- 0.03), Hits@10 {:.4f} (target 0.510 +/- 0.04)",
                            m.mrr, m.hits10)};
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_level(spdlog::level::warn);
    const std::string mode = argc > 1 ? argv[1] : "";
    Suite suite;

    if (mode.empty()) {
        suite.run("ranking_oracle", ranking_oracle);
        suite.run("metric_identity_chain", metric_identity_chain);
        suite.run("oracle_identity", oracle_identity);
        suite.run("truncated_sampling", truncation);
        suite.run("adapter_gradient_check", adapter_gradcheck);
        suite.run("adapter_zero_case", adapter_zero);
        suite.run("prompt_shape", prompt_shape);
        suite.run("determinism", determinism);
        suite.run("end_to_end_smoke", end_to_end_smoke);
        if (!dataset_dir()) {
            Suite::skip("metric_identity_fb15k237", "set DIFT_FB15K237_DIR (ctest: acceptance_fb15k237)");
            Suite::skip("transe_fb15k237_extended", "set DIFT_FB15K237_DIR and DIFT_RUN_EXTENDED=1");
        }
        return suite.failures == 0 ? 0 : 1;
    }

    if (mode != "--dataset-criteria" && mode != "--extended") {
        std::cerr << "usage: dift_acceptance [--dataset-criteria | --extended]\n";
        return 2;
    }
    const char* dir = dataset_dir();
    if (!dir) {
        Suite::skip(mode == "--extended" ? "transe_fb15k237_extended" : "metric_identity_fb15k237",
                    "DIFT_FB15K237_DIR is not set");
        return kSkipped;
    }
    if (mode == "--extended" && !std::getenv("DIFT_RUN_EXTENDED")) {
        Suite::skip("transe_fb15k237_extended", "DIFT_RUN_EXTENDED is not set (1-3 h run)");
        return kSkipped;
    }
    const auto kg = load_kg(dir);
    if (mode == "--dataset-criteria") {
        suite.run("metric_identity_fb15k237", [&] { return metric_identity_fb15k237(kg); });
    } else {
        spdlog::set_level(spdlog::level::info);
        suite.run("transe_fb15k237_extended", [&] { return transe_benchmark(kg); });
    }
    return suite.failures == 0 ? 0 : 1;
}
