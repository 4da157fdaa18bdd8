#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dift/adapter.hpp"
#include "dift/discriminator.hpp"
#include "dift/embedder.hpp"
#include "dift/error.hpp"
#include "dift/evalkit.hpp"
#include "dift/instruct.hpp"
#include "dift/kg_store.hpp"
#include "dift/pipeline.hpp"
#include "dift/ranker.hpp"

namespace py = pybind11;
using namespace dift;

namespace {

py::array_t<double> to_array(std::span<const double> v, std::size_t rows, std::size_t cols) {
    py::array_t<double> out({rows, cols});
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

py::array_t<double> to_array(std::span<const double> v) {
    py::array_t<double> out(v.size());
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

std::vector<double> to_vector(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    return {a.data(), a.data() + a.size()};
}

Direction parse_direction(const std::string& s) { return direction_from_string(s); }

Query make_query(std::uint32_t known, std::uint32_t relation, const std::string& direction,
                 std::optional<std::uint32_t> gold) {
    Query q{EntityId(known), RelationId(relation), parse_direction(direction), std::nullopt};
    if (gold) q.gold = EntityId(*gold);
    return q;
}

py::list triples(std::span<const Triple> ts) {
    py::list out;
    for (const auto& t : ts) out.append(py::make_tuple(t.head.value, t.relation.value, t.tail.value));
    return out;
}

std::vector<std::uint32_t> raw_ids(std::span<const EntityId> ids) {
    std::vector<std::uint32_t> out;
    for (auto e : ids) out.push_back(e.value);
    return out;
}

Activation parse_activation(const std::string& s) {
    if (s == "swiglu") return Activation::SwiGLU;
    if (s == "silu") return Activation::SiLU;
    throw ConfigError("activation must be swiglu or silu, got " + s);
}

py::dict stage(const StageResult& r) {
    py::dict d;
    d["dir"] = r.dir;
    d["digest"] = r.digest;
    d["reused"] = r.reused;
    return d;
}

py::dict metrics_dict(const Metrics& m) {
    py::dict d;
    d["mrr"] = m.mrr;
    d["hits@1"] = m.hits1;
    d["hits@3"] = m.hits3;
    d["hits@10"] = m.hits10;
    d["queries"] = m.count;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Knowledge-graph completion with embedding rankers and LLM discrimination";

    auto base = py::register_exception<Error>(m, "DiftError", PyExc_RuntimeError);
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<BackendError>(m, "BackendError", base.ptr());

    m.attr("TEMPLATE_ID") = std::string(kTemplateVersion);
    m.attr("DIRECTIVE") = std::string(kSelectionDirective);

    py::class_<KnowledgeGraph>(m, "KnowledgeGraph")
        .def_property_readonly("num_entities", &KnowledgeGraph::num_entities)
        .def_property_readonly("num_relations", &KnowledgeGraph::num_relations)
        .def("entity_name", [](const KnowledgeGraph& kg, std::uint32_t e) { return kg.entity_name(EntityId(e)); })
        .def("entity_key", [](const KnowledgeGraph& kg, std::uint32_t e) { return kg.entity_key(EntityId(e)); })
        .def("entity_description",
             [](const KnowledgeGraph& kg, std::uint32_t e) { return kg.entity_description(EntityId(e)); })
        .def("relation_name", [](const KnowledgeGraph& kg, std::uint32_t r) { return kg.relation_name(RelationId(r)); })
        .def("find_entity",
             [](const KnowledgeGraph& kg, const std::string& key) -> std::optional<std::uint32_t> {
                 const auto e = kg.find_entity(key);
                 return e ? std::optional(e->value) : std::nullopt;
             })
        .def_property_readonly("train", [](const KnowledgeGraph& kg) { return triples(kg.train()); })
        .def_property_readonly("valid", [](const KnowledgeGraph& kg) { return triples(kg.valid()); })
        .def_property_readonly("test", [](const KnowledgeGraph& kg) { return triples(kg.test()); })
        .def("neighbors", [](const KnowledgeGraph& kg, std::uint32_t e) { return triples(kg.neighbors(EntityId(e))); })
        .def("cooccurrence", [](const KnowledgeGraph& kg, std::uint32_t a, std::uint32_t b) {
            return kg.cooccurrence().count(RelationId(a), RelationId(b));
        });
    m.def("load_kg", &load_kg, py::arg("dataset_dir"));

    py::class_<TransE>(m, "TransE")
        .def_property_readonly("num_entities", &TransE::num_entities)
        .def_property_readonly("dim", &TransE::dim)
        .def("score",
             [](const TransE& t, std::uint32_t h, std::uint32_t r, std::uint32_t tl) {
                 return t.score({EntityId(h), RelationId(r), EntityId(tl)});
             })
        .def(
            "score_candidates",
            [](const TransE& t, std::uint32_t known, std::uint32_t r, const std::string& direction) {
                std::vector<double> out(t.num_entities());
                t.score_candidates(make_query(known, r, direction, std::nullopt), out);
                return to_array(out);
            },
            py::arg("known"), py::arg("relation"), py::arg("direction") = "tail")
        .def_property_readonly("entity_embeddings",
                               [](const TransE& t) {
                                   const auto& tb = t.table();
                                   return to_array(tb.entities, tb.num_entities, tb.dim);
                               })
        .def_property_readonly("relation_embeddings",
                               [](const TransE& t) {
                                   const auto& tb = t.table();
                                   return to_array(tb.relations, tb.num_relations, tb.dim);
                               })
        .def("save", [](const TransE& t, const std::filesystem::path& p) { save_checkpoint(t.table(), p); });
    m.def("load_checkpoint", [](const std::filesystem::path& p) { return TransE(load_checkpoint(p)); });

    m.def(
        "train_transe",
        [](const KnowledgeGraph& kg, std::size_t dim, double learning_rate, double margin, std::size_t epochs,
           std::size_t batch_size, std::uint64_t seed, const std::string& norm) {
            TrainConfig c;
            c.dim = dim;
            c.learning_rate = learning_rate;
            c.margin = margin;
            c.epochs = epochs;
            c.batch_size = batch_size;
            c.seed = seed;
            if (norm == "l1") c.norm = NormKind::L1;
            else if (norm == "l2") c.norm = NormKind::L2;
            else throw ConfigError("norm must be l1 or l2, got " + norm);
            py::gil_scoped_release release;
            return TransE(train_transe(kg, c));
        },
        py::arg("kg"), py::arg("dim") = 100, py::arg("learning_rate") = 0.01, py::arg("margin") = 1.0,
        py::arg("epochs") = 1000, py::arg("batch_size") = 128, py::arg("seed") = 0, py::arg("norm") = "l2");

    py::class_<RankedQuery>(m, "RankedQuery")
        .def_property_readonly("ranking", [](const RankedQuery& r) { return raw_ids(r.ranking); })
        .def_property_readonly("topm", [](const RankedQuery& r) { return raw_ids(r.topm()); })
        .def_readonly("topm_scores", &RankedQuery::topm_scores)
        .def_readonly("gold_rank", &RankedQuery::gold_rank)
        .def_readonly("gold_score", &RankedQuery::gold_score)
        .def("global_confidence", &global_confidence)
        .def(
            "local_confidence", [](const RankedQuery& r, std::size_t m) { return local_confidence(r, m); },
            py::arg("m") = 20)
        .def(
            "sample_confidence",
            [](const RankedQuery& r, double alpha, double beta, std::size_t m) {
                return sample_confidence(r, ConfidenceParams{alpha, beta, m});
            },
            py::arg("alpha") = 1.0, py::arg("beta") = 0.05, py::arg("m") = 20);

    m.def(
        "rank_query",
        [](const TransE& model, const KnowledgeGraph& kg, std::uint32_t known, std::uint32_t relation,
           const std::string& direction, std::uint32_t gold, std::size_t mm, bool filtered) {
            const auto q = make_query(known, relation, direction, gold);
            return filtered ? rank_query(model, kg, q, mm) : rank_query_unfiltered(model, q, mm);
        },
        py::arg("model"), py::arg("kg"), py::arg("known"), py::arg("relation"), py::arg("direction"),
        py::arg("gold"), py::arg("m") = 20, py::arg("filtered") = true);

    m.def(
        "build_eval_set",
        [](const KnowledgeGraph& kg, const TransE& model, std::size_t mm, std::size_t gamma, bool shuffle,
           std::size_t max_queries) {
            ConfidenceParams p;
            p.m = mm;
            BuildOptions o;
            o.gamma = gamma;
            o.shuffle_candidates = shuffle;
            const auto set = build_eval_set(kg, model, p, o, nullptr, 1, max_queries);
            py::list out;
            for (const auto& s : set.samples) {
                py::dict d;
                d["id"] = s.id;
                d["prompt"] = render_prompt(s);
                d["candidate_names"] = s.candidate_names;
                d["candidate_ids"] = raw_ids(s.candidate_ids);
                d["gold_id"] = s.gold_id.value;
                d["gold_name"] = s.gold_name;
                d["gold_rank"] = s.gold_rank;
                out.append(d);
            }
            return out;
        },
        py::arg("kg"), py::arg("model"), py::arg("m") = 20, py::arg("gamma") = 10, py::arg("shuffle") = false,
        py::arg("max_queries") = 0);
    m.def("parse_candidate_names", &parse_candidate_names, py::arg("prompt"));

    m.def("normalize_answer", &normalize_answer, py::arg("text"));
    m.def(
        "ground",
        [](const std::string& text, const std::vector<std::string>& candidates) -> std::optional<std::size_t> {
            const auto s = ground(text, candidates);
            return s.abstained() ? std::nullopt : std::optional(s.index());
        },
        py::arg("text"), py::arg("candidates"));

    m.def(
        "metrics", [](const std::vector<std::size_t>& ranks) { return metrics_dict(metrics(ranks)); },
        py::arg("ranks"));

    py::class_<AdapterParams>(m, "Adapter")
        .def_readonly("d0", &AdapterParams::d0)
        .def_readonly("d1", &AdapterParams::d1)
        .def_readonly("d2", &AdapterParams::d2)
        .def(
            "project",
            [](const AdapterParams& p, const py::array_t<double, py::array::c_style | py::array::forcecast>& e) {
                return to_array(project(p, to_vector(e)));
            },
            py::arg("e"))
        .def(
            "project_grad",
            [](const AdapterParams& p, const py::array_t<double, py::array::c_style | py::array::forcecast>& e,
               const py::array_t<double, py::array::c_style | py::array::forcecast>& upstream) {
                const auto g = project_grad(p, to_vector(e), to_vector(upstream));
                py::dict d;
                d["w1"] = to_array(g.w1, p.hidden_rows(), p.d0);
                d["b1"] = to_array(g.b1);
                d["w2"] = to_array(g.w2, p.d2, p.d1);
                d["b2"] = to_array(g.b2);
                d["e"] = to_array(g.e);
                return d;
            },
            py::arg("e"), py::arg("upstream"))
        .def("save", [](const AdapterParams& p, const std::filesystem::path& path) { save_adapter(p, path); });
    m.def(
        "init_adapter",
        [](std::size_t d0, std::size_t d1, std::size_t d2, const std::string& activation, std::uint64_t seed) {
            return init_adapter(d0, d1, d2, parse_activation(activation), seed);
        },
        py::arg("d0"), py::arg("d1"), py::arg("d2"), py::arg("activation") = "swiglu", py::arg("seed") = 0);
    m.def("load_adapter", &load_adapter, py::arg("path"));

    py::class_<PipelineConfig>(m, "Config")
        .def_property_readonly("dataset_dir", [](const PipelineConfig& c) { return c.dataset_dir; })
        .def_property_readonly("workdir", [](const PipelineConfig& c) { return c.workdir; })
        .def("canonical", &canonical_config);
    m.def(
        "load_config",
        [](std::optional<std::filesystem::path> file, const std::vector<std::string>& overrides) {
            return load_config(file, overrides);
        },
        py::arg("file") = py::none(), py::arg("overrides") = std::vector<std::string>{});
    m.def(
        "train_embeddings",
        [](const PipelineConfig& c) {
            py::gil_scoped_release release;
            return run_train_embeddings(c);
        },
        py::arg("config"));
    m.def(
        "build",
        [](const PipelineConfig& c, const std::string& which) {
            if (which != "finetune" && which != "eval") throw ConfigError("build kind must be finetune or eval");
            py::gil_scoped_release release;
            return run_build(c, which == "eval" ? BuildKind::Eval : BuildKind::Finetune);
        },
        py::arg("config"), py::arg("which"));
    m.def(
        "evaluate",
        [](const PipelineConfig& c) {
            py::gil_scoped_release release;
            return run_evaluate(c);
        },
        py::arg("config"));

    py::class_<StageResult>(m, "StageResult")
        .def_readonly("dir", &StageResult::dir)
        .def_readonly("digest", &StageResult::digest)
        .def_readonly("reused", &StageResult::reused)
        .def("as_dict", &stage);
}
