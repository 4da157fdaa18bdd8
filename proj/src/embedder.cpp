#include "dift/embedder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <spdlog/spdlog.h>

#include "binary_io.hpp"
#include "dift/error.hpp"

namespace dift {
namespace {

constexpr std::array<char, 8> kCheckpointMagic = {'D', 'I', 'F', 'T', 'E', 'M', 'B', '\0'};
constexpr std::uint32_t kCheckpointVersion = 1;

void normalize_l2(std::span<double> v) {
    double sq = 0.0;
    for (double x : v) {
        sq += x * x;
    }
    if (sq > 0.0) {
        const double norm = std::sqrt(sq);
        for (double& x : v) {
            x /= norm;
        }
    }
}

double residual_norm(std::span<const double> h, std::span<const double> r, std::span<const double> t, NormKind nk) {
    double acc = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) {
        const double x = h[i] + r[i] - t[i];
        acc += nk == NormKind::L1 ? std::abs(x) : x * x;
    }
    return nk == NormKind::L1 ? acc : std::sqrt(acc);
}

/// Adds sign * d(distance)/d(h, r, t) to the buffer.
void add_distance_gradient(const EmbeddingTable& table, const Triple& t, double sign, GradientBuffer& grad) {
    const auto h = table.entity(t.head);
    const auto r = table.relation(t.relation);
    const auto tl = table.entity(t.tail);
    const std::size_t d = table.dim;
    std::vector<double> g(d);
    if (table.norm == NormKind::L1) {
        for (std::size_t i = 0; i < d; ++i) {
            const double x = h[i] + r[i] - tl[i];
            g[i] = x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
        }
    } else {
        const double n = residual_norm(h, r, tl, NormKind::L2);
        // Subgradient 0 at the kink.
        const double inv = n > 0.0 ? 1.0 / n : 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            g[i] = (h[i] + r[i] - tl[i]) * inv;
        }
    }
    // Fetch rows one at a time: a later row() call may reallocate the buffer.
    auto gh = grad.entity_row(t.head);
    for (std::size_t i = 0; i < d; ++i) gh[i] += sign * g[i];
    auto gr = grad.relation_row(t.relation);
    for (std::size_t i = 0; i < d; ++i) gr[i] += sign * g[i];
    auto gt = grad.entity_row(t.tail);
    for (std::size_t i = 0; i < d; ++i) gt[i] -= sign * g[i];
}

Triple corrupt(const Triple& pos, const KnowledgeGraph& kg, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::uint32_t> pick(0, static_cast<std::uint32_t>(kg.num_entities() - 1));
    std::bernoulli_distribution head_side(0.5);
    Triple neg = pos;
    for (int attempt = 0; attempt < 64; ++attempt) {
        neg = pos;
        if (head_side(rng)) {
            neg.head = EntityId(pick(rng));
        } else {
            neg.tail = EntityId(pick(rng));
        }
        if (!kg.is_train(neg)) {
            break;
        }
    }
    return neg;
}

}  // namespace

void validate(const TrainConfig& c) {
    if (c.dim < 1) {
        throw ConfigError("embedder.dim must be >= 1");
    }
    if (!(c.learning_rate > 0.0) || !(c.margin > 0.0)) {
        throw ConfigError("embedder.learning_rate and embedder.margin must be > 0");
    }
    if (c.negatives_per_positive < 1 || c.batch_size < 1) {
        throw ConfigError("embedder.negatives and embedder.batch_size must be >= 1");
    }
}

EmbeddingTable init_embeddings(std::size_t num_entities, std::size_t num_relations, const TrainConfig& config) {
    validate(config);
    EmbeddingTable table(num_entities, num_relations, config.dim, config.norm);
    std::mt19937_64 rng(config.seed);
    const double bound = 6.0 / std::sqrt(static_cast<double>(config.dim));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& x : table.entities) x = dist(rng);
    for (double& x : table.relations) x = dist(rng);
    for (std::size_t e = 0; e < num_entities; ++e) {
        normalize_l2(table.entity(EntityId(e)));
    }
    return table;
}

double distance(const EmbeddingTable& table, const Triple& t) {
    return residual_norm(table.entity(t.head), table.relation(t.relation), table.entity(t.tail), table.norm);
}

double score(const EmbeddingTable& table, EntityId h, RelationId r, EntityId t) {
    return -distance(table, Triple{h, r, t});
}

std::span<double> GradientBuffer::row(std::unordered_map<std::uint32_t, std::size_t>& slots, std::uint32_t key) {
    auto [it, inserted] = slots.try_emplace(key, data_.size());
    if (inserted) {
        data_.resize(data_.size() + dim_, 0.0);
    }
    return {data_.data() + it->second, dim_};
}

std::span<const double> GradientBuffer::find(const std::unordered_map<std::uint32_t, std::size_t>& slots,
                                             std::uint32_t key) const {
    auto it = slots.find(key);
    if (it == slots.end()) {
        return {};
    }
    return {data_.data() + it->second, dim_};
}

void GradientBuffer::apply(EmbeddingTable& table, double learning_rate) {
    for (const auto& [key, offset] : entity_slots_) {
        auto row = table.entity(EntityId(key));
        for (std::size_t i = 0; i < dim_; ++i) row[i] -= learning_rate * data_[offset + i];
    }
    for (const auto& [key, offset] : relation_slots_) {
        auto row = table.relation(RelationId(key));
        for (std::size_t i = 0; i < dim_; ++i) row[i] -= learning_rate * data_[offset + i];
    }
    clear();
}

void GradientBuffer::clear() {
    entity_slots_.clear();
    relation_slots_.clear();
    data_.clear();
}

double margin_loss(const EmbeddingTable& table, const Triple& pos, const Triple& neg, double margin) {
    const double v = margin + distance(table, pos) - distance(table, neg);
    return v > 0.0 || std::isnan(v) ? v : 0.0;
}

double accumulate_margin_gradient(const EmbeddingTable& table, const Triple& pos, const Triple& neg, double margin,
                                  GradientBuffer& grad) {
    const double loss = margin_loss(table, pos, neg, margin);
    if (loss > 0.0) {
        add_distance_gradient(table, pos, +1.0, grad);
        add_distance_gradient(table, neg, -1.0, grad);
    }
    return loss;
}

EmbeddingTable train_transe(const KnowledgeGraph& kg, const TrainConfig& config, const EpochCallback& on_epoch) {
    auto table = init_embeddings(kg.num_entities(), kg.num_relations(), config);
    const auto train = kg.train();
    if (config.epochs == 0) {
        return table;
    }
    if (train.empty()) {
        throw DataError("cannot train embeddings on an empty train split");
    }

    // Separate stream from initialization so epochs=0 and epochs>0 share the init.
    std::mt19937_64 rng(config.seed ^ 0xA5A5A5A5DEADBEEFULL);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    GradientBuffer grad(config.dim);

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const auto end = std::min(order.size(), start + config.batch_size);
            for (std::size_t i = start; i < end; ++i) {
                const auto& pos = train[order[i]];
                for (std::size_t k = 0; k < config.negatives_per_positive; ++k) {
                    const auto neg = corrupt(pos, kg, rng);
                    total += accumulate_margin_gradient(table, pos, neg, config.margin, grad);
                }
            }
            grad.apply(table, config.learning_rate);
        }
        const double mean = total / static_cast<double>(order.size() * config.negatives_per_positive);
        if (!std::isfinite(mean)) {
            throw std::runtime_error("non-finite training loss at epoch " + std::to_string(epoch) +
                                     "; try a smaller learning rate");
        }
        for (std::size_t e = 0; e < table.num_entities; ++e) {
            normalize_l2(table.entity(EntityId(e)));
        }
        if (on_epoch) {
            on_epoch(epoch, mean);
        }
        if ((epoch + 1) % 100 == 0) {
            spdlog::debug("epoch {}: mean loss {:.6f}", epoch + 1, mean);
        }
    }
    return table;
}

TransE::TransE(EmbeddingTable table) : table_(std::move(table)) {}

double TransE::score(const Triple& t) const { return -distance(table_, t); }

void TransE::score_candidates(const Query& q, std::span<double> out) const {
    if (out.size() != table_.num_entities) {
        throw std::invalid_argument("score_candidates: output size mismatch");
    }
    // Tail: -||(h + r) - e||; head: -||e - (t - r)||. Both compare e against
    // the query vector, so one loop covers both directions.
    const auto qv = query_embedding(q);
    const std::size_t d = table_.dim;
    const bool l1 = table_.norm == NormKind::L1;
    for (std::size_t e = 0; e < table_.num_entities; ++e) {
        const double* row = table_.entities.data() + e * d;
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double x = qv[i] - row[i];
            acc += l1 ? std::abs(x) : x * x;
        }
        out[e] = -(l1 ? acc : std::sqrt(acc));
    }
}

std::vector<double> TransE::query_embedding(const Query& q) const {
    const auto known = table_.entity(q.known);
    const auto rel = table_.relation(q.relation);
    std::vector<double> v(table_.dim);
    for (std::size_t i = 0; i < table_.dim; ++i) {
        v[i] = q.direction == Direction::Tail ? known[i] + rel[i] : known[i] - rel[i];
    }
    return v;
}

void save_checkpoint(const EmbeddingTable& table, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw DataError("cannot write " + path.string());
    }
    io::write_magic(out, kCheckpointMagic);
    io::write_uint<std::uint32_t>(out, kCheckpointVersion);
    io::write_uint<std::uint64_t>(out, table.num_entities);
    io::write_uint<std::uint64_t>(out, table.num_relations);
    io::write_uint<std::uint64_t>(out, table.dim);
    io::write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(table.norm));
    io::write_doubles(out, table.entities);
    io::write_doubles(out, table.relations);
    if (!out) {
        throw DataError("write failed: " + path.string());
    }
}

EmbeddingTable load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    const auto what = path.string();
    io::expect_magic(in, kCheckpointMagic, what);
    if (io::read_uint<std::uint32_t>(in, what) != kCheckpointVersion) {
        throw DataError("unsupported checkpoint version in " + what);
    }
    const auto ne = io::read_uint<std::uint64_t>(in, what);
    const auto nr = io::read_uint<std::uint64_t>(in, what);
    const auto dim = io::read_uint<std::uint64_t>(in, what);
    const auto norm = io::read_uint<std::uint32_t>(in, what);
    if (norm != 1 && norm != 2) {
        throw DataError("bad norm kind in " + what);
    }
    EmbeddingTable table(ne, nr, dim, static_cast<NormKind>(norm));
    io::read_doubles(in, table.entities, what);
    io::read_doubles(in, table.relations, what);
    if (in.peek() != std::char_traits<char>::eof()) {
        throw DataError("trailing bytes in " + what);
    }
    return table;
}

}  // namespace dift
