#include "dift/kg_store.hpp"

#include <algorithm>
#include <fstream>

#include <spdlog/spdlog.h>

#include "dift/error.hpp"

namespace dift {
namespace {

namespace fs = std::filesystem;

constexpr std::array<std::string_view, 3> kSplitNames = {"train", "valid", "test"};

std::uint64_t pair_key(std::uint32_t a, std::uint32_t b) { return (static_cast<std::uint64_t>(a) << 32) | b; }

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find('\t', start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

/// Calls fn(line_number, line) for each non-blank line; strips a trailing CR.
template <class Fn>
void for_each_line(const fs::path& path, Fn&& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        fn(lineno, std::string_view(line));
    }
}

[[noreturn]] void malformed(const fs::path& path, std::size_t lineno, const std::string& why) {
    throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + why);
}

/// key<TAB>text files. First occurrence of a key wins.
std::vector<std::pair<std::string, std::string>> read_key_text(const fs::path& path) {
    std::vector<std::pair<std::string, std::string>> rows;
    std::unordered_set<std::string> seen;
    std::size_t dups = 0;
    for_each_line(path, [&](std::size_t lineno, std::string_view line) {
        const auto tab = line.find('\t');
        if (tab == std::string_view::npos || tab == 0) {
            malformed(path, lineno, "expected <id>\\t<text>");
        }
        std::string key(line.substr(0, tab));
        if (!seen.insert(key).second) {
            ++dups;
            return;
        }
        rows.emplace_back(std::move(key), std::string(line.substr(tab + 1)));
    });
    if (dups > 0) {
        spdlog::warn("{}: ignored {} duplicate keys", path.string(), dups);
    }
    return rows;
}

std::vector<std::string> read_key_list(const fs::path& path) {
    std::vector<std::string> keys;
    std::unordered_set<std::string> seen;
    for_each_line(path, [&](std::size_t lineno, std::string_view line) {
        const auto fields = split_tabs(line);
        if (fields.empty() || fields[0].empty()) {
            malformed(path, lineno, "expected an identifier");
        }
        std::string key(fields[0]);
        if (seen.insert(key).second) {
            keys.push_back(std::move(key));
        }
    });
    return keys;
}

fs::path first_existing(const fs::path& dir, std::initializer_list<std::string_view> names) {
    for (auto name : names) {
        auto p = dir / name;
        if (fs::exists(p)) {
            return p;
        }
    }
    throw DataError("missing file in " + dir.string() + ": expected " + std::string(*names.begin()));
}

struct Vocabulary {
    std::vector<std::string> keys;
    std::vector<std::string> texts;
    std::unordered_map<std::string, std::uint32_t> index;
};

/// Builds the id table. With a universe list, the list defines membership and
/// order and the text file only supplies names; otherwise the text file does both.
Vocabulary build_vocabulary(const fs::path& text_file, const std::optional<fs::path>& universe_file,
                            std::string_view what) {
    Vocabulary v;
    auto rows = read_key_text(text_file);
    if (!universe_file) {
        for (auto& [key, text] : rows) {
            v.index.emplace(key, static_cast<std::uint32_t>(v.keys.size()));
            v.keys.push_back(std::move(key));
            v.texts.push_back(std::move(text));
        }
        return v;
    }
    std::unordered_map<std::string, std::string> names;
    for (auto& [key, text] : rows) {
        names.emplace(std::move(key), std::move(text));
    }
    std::size_t unnamed = 0;
    for (auto& key : read_key_list(*universe_file)) {
        v.index.emplace(key, static_cast<std::uint32_t>(v.keys.size()));
        auto it = names.find(key);
        if (it == names.end()) {
            ++unnamed;
            v.texts.push_back(key);
        } else {
            v.texts.push_back(std::move(it->second));
        }
        v.keys.push_back(std::move(key));
    }
    if (unnamed > 0) {
        spdlog::warn("{} {} ids have no entry in {}; using the raw id as name", unnamed, what,
                     text_file.filename().string());
    }
    return v;
}

std::vector<Triple> read_triples(const fs::path& path, const Vocabulary& ents, const Vocabulary& rels) {
    std::vector<Triple> out;
    for_each_line(path, [&](std::size_t lineno, std::string_view line) {
        const auto fields = split_tabs(line);
        if (fields.size() != 3) {
            malformed(path, lineno, "expected 3 tab-separated fields, got " + std::to_string(fields.size()));
        }
        auto lookup = [&](const Vocabulary& v, std::string_view key, std::string_view kind) {
            auto it = v.index.find(std::string(key));
            if (it == v.index.end()) {
                malformed(path, lineno, "unknown " + std::string(kind) + " '" + std::string(key) + "'");
            }
            return it->second;
        };
        out.push_back(Triple{EntityId(lookup(ents, fields[0], "entity")), RelationId(lookup(rels, fields[1], "relation")),
                             EntityId(lookup(ents, fields[2], "entity"))});
    });
    return out;
}

std::optional<fs::path> optional_file(const fs::path& dir, std::string_view name) {
    auto p = dir / name;
    if (fs::exists(p)) {
        return p;
    }
    return std::nullopt;
}

}  // namespace

std::string_view to_string(Direction d) { return d == Direction::Head ? "head" : "tail"; }

Direction direction_from_string(std::string_view s) {
    if (s == "head") {
        return Direction::Head;
    }
    if (s == "tail") {
        return Direction::Tail;
    }
    throw DataError("unknown direction '" + std::string(s) + "'");
}

KnowledgeGraph::KnowledgeGraph(KgParts parts) : parts_(std::move(parts)) {
    const auto ne = parts_.entity_keys.size();
    const auto nr = parts_.relation_keys.size();
    if (parts_.entity_names.size() != ne || parts_.relation_names.size() != nr) {
        throw DataError("name tables do not match id tables");
    }
    parts_.entity_descriptions.resize(ne);

    for (std::size_t i = 0; i < ne; ++i) {
        if (!entity_index_.emplace(parts_.entity_keys[i], EntityId(i)).second) {
            throw DataError("duplicate entity id '" + parts_.entity_keys[i] + "'");
        }
    }
    for (std::size_t i = 0; i < nr; ++i) {
        if (!relation_index_.emplace(parts_.relation_keys[i], RelationId(i)).second) {
            throw DataError("duplicate relation id '" + parts_.relation_keys[i] + "'");
        }
    }

    for (std::size_t s = 0; s < 3; ++s) {
        auto& triples = parts_.splits[s];
        std::unordered_set<Triple> seen;
        std::vector<Triple> unique;
        unique.reserve(triples.size());
        for (const auto& t : triples) {
            if (t.head.index() >= ne || t.tail.index() >= ne || t.relation.index() >= nr) {
                throw DataError("dangling id in " + std::string(kSplitNames[s]) + " split");
            }
            if (seen.insert(t).second) {
                unique.push_back(t);
            }
        }
        if (unique.size() != triples.size()) {
            spdlog::warn("{} split: removed {} duplicate triples", kSplitNames[s], triples.size() - unique.size());
        }
        triples = std::move(unique);
        for (const auto& t : triples) {
            if (!all_true_.insert(t).second) {
                throw DataError("triple occurs in more than one split (" + std::string(kSplitNames[s]) + ")");
            }
            tail_answers_[pair_key(t.head.value, t.relation.value)].push_back(t.tail);
            head_answers_[pair_key(t.relation.value, t.tail.value)].push_back(t.head);
        }
    }

    const auto train_split = train();
    train_set_.insert(train_split.begin(), train_split.end());
    adjacency_.resize(ne);
    for (std::size_t i = 0; i < train_split.size(); ++i) {
        const auto& t = train_split[i];
        adjacency_[t.head.index()].push_back(static_cast<std::uint32_t>(i));
        if (t.tail != t.head) {
            adjacency_[t.tail.index()].push_back(static_cast<std::uint32_t>(i));
        }
    }
    cooc_ = build_cooccurrence(*this);
}

std::optional<EntityId> KnowledgeGraph::find_entity(const std::string& key) const {
    if (auto it = entity_index_.find(key); it != entity_index_.end()) {
        return it->second;
    }
    return std::nullopt;
}

std::optional<RelationId> KnowledgeGraph::find_relation(const std::string& key) const {
    if (auto it = relation_index_.find(key); it != relation_index_.end()) {
        return it->second;
    }
    return std::nullopt;
}

std::vector<Triple> KnowledgeGraph::neighbors(EntityId e) const {
    const auto& positions = adjacency_.at(e.index());
    const auto train_split = train();
    std::vector<Triple> out;
    out.reserve(positions.size());
    for (auto p : positions) {
        out.push_back(train_split[p]);
    }
    return out;
}

std::span<const EntityId> KnowledgeGraph::true_answers(const Query& q) const {
    const auto& index = q.direction == Direction::Tail ? tail_answers_ : head_answers_;
    const auto key = q.direction == Direction::Tail ? pair_key(q.known.value, q.relation.value)
                                                    : pair_key(q.relation.value, q.known.value);
    if (auto it = index.find(key); it != index.end()) {
        return it->second;
    }
    return {};
}

CooccurrenceTable build_cooccurrence(const KnowledgeGraph& kg) {
    const auto nr = kg.num_relations();
    CooccurrenceTable table(nr);
    // Relations incident to each entity, deduplicated.
    std::vector<std::vector<std::uint32_t>> incident(kg.num_entities());
    for (const auto& t : kg.train()) {
        incident[t.head.index()].push_back(t.relation.value);
        incident[t.tail.index()].push_back(t.relation.value);
    }
    for (auto& rels : incident) {
        std::sort(rels.begin(), rels.end());
        rels.erase(std::unique(rels.begin(), rels.end()), rels.end());
        for (auto a : rels) {
            for (auto b : rels) {
                table.increment(RelationId(a), RelationId(b));
            }
        }
    }
    return table;
}

KnowledgeGraph load_kg(const std::filesystem::path& dir) {
    if (!fs::is_directory(dir)) {
        throw DataError("dataset directory not found: " + dir.string());
    }
    auto ents = build_vocabulary(first_existing(dir, {"entity2text.txt"}), optional_file(dir, "entities.txt"), "entity");
    auto rels =
        build_vocabulary(first_existing(dir, {"relation2text.txt"}), optional_file(dir, "relations.txt"), "relation");

    KgParts parts;
    parts.entity_descriptions.assign(ents.keys.size(), std::string());
    if (auto longtext = optional_file(dir, "entity2textlong.txt")) {
        std::size_t unknown = 0;
        for (auto& [key, text] : read_key_text(*longtext)) {
            auto it = ents.index.find(key);
            if (it == ents.index.end()) {
                ++unknown;
                continue;
            }
            parts.entity_descriptions[it->second] = std::move(text);
        }
        if (unknown > 0) {
            spdlog::debug("entity2textlong.txt: {} descriptions for entities outside the graph", unknown);
        }
    }

    parts.splits[0] = read_triples(first_existing(dir, {"train.txt", "train.tsv"}), ents, rels);
    parts.splits[1] = read_triples(first_existing(dir, {"valid.txt", "dev.tsv", "valid.tsv"}), ents, rels);
    parts.splits[2] = read_triples(first_existing(dir, {"test.txt", "test.tsv"}), ents, rels);

    parts.entity_keys = std::move(ents.keys);
    parts.entity_names = std::move(ents.texts);
    parts.relation_keys = std::move(rels.keys);
    parts.relation_names = std::move(rels.texts);
    return KnowledgeGraph(std::move(parts));
}

void write_kg(const KnowledgeGraph& kg, const std::filesystem::path& dir) {
    fs::create_directories(dir);
    auto open = [&](std::string_view name) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) {
            throw DataError("cannot write " + (dir / name).string());
        }
        return out;
    };
    {
        auto names = open("entity2text.txt");
        auto descs = open("entity2textlong.txt");
        for (std::size_t i = 0; i < kg.num_entities(); ++i) {
            const EntityId e(i);
            names << kg.entity_key(e) << '\t' << kg.entity_name(e) << '\n';
            if (!kg.entity_description(e).empty()) {
                descs << kg.entity_key(e) << '\t' << kg.entity_description(e) << '\n';
            }
        }
    }
    {
        auto out = open("relation2text.txt");
        for (std::size_t i = 0; i < kg.num_relations(); ++i) {
            out << kg.relation_key(RelationId(i)) << '\t' << kg.relation_name(RelationId(i)) << '\n';
        }
    }
    for (std::size_t s = 0; s < 3; ++s) {
        auto out = open(std::string(kSplitNames[s]) + ".txt");
        for (const auto& t : kg.split(static_cast<Split>(s))) {
            out << kg.entity_key(t.head) << '\t' << kg.relation_key(t.relation) << '\t' << kg.entity_key(t.tail) << '\n';
        }
    }
}

}  // namespace dift
