#pragma once

// Shared test fixtures: tiny in-memory graphs, seeded synthetic datasets on
// disk, and scratch directories.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dift/kg_store.hpp"

namespace dift::tests {

namespace fs = std::filesystem;

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = fs::temp_directory_path() /
                ("dift-test-" + std::to_string(rd()) + "-" + std::to_string(counter.fetch_add(1)));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline Triple T(std::uint32_t h, std::uint32_t r, std::uint32_t t) {
    return Triple{EntityId(h), RelationId(r), EntityId(t)};
}

/// Entities "e0".."e{n-1}" named "entity 0".., relations "r0".. named "relation 0"..
inline KgParts tiny_parts(std::size_t ne, std::size_t nr, std::vector<Triple> train, std::vector<Triple> valid = {},
                          std::vector<Triple> test = {}) {
    KgParts p;
    for (std::size_t i = 0; i < ne; ++i) {
        p.entity_keys.push_back("e" + std::to_string(i));
        p.entity_names.push_back("entity " + std::to_string(i));
        p.entity_descriptions.push_back(i % 3 == 0 ? "" : "description of entity " + std::to_string(i));
    }
    for (std::size_t i = 0; i < nr; ++i) {
        p.relation_keys.push_back("r" + std::to_string(i));
        p.relation_names.push_back("relation " + std::to_string(i));
    }
    p.splits = {std::move(train), std::move(valid), std::move(test)};
    return p;
}

inline KnowledgeGraph tiny_kg(std::size_t ne, std::size_t nr, std::vector<Triple> train, std::vector<Triple> valid = {},
                              std::vector<Triple> test = {}) {
    return KnowledgeGraph(tiny_parts(ne, nr, std::move(train), std::move(valid), std::move(test)));
}

/// Random graph with pairwise-disjoint splits and no duplicate triples.
/// Requested sizes are capped by the number of distinct triples.
inline KgParts random_parts(std::uint64_t seed, std::size_t ne, std::size_t nr, std::size_t ntrain,
                            std::size_t nvalid, std::size_t ntest) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::uint32_t> ent(0, static_cast<std::uint32_t>(ne - 1));
    std::uniform_int_distribution<std::uint32_t> rel(0, static_cast<std::uint32_t>(nr - 1));
    std::set<Triple> used;
    const std::size_t cap = ne * ne * nr;
    auto draw = [&](std::size_t n) {
        std::vector<Triple> out;
        while (out.size() < n && used.size() < cap) {
            const auto t = T(ent(rng), rel(rng), ent(rng));
            if (used.insert(t).second) out.push_back(t);
        }
        return out;
    };
    auto train = draw(ntrain);
    auto valid = draw(nvalid);
    auto test = draw(ntest);
    return tiny_parts(ne, nr, std::move(train), std::move(valid), std::move(test));
}

/// a -r-> b -r-> c -r-> d, with two-hop valid/test facts on a second relation.
inline KgParts chain_parts() {
    KgParts p;
    p.entity_keys = {"a", "b", "c", "d"};
    p.entity_names = {"Alpha", "Beta", "Gamma", "Delta"};
    p.entity_descriptions = {"first in the chain", "second in the chain", "", "last in the chain"};
    p.relation_keys = {"next", "skip"};
    p.relation_names = {"next", "two after"};
    p.splits[0] = {T(0, 0, 1), T(1, 0, 2), T(2, 0, 3)};
    p.splits[1] = {T(0, 1, 2)};
    p.splits[2] = {T(1, 1, 3), T(0, 0, 2)};
    return p;
}

/// Writes a seeded synthetic dataset in the on-disk layout (with
/// descriptions) and returns its directory.
inline fs::path write_synthetic_dataset(const fs::path& dir, std::uint64_t seed, std::size_t ne, std::size_t nr,
                                        std::size_t ntrain, std::size_t nvalid, std::size_t ntest) {
    auto parts = random_parts(seed, ne, nr, ntrain, nvalid, ntest);
    for (std::size_t i = 0; i < ne; ++i) {
        parts.entity_keys[i] = "/m/" + std::to_string(1000 + i);
        parts.entity_names[i] = "Entity " + std::to_string(i);
        parts.entity_descriptions[i] = i % 4 == 0 ? "" : "Entity " + std::to_string(i) + " is a synthetic node.";
    }
    for (std::size_t i = 0; i < nr; ++i) {
        parts.relation_keys[i] = "/rel/" + std::to_string(i);
        parts.relation_names[i] = "relation " + std::to_string(i);
    }
    write_kg(KnowledgeGraph(std::move(parts)), dir);
    return dir;
}

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

}  // namespace dift::tests
