#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>

namespace dift {

/// Dense integer handle. The tag keeps entity and relation ids from mixing.
template <class Tag>
struct Id {
    std::uint32_t value = 0;

    constexpr Id() = default;
    constexpr explicit Id(std::uint32_t v) : value(v) {}
    constexpr explicit Id(std::size_t v) : value(static_cast<std::uint32_t>(v)) {}

    constexpr std::size_t index() const { return value; }

    friend constexpr auto operator<=>(Id, Id) = default;
};

using EntityId = Id<struct EntityTag>;
using RelationId = Id<struct RelationTag>;

struct Triple {
    EntityId head;
    RelationId relation;
    EntityId tail;

    friend constexpr auto operator<=>(const Triple&, const Triple&) = default;
};

/// Which slot of the fact is missing.
enum class Direction : std::uint8_t {
    Head,  // (?, r, t)
    Tail,  // (h, r, ?)
};

std::string_view to_string(Direction d);
Direction direction_from_string(std::string_view s);

/// A completion query: the known entity, the relation, and (for labelled
/// queries) the answer.
struct Query {
    EntityId known;
    RelationId relation;
    Direction direction = Direction::Tail;
    std::optional<EntityId> gold;

    /// Fills the missing slot with `e`.
    Triple complete(EntityId e) const {
        return direction == Direction::Tail ? Triple{known, relation, e} : Triple{e, relation, known};
    }

    static Query tail_query(const Triple& t) { return {t.head, t.relation, Direction::Tail, t.tail}; }
    static Query head_query(const Triple& t) { return {t.tail, t.relation, Direction::Head, t.head}; }
};

}  // namespace dift

template <class Tag>
struct std::hash<dift::Id<Tag>> {
    std::size_t operator()(dift::Id<Tag> id) const noexcept { return std::hash<std::uint32_t>{}(id.value); }
};

template <>
struct std::hash<dift::Triple> {
    std::size_t operator()(const dift::Triple& t) const noexcept {
        std::uint64_t k = (static_cast<std::uint64_t>(t.head.value) << 32) ^ t.tail.value;
        k ^= static_cast<std::uint64_t>(t.relation.value) * 0x9E3779B97F4A7C15ULL;
        return std::hash<std::uint64_t>{}(k);
    }
};
