#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>

#include "dift/instruct.hpp"

namespace dift {

/// A chosen candidate position, or abstention.
class Selection {
public:
    static Selection chosen(std::size_t index) { return Selection(index); }
    static Selection abstain() { return Selection(); }

    bool abstained() const { return !index_.has_value(); }
    std::size_t index() const { return index_.value(); }

    friend bool operator==(const Selection&, const Selection&) = default;

private:
    Selection() = default;
    explicit Selection(std::size_t i) : index_(i) {}
    std::optional<std::size_t> index_;
};

/// Stand-in for the finetuned LLM. Implementations are safe to call
/// concurrently.
class Discriminator {
public:
    virtual ~Discriminator() = default;
    virtual Selection select(const InstructionSample& sample) const = 0;
    virtual std::string name() const = 0;
    /// Upper bound on concurrent select() calls; 0 means unlimited.
    virtual std::size_t max_concurrency() const { return 0; }
};

/// Case-folds ASCII, trims, and collapses runs of whitespace to one space.
std::string normalize_answer(std::string_view s);

/// Maps free text onto the candidate list: earliest exact match after
/// normalization, else earliest candidate contained in the text, else abstain.
Selection ground(std::string_view output_text, std::span<const std::string> candidate_names);

/// Chooses the gold entity when it is among the candidates.
class OracleDiscriminator final : public Discriminator {
public:
    Selection select(const InstructionSample& sample) const override;
    std::string name() const override { return "oracle"; }
};

/// Always chooses the top-ranked candidate.
class FirstCandidateDiscriminator final : public Discriminator {
public:
    Selection select(const InstructionSample& sample) const override;
    std::string name() const override { return "first_candidate"; }
};

/// Replays fixed outputs keyed by sample id; unknown ids abstain.
class ScriptedDiscriminator final : public Discriminator {
public:
    explicit ScriptedDiscriminator(std::unordered_map<std::string, std::string> outputs)
        : outputs_(std::move(outputs)) {}

    /// `sample_id<TAB>output_text` per line.
    static ScriptedDiscriminator from_file(const std::filesystem::path& path);

    Selection select(const InstructionSample& sample) const override;
    std::string name() const override { return "scripted"; }

private:
    std::unordered_map<std::string, std::string> outputs_;
};

struct RemoteConfig {
    std::string endpoint;  // e.g. http://localhost:8000/v1/chat/completions
    std::string model;
    std::string token_env = "DIFT_API_KEY";
    std::chrono::milliseconds timeout{30000};
    std::size_t retries = 2;  // attempts = retries + 1
    std::chrono::milliseconds backoff{200};
    std::chrono::milliseconds max_backoff{5000};
    std::size_t max_in_flight = 4;
    double temperature = 0.0;
};

/// Sends the prompt as a single user message to an OpenAI-compatible
/// chat-completions endpoint and returns the first choice's content.
/// Retries transport errors and 5xx/429 with exponential backoff.
/// Throws BackendError when attempts are exhausted or the body is malformed.
std::string remote_request(std::string_view prompt, const RemoteConfig& config);

class RemoteDiscriminator final : public Discriminator {
public:
    explicit RemoteDiscriminator(RemoteConfig config) : config_(std::move(config)) {}

    /// Transport failures are logged and turned into abstentions.
    Selection select(const InstructionSample& sample) const override;
    std::string name() const override { return "remote"; }
    std::size_t max_concurrency() const override { return config_.max_in_flight; }

private:
    RemoteConfig config_;
};

}  // namespace dift
