#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dift/adapter.hpp"
#include "dift/discriminator.hpp"
#include "dift/embedder.hpp"
#include "dift/evalkit.hpp"
#include "dift/instruct.hpp"
#include "dift/ranker.hpp"

namespace dift {

/// Everything a pipeline run needs. Loaded from an INI-style file with one
/// section per module; see README for the key list.
struct PipelineConfig {
    std::filesystem::path dataset_dir;
    std::filesystem::path workdir = "work";
    std::size_t threads = 1;

    TrainConfig embedder;
    ConfidenceParams ranker;
    BuildOptions instruct;
    std::uint64_t split_seed = 0;

    std::size_t adapter_d1 = 0;  // 0: d2 / 2
    std::size_t adapter_d2 = 4096;
    Activation adapter_activation = Activation::SwiGLU;
    std::uint64_t adapter_seed = 0;
    std::filesystem::path adapter_file;  // empty: initialize from seed

    std::string backend = "first_candidate";
    std::filesystem::path script_file;
    RemoteConfig remote;

    std::size_t max_queries = 0;
    bool audit = true;
};

/// Reads `file` (if given) then applies `section.key=value` overrides.
/// Unknown sections or keys, and unparsable values, throw ConfigError.
/// Relative paths in the file resolve against the file's directory.
PipelineConfig load_config(const std::optional<std::filesystem::path>& file,
                           const std::vector<std::string>& overrides = {});

/// Canonical `section.key=value` lines for every setting (paths excluded).
std::string canonical_config(const PipelineConfig& config);

/// Hex SHA-256.
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

/// Digest over the dataset files the loader reads.
std::string dataset_digest(const std::filesystem::path& dataset_dir);

struct StageResult {
    std::filesystem::path dir;
    std::string digest;
    bool reused = false;
};

/// workdir/embeddings/<digest>/checkpoint.bin + manifest.json.
StageResult run_train_embeddings(const PipelineConfig& config);

enum class BuildKind { Finetune, Eval };

/// workdir/build-<kind>/<digest>/ with instruction files, sidecars,
/// candidate dumps and summary.json. Trains embeddings first if needed.
StageResult run_build(const PipelineConfig& config, BuildKind kind);

/// workdir/evaluate/<digest>/report.json, report.txt, audit.jsonl.
StageResult run_evaluate(const PipelineConfig& config);

std::unique_ptr<Discriminator> make_discriminator(const PipelineConfig& config);

/// Pretty-prints one record of an instruction file, plus the shapes of its
/// projected knowledge vectors when the sidecar is next to it.
std::string inspect_sample(const PipelineConfig& config, const std::filesystem::path& instruction_file,
                           std::optional<std::size_t> index, std::optional<std::string> id);

}  // namespace dift
