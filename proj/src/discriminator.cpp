#include "dift/discriminator.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "dift/error.hpp"

namespace dift {
namespace {

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

ParsedUrl parse_endpoint(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw ConfigError("remote endpoint must be an absolute http(s) URL: " + url);
    }
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        return {url, "/"};
    }
    return {url.substr(0, path_start), url.substr(path_start)};
}

bool retryable_status(int status) { return status == 429 || status >= 500; }

}  // namespace

std::string normalize_answer(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char c : s) {
        const auto uc = static_cast<unsigned char>(c);
        if (std::isspace(uc)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(uc)));
    }
    return out;
}

Selection ground(std::string_view output_text, std::span<const std::string> candidate_names) {
    const auto out = normalize_answer(output_text);
    std::vector<std::string> names;
    names.reserve(candidate_names.size());
    for (const auto& n : candidate_names) names.push_back(normalize_answer(n));

    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == out) return Selection::chosen(i);
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (!names[i].empty() && out.find(names[i]) != std::string::npos) return Selection::chosen(i);
    }
    return Selection::abstain();
}

Selection OracleDiscriminator::select(const InstructionSample& sample) const {
    const auto it = std::find(sample.candidate_ids.begin(), sample.candidate_ids.end(), sample.gold_id);
    if (it == sample.candidate_ids.end()) return Selection::abstain();
    return Selection::chosen(static_cast<std::size_t>(it - sample.candidate_ids.begin()));
}

Selection FirstCandidateDiscriminator::select(const InstructionSample& sample) const {
    if (sample.candidate_ids.empty()) return Selection::abstain();
    return Selection::chosen(0);
}

ScriptedDiscriminator ScriptedDiscriminator::from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open scripted fixture " + path.string());
    std::unordered_map<std::string, std::string> outputs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected <sample_id>\\t<output>");
        }
        outputs.insert_or_assign(line.substr(0, tab), line.substr(tab + 1));
    }
    return ScriptedDiscriminator(std::move(outputs));
}

Selection ScriptedDiscriminator::select(const InstructionSample& sample) const {
    const auto it = outputs_.find(sample.id);
    if (it == outputs_.end()) return Selection::abstain();
    return ground(it->second, sample.candidate_names);
}

std::string remote_request(std::string_view prompt, const RemoteConfig& config) {
    const auto url = parse_endpoint(config.endpoint);

    nlohmann::json body;
    body["model"] = config.model;
    body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", std::string(prompt)}}});
    body["temperature"] = config.temperature;
    const auto payload = body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);

    httplib::Headers headers;
    if (const char* token = std::getenv(config.token_env.c_str()); token && *token) {
        headers.emplace("Authorization", std::string("Bearer ") + token);
    }

    std::string last_error;
    auto delay = config.backoff;
    for (std::size_t attempt = 0; attempt <= config.retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(delay);
            delay = std::min(delay * 2, config.max_backoff);
        }
        httplib::Client client(url.origin);
        client.set_connection_timeout(config.timeout);
        client.set_read_timeout(config.timeout);
        client.set_write_timeout(config.timeout);

        auto res = client.Post(url.path, headers, payload, "application/json");
        if (!res) {
            const auto err = res.error();
            last_error = (err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout)
                             ? "request timed out after " + std::to_string(config.timeout.count()) + " ms"
                             : "transport error: " + httplib::to_string(err);
            continue;
        }
        if (res->status != 200) {
            last_error = "HTTP status " + std::to_string(res->status);
            if (retryable_status(res->status)) continue;
            throw BackendError(config.endpoint + ": " + last_error);
        }
        try {
            const auto j = nlohmann::json::parse(res->body);
            return j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw BackendError(config.endpoint + ": malformed response body: " + e.what());
        }
    }
    throw BackendError(config.endpoint + ": " + last_error + " (after " + std::to_string(config.retries + 1) +
                       " attempts)");
}

Selection RemoteDiscriminator::select(const InstructionSample& sample) const {
    try {
        return ground(remote_request(render_prompt(sample), config_), sample.candidate_names);
    } catch (const BackendError& e) {
        spdlog::warn("sample {}: {}; abstaining", sample.id, e.what());
        return Selection::abstain();
    }
}

}  // namespace dift
