#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "richctl/image.hpp"

namespace richctl {

// Object name -> {visible part, shooting angle}; the wire format between the
// three enrichment stages and the language model.
struct SemanticEntry {
    std::string visible_part;
    std::string shooting_angle;

    bool operator==(const SemanticEntry&) const = default;
};
using SemanticDict = std::map<std::string, SemanticEntry>;

std::string serialize_dict(const SemanticDict& d);  // strict JSON
// Lenient parse: strips markdown code fences first; anything that is not a
// JSON object of {name: {"visible part", "shooting angle"}} yields nullopt.
std::optional<SemanticDict> parse_dict(const std::string& reply);

class LlmClient {
public:
    virtual ~LlmClient() = default;
    // stage in {1,2,3}; image attached only for stage 1.
    virtual std::string send(int stage, const std::string& text, const Image* image) = 0;
    long calls() const { return calls_; }

protected:
    long calls_ = 0;
};

// Deterministic key for a request; fixture filenames are its hex form.
uint64_t request_hash(const std::string& text, const Image* image);
std::string fixture_filename(const std::string& text, const Image* image);

// Pure replay client: replies are fixture files under <dir>/stage<N>/<hash>.txt.
// A missing fixture yields an empty reply, which every stage treats as invalid
// and resolves through its fallback, so pipelines never fail hard.
class MockLlmClient : public LlmClient {
public:
    explicit MockLlmClient(std::filesystem::path fixture_dir);
    std::string send(int stage, const std::string& text, const Image* image) override;

    // Test/bootstrap helper: writes a reply file where send() will find it.
    static void write_fixture(const std::filesystem::path& fixture_dir, int stage,
                              const std::string& text, const Image* image,
                              const std::string& reply);

private:
    std::filesystem::path dir_;
};

// Echoes the request text back; every reply is an invalid dictionary, so the
// pipeline exercises only its fallbacks.
class EchoLlmClient : public LlmClient {
public:
    std::string send(int stage, const std::string& text, const Image* image) override;
};

// OpenAI-style chat endpoint over HTTP. Configured but not exercised in tests;
// the fixture client is the supported path.
class LiveLlmClient : public LlmClient {
public:
    LiveLlmClient(std::string host, std::string path, std::string api_key,
                  std::string model = "gpt-4o");
    std::string send(int stage, const std::string& text, const Image* image) override;

private:
    std::string host_, path_, api_key_, model_;
};

// Instruction templates, loaded from resource files and checked against pinned
// checksums so drift is caught at startup. Placeholders: <ImageHere>,
// <DictionaryHere>, <PromptHere>.
std::filesystem::path default_template_dir();  // env RICHCTL_ARP_TEMPLATES or install path
std::string load_stage_template(int stage,
                                const std::filesystem::path& dir = default_template_dir());
std::string build_stage_request(int stage, const SemanticDict& dict, const std::string& prompt,
                                const std::filesystem::path& dir = default_template_dir());

struct ArpRecord {
    SemanticDict stage1_dict;
    SemanticDict stage2_dict;
    std::string enriched_prompt;
    long client_calls = 0;
};

SemanticDict stage1_extract(const Image& cond, LlmClient& client,
                            const std::filesystem::path& tmpl_dir = default_template_dir());
SemanticDict stage2_align(const SemanticDict& dict, const std::string& prompt, LlmClient& client,
                          const std::filesystem::path& tmpl_dir = default_template_dir());
std::string stage3_rewrite(const SemanticDict& dict, const std::string& prompt, LlmClient& client,
                           const std::filesystem::path& tmpl_dir = default_template_dir());

// Full three-stage composition; total by construction (every stage falls back
// on invalid replies).
std::string enrich(const Image& cond, const std::string& prompt, LlmClient& client,
                   ArpRecord* record = nullptr,
                   const std::filesystem::path& tmpl_dir = default_template_dir());

}  // namespace richctl
