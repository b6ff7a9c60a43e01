#include "richctl/arp.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#define CPPHTTPLIB_OPENSSL_SUPPORT_DISABLED
#include <httplib.h>

namespace richctl {

namespace {
constexpr uint64_t kTemplateChecksums[4] = {
    0,
    0x64b27896f63cc976ULL,  // stage 1
    0x0e305d9a5b0779aaULL,  // stage 2
    0x3c708f190dcc770eULL,  // stage 3
};

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
    size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

// strip leading/trailing ``` fences (with optional language tag) and whitespace
std::string strip_fences(const std::string& reply) {
    size_t b = reply.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = reply.find_last_not_of(" \t\r\n");
    std::string s = reply.substr(b, e - b + 1);
    if (s.rfind("```", 0) == 0) {
        size_t nl = s.find('\n');
        s = nl == std::string::npos ? "" : s.substr(nl + 1);
        size_t close = s.rfind("```");
        if (close != std::string::npos) s = s.substr(0, close);
    }
    b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}
}  // namespace

std::string serialize_dict(const SemanticDict& d) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [name, entry] : d) {
        j[name] = {{"visible part", entry.visible_part},
                   {"shooting angle", entry.shooting_angle}};
    }
    return j.dump();
}

std::optional<SemanticDict> parse_dict(const std::string& reply) {
    std::string body = strip_fences(reply);
    nlohmann::json j = nlohmann::json::parse(body, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object()) return std::nullopt;
    SemanticDict out;
    for (const auto& [name, val] : j.items()) {
        if (!val.is_object()) return std::nullopt;
        SemanticEntry e;
        if (val.contains("visible part") && val["visible part"].is_string())
            e.visible_part = val["visible part"].get<std::string>();
        if (val.contains("shooting angle") && val["shooting angle"].is_string())
            e.shooting_angle = val["shooting angle"].get<std::string>();
        if (e.visible_part.empty() || e.shooting_angle.empty()) return std::nullopt;
        out[name] = e;
    }
    return out;
}

uint64_t request_hash(const std::string& text, const Image* image) {
    uint64_t h = fnv1a(text);
    if (image) h = fnv1a(image->data.data(), image->data.size() * sizeof(float), h);
    return h;
}

std::string fixture_filename(const std::string& text, const Image* image) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx.txt",
                  static_cast<unsigned long long>(request_hash(text, image)));
    return buf;
}

MockLlmClient::MockLlmClient(std::filesystem::path fixture_dir) : dir_(std::move(fixture_dir)) {}

std::string MockLlmClient::send(int stage, const std::string& text, const Image* image) {
    ++calls_;
    auto path = dir_ / ("stage" + std::to_string(stage)) / fixture_filename(text, image);
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        std::cerr << "[arp] no fixture " << path.string() << "; stage falls back\n";
        return "";
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void MockLlmClient::write_fixture(const std::filesystem::path& fixture_dir, int stage,
                                  const std::string& text, const Image* image,
                                  const std::string& reply) {
    auto dir = fixture_dir / ("stage" + std::to_string(stage));
    std::filesystem::create_directories(dir);
    std::ofstream f(dir / fixture_filename(text, image), std::ios::binary);
    f << reply;
}

std::string EchoLlmClient::send(int /*stage*/, const std::string& text, const Image*) {
    ++calls_;
    return text;
}

LiveLlmClient::LiveLlmClient(std::string host, std::string path, std::string api_key,
                             std::string model)
    : host_(std::move(host)), path_(std::move(path)), api_key_(std::move(api_key)),
      model_(std::move(model)) {}

std::string LiveLlmClient::send(int /*stage*/, const std::string& text, const Image* image) {
    ++calls_;
    nlohmann::json content = nlohmann::json::array();
    content.push_back({{"type", "text"}, {"text", text}});
    if (image) {
        // latent images have no standard encoding over the wire; signal presence only
        content.push_back({{"type", "text"}, {"text", "[image attached out of band]"}});
    }
    nlohmann::json body = {
        {"model", model_},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", content}}})}};
    httplib::Client cli(host_);
    httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};
    auto res = cli.Post(path_, headers, body.dump(), "application/json");
    if (!res || res->status != 200) return "";
    nlohmann::json j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded()) return "";
    try {
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (...) {
        return "";
    }
}

std::filesystem::path default_template_dir() {
    if (const char* env = std::getenv("RICHCTL_ARP_TEMPLATES")) return env;
    return RICHCTL_RESOURCE_DIR;
}

std::string load_stage_template(int stage, const std::filesystem::path& dir) {
    if (stage < 1 || stage > 3) throw std::invalid_argument("stage must be 1..3");
    auto path = dir / ("stage" + std::to_string(stage) + ".txt");
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("missing template " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    std::string tmpl = ss.str();
    uint64_t got = fnv1a(tmpl);
    if (got != kTemplateChecksums[stage])
        throw std::runtime_error("template checksum mismatch for " + path.string());
    return tmpl;
}

std::string build_stage_request(int stage, const SemanticDict& dict, const std::string& prompt,
                                const std::filesystem::path& dir) {
    std::string t = load_stage_template(stage, dir);
    if (stage == 1) return t;  // <ImageHere> stays literal; the image travels separately
    t = replace_all(t, "<DictionaryHere>", serialize_dict(dict));
    t = replace_all(t, "<PromptHere>", prompt);
    return t;
}

SemanticDict stage1_extract(const Image& cond, LlmClient& client,
                            const std::filesystem::path& tmpl_dir) {
    std::string req = build_stage_request(1, {}, "", tmpl_dir);
    std::string reply = client.send(1, req, &cond);
    auto parsed = parse_dict(reply);
    if (!parsed) {
        std::cerr << "[arp] stage 1 reply not a dictionary; using empty dict\n";
        return {};
    }
    return *parsed;
}

SemanticDict stage2_align(const SemanticDict& dict, const std::string& prompt, LlmClient& client,
                          const std::filesystem::path& tmpl_dir) {
    if (dict.empty()) return {};
    std::string req = build_stage_request(2, dict, prompt, tmpl_dir);
    std::string reply = client.send(2, req, nullptr);
    auto parsed = parse_dict(reply);
    if (!parsed) {
        std::cerr << "[arp] stage 2 reply not a dictionary; using empty dict\n";
        return {};
    }
    return *parsed;
}

std::string stage3_rewrite(const SemanticDict& dict, const std::string& prompt, LlmClient& client,
                           const std::filesystem::path& tmpl_dir) {
    if (dict.empty()) return prompt;
    std::string req = build_stage_request(3, dict, prompt, tmpl_dir);
    std::string reply = client.send(3, req, nullptr);
    std::string sentence = strip_fences(reply);
    if (sentence.empty()) {
        std::cerr << "[arp] stage 3 reply empty; keeping prompt\n";
        return prompt;
    }
    return sentence;
}

std::string enrich(const Image& cond, const std::string& prompt, LlmClient& client,
                   ArpRecord* record, const std::filesystem::path& tmpl_dir) {
    long before = client.calls();
    SemanticDict d1 = stage1_extract(cond, client, tmpl_dir);
    SemanticDict d2 = stage2_align(d1, prompt, client, tmpl_dir);
    std::string out = stage3_rewrite(d2, prompt, client, tmpl_dir);
    if (record) {
        record->stage1_dict = d1;
        record->stage2_dict = d2;
        record->enriched_prompt = out;
        record->client_calls = client.calls() - before;
    }
    return out;
}

}  // namespace richctl
