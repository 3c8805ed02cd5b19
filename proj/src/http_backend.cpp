// OpenAI-compatible HTTP transport (chat completions + embeddings).

#include <httplib.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <regex>

#include <nlohmann/json.hpp>

#include "prognos/backend.hpp"
#include "prognos/error.hpp"
#include "prognos/mock_backend.hpp"

namespace prognos {

namespace {

std::string base64(const std::string& in) {
  static constexpr char kTable[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const auto n = (static_cast<unsigned char>(in[i]) << 16) |
                   (static_cast<unsigned char>(in[i + 1]) << 8) |
                   static_cast<unsigned char>(in[i + 2]);
    out += {kTable[(n >> 18) & 63], kTable[(n >> 12) & 63], kTable[(n >> 6) & 63], kTable[n & 63]};
  }
  if (i + 1 == in.size()) {
    const auto n = static_cast<unsigned char>(in[i]) << 16;
    out += {kTable[(n >> 18) & 63], kTable[(n >> 12) & 63], '=', '='};
  } else if (i + 2 == in.size()) {
    const auto n = (static_cast<unsigned char>(in[i]) << 16) |
                   (static_cast<unsigned char>(in[i + 1]) << 8);
    out += {kTable[(n >> 18) & 63], kTable[(n >> 12) & 63], kTable[(n >> 6) & 63], '='};
  }
  return out;
}

std::string image_data_url(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::UnreadableImage, path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const bool png = bytes.size() > 1 && static_cast<unsigned char>(bytes[0]) == 0x89;
  return std::string("data:") + (png ? "image/png" : "image/jpeg") + ";base64," + base64(bytes);
}

class HttpTransport : public ModelTransport {
 public:
  explicit HttpTransport(const BackendConfig& config) : config_(config) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(config.endpoint, m, re)) {
      throw Error(ErrorCode::InvalidArgument, "endpoint must look like http(s)://host[:port][/path]");
    }
    origin_ = m[1].str();
    base_path_ = m[2].matched ? m[2].str() : "";
    while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
    if (const char* key = std::getenv(config.api_key_env.c_str())) api_key_ = key;
  }

  std::string complete(const CompletionCall& call) override {
    nlohmann::json content;
    if (call.image) {
      content = nlohmann::json::array(
          {{{"type", "text"}, {"text", call.prompt}},
           {{"type", "image_url"}, {"image_url", {{"url", image_data_url(*call.image)}}}}});
    } else {
      content = call.prompt;
    }
    const std::string model =
        call.image && !config_.vision_model.empty() ? config_.vision_model : config_.model;
    const nlohmann::json body{{"model", model},
                              {"messages", {{{"role", "user"}, {"content", content}}}},
                              {"max_tokens", call.max_tokens},
                              {"temperature", call.temperature}};
    const auto reply = post("/chat/completions", body);
    try {
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw UpstreamError(200, std::string("malformed chat response: ") + e.what());
    }
  }

  std::vector<float> embed(const std::string& text) override {
    const nlohmann::json body{{"model", config_.embedding_model}, {"input", text}};
    const auto reply = post("/embeddings", body);
    try {
      return reply.at("data").at(0).at("embedding").get<std::vector<float>>();
    } catch (const nlohmann::json::exception& e) {
      throw UpstreamError(200, std::string("malformed embedding response: ") + e.what());
    }
  }

 private:
  nlohmann::json post(const std::string& route, const nlohmann::json& body) {
    httplib::Client client(origin_);
    const auto timeout = std::chrono::duration<double>(config_.timeout_s);
    const auto secs = std::chrono::duration_cast<std::chrono::microseconds>(timeout);
    client.set_connection_timeout(secs);
    client.set_read_timeout(secs);
    client.set_write_timeout(secs);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    auto res = client.Post(base_path_ + route, headers, body.dump(), "application/json");
    if (!res) {
      if (res.error() == httplib::Error::Read || res.error() == httplib::Error::Write ||
          res.error() == httplib::Error::ConnectionTimeout) {
        throw Error(ErrorCode::Timeout, origin_ + base_path_ + route + ": " + httplib::to_string(res.error()));
      }
      throw UpstreamError(0, origin_ + base_path_ + route + ": " + httplib::to_string(res.error()));
    }
    if (res->status != 200) throw UpstreamError(res->status, res->body.substr(0, 512));
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw UpstreamError(res->status, std::string("response is not JSON: ") + e.what());
    }
  }

  BackendConfig config_;
  std::string origin_;
  std::string base_path_;
  std::string api_key_;
};

}  // namespace

std::unique_ptr<ModelTransport> make_transport(const BackendConfig& config,
                                               std::shared_ptr<const OracleRegistry> oracle) {
  config.validate();
  if (config.kind == BackendKind::Http) return std::make_unique<HttpTransport>(config);
  if (config.mock_mode == MockMode::Fixture) {
    FixtureSet fixtures;
    if (!config.fixtures.empty()) fixtures = FixtureSet::load(config.fixtures);
    return std::make_unique<FixtureTransport>(std::move(fixtures), config.embed_dim, config.seed);
  }
  return std::make_unique<OracleTransport>(std::move(oracle), config.embed_dim, config.seed);
}

}  // namespace prognos
