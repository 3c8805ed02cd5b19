#pragma once

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace prognos {

namespace fs = std::filesystem;

using PromptVars = std::map<std::string, std::string>;

struct PromptRequest {
  std::string template_id;
  PromptVars variables;
  int max_tokens = 1024;
  double temperature = 0.0;
  std::string tag;  // free-form trace label
};

// Extraction / parsing prompts run cold, free-text report prompts warm.
inline constexpr double kParseTemperature = 0.0;
inline constexpr double kReportTemperature = 0.7;

enum class BackendKind { Http, Mock };
enum class MockMode { Fixture, Oracle };

struct BackendConfig {
  BackendKind kind = BackendKind::Mock;
  MockMode mock_mode = MockMode::Oracle;
  std::string endpoint = "http://127.0.0.1:8000/v1";
  std::string model = "gpt-4o-mini";
  std::string vision_model;  // empty = `model`
  std::string embedding_model = "text-embedding-3-large";
  std::string api_key_env = "OPENAI_API_KEY";
  double timeout_s = 60.0;
  int max_retries = 3;
  int max_in_flight = 4;
  int embed_dim = 64;
  double backoff_initial_s = 0.5;
  std::uint64_t seed = 0;
  fs::path fixtures;
  /// Wall-clock trace timestamps. When false, `ts` is the entry's sequence
  /// number so mock runs produce byte-identical traces.
  std::optional<bool> wall_clock_trace;

  void validate() const;
  bool uses_wall_clock() const { return wall_clock_trace.value_or(kind == BackendKind::Http); }
};

/// Order-independent short hash of a variable map (sha256 of its canonical JSON).
std::string vars_hash(const PromptVars& vars);

/// UTF-8 prompt templates with `{name}` placeholders; `{{` and `}}` are
/// literal braces. File `<dir>/<template_id>.txt` defines `template_id`.
class TemplateStore {
 public:
  TemplateStore() = default;
  explicit TemplateStore(const fs::path& dir);

  void add(std::string template_id, std::string text);
  bool contains(const std::string& template_id) const;
  const std::string& source(const std::string& template_id) const;
  std::vector<std::string> placeholders(const std::string& template_id) const;

  /// Throws UnknownTemplate / UnboundPlaceholder. Extra variables are ignored.
  std::string render(const std::string& template_id, const PromptVars& vars) const;

  static std::vector<std::string> placeholders_of(const std::string& text);
  static std::string render_text(const std::string& text, const PromptVars& vars,
                                 const std::string& origin = "<inline>");

 private:
  std::map<std::string, std::string> templates_;
};

struct TraceEntry {
  std::uint64_t seq = 0;
  double ts = 0.0;      // seconds since epoch, or `seq` in logical mode
  double dur_s = 0.0;   // 0 in logical mode
  std::string kind;     // chat | image | embed
  std::string tag;
  std::string template_id;
  std::string vars_hash;
  std::string response_sha256;
  std::string prompt;   // rendered prompt (or embedded text)
};

/// Append-only JSONL log of every backend exchange. Appends are serialized.
class TraceLog {
 public:
  TraceLog() = default;
  explicit TraceLog(const fs::path& path);

  void append(TraceEntry entry);
  std::vector<TraceEntry> entries() const;
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::vector<TraceEntry> entries_;
  std::optional<std::ofstream> out_;
};

/// A fully rendered call handed to a transport.
struct CompletionCall {
  std::string template_id;
  PromptVars variables;
  std::string prompt;
  int max_tokens = 1024;
  double temperature = 0.0;
  std::optional<fs::path> image;
};

/// The model side of the gateway. Implementations throw UpstreamError
/// (retryable for 5xx/429/connection loss) or Error(Timeout).
class ModelTransport {
 public:
  virtual ~ModelTransport() = default;
  virtual std::string complete(const CompletionCall& call) = 0;
  virtual std::vector<float> embed(const std::string& text) = 0;
};

/// Single entry point for chat completion, image description and text
/// embedding. Safe for concurrent callers.
class Gateway {
 public:
  Gateway(BackendConfig config, TemplateStore templates, std::unique_ptr<ModelTransport> transport);

  std::string chat_complete(const PromptRequest& req, TraceLog& trace);
  std::string describe_image(const fs::path& image, const PromptRequest& req, TraceLog& trace);
  std::vector<float> embed_text(const std::string& text, TraceLog& trace, const std::string& tag = {});

  const BackendConfig& config() const { return config_; }
  const TemplateStore& templates() const { return templates_; }
  int peak_in_flight() const;
  std::uint64_t transport_calls() const;

 private:
  template <class Fn>
  auto with_retries(Fn&& fn) -> decltype(fn());
  std::string complete_traced(const PromptRequest& req, std::optional<fs::path> image,
                              const char* kind, TraceLog& trace);
  void record(TraceLog& trace, const char* kind, const std::string& tag,
              const std::string& template_id, const std::string& hash, const std::string& response,
              const std::string& prompt, double start, double dur);

  class Slot;

  BackendConfig config_;
  TemplateStore templates_;
  std::unique_ptr<ModelTransport> transport_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  int in_flight_ = 0;
  int peak_ = 0;
  std::uint64_t calls_ = 0;
  std::uint64_t seq_ = 0;
  std::mt19937_64 jitter_rng_;
};

/// Gateway plus the trace of one unit of work (typically one case).
class AgentSession {
 public:
  AgentSession(Gateway& gateway, TraceLog& trace, std::string tag_prefix = {})
      : gateway_(&gateway), trace_(&trace), tag_prefix_(std::move(tag_prefix)) {}

  std::string chat_complete(PromptRequest req);
  std::string describe_image(const fs::path& image, PromptRequest req);
  std::vector<float> embed_text(const std::string& text);

  Gateway& gateway() const { return *gateway_; }
  TraceLog& trace() const { return *trace_; }
  int embed_dim() const { return gateway_->config().embed_dim; }

 private:
  std::string tagged(const std::string& tag) const;

  Gateway* gateway_;
  TraceLog* trace_;
  std::string tag_prefix_;
};

/// Builds the transport named by `config` (HTTP, fixture mock, oracle mock).
class OracleRegistry;
std::unique_ptr<ModelTransport> make_transport(const BackendConfig& config,
                                               std::shared_ptr<const OracleRegistry> oracle = {});

}  // namespace prognos
