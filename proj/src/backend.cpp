#include "prognos/backend.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include <nlohmann/json.hpp>

#include "prognos/error.hpp"
#include "prognos/hashing.hpp"
#include "prognos/manifest.hpp"

namespace prognos {

void BackendConfig::validate() const {
  if (!(timeout_s > 0.0)) throw Error(ErrorCode::InvalidArgument, "timeout must be > 0");
  if (max_retries < 0) throw Error(ErrorCode::InvalidArgument, "retries must be >= 0");
  if (max_in_flight < 1) throw Error(ErrorCode::InvalidArgument, "max_in_flight must be >= 1");
  if (embed_dim < 1) throw Error(ErrorCode::InvalidArgument, "embed_dim must be >= 1");
  if (backoff_initial_s < 0.0) throw Error(ErrorCode::InvalidArgument, "backoff must be >= 0");
}

std::string vars_hash(const PromptVars& vars) {
  const nlohmann::json j(vars);  // std::map keeps keys sorted
  return sha256_hex(j.dump()).substr(0, 16);
}

// ---------------------------------------------------------------------------
// TemplateStore

TemplateStore::TemplateStore(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, "prompt directory missing: " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".txt") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    add(entry.path().stem().string(), std::move(text));
  }
}

void TemplateStore::add(std::string template_id, std::string text) {
  templates_[std::move(template_id)] = std::move(text);
}

bool TemplateStore::contains(const std::string& template_id) const {
  return templates_.count(template_id) != 0;
}

const std::string& TemplateStore::source(const std::string& template_id) const {
  auto it = templates_.find(template_id);
  if (it == templates_.end()) throw Error(ErrorCode::UnknownTemplate, template_id);
  return it->second;
}

std::vector<std::string> TemplateStore::placeholders(const std::string& template_id) const {
  return placeholders_of(source(template_id));
}

std::vector<std::string> TemplateStore::placeholders_of(const std::string& text) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] != '{') continue;
    if (i + 1 < text.size() && text[i + 1] == '{') {
      ++i;
      continue;
    }
    const auto close = text.find('}', i);
    if (close == std::string::npos) break;
    std::string name = text.substr(i + 1, close - i - 1);
    if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(std::move(name));
    i = close;
  }
  return out;
}

std::string TemplateStore::render_text(const std::string& text, const PromptVars& vars,
                                       const std::string& origin) {
  std::string out;
  out.reserve(text.size() + 256);
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '{' && i + 1 < text.size() && text[i + 1] == '{') {
      out.push_back('{');
      ++i;
    } else if (c == '}' && i + 1 < text.size() && text[i + 1] == '}') {
      out.push_back('}');
      ++i;
    } else if (c == '{') {
      const auto close = text.find('}', i);
      if (close == std::string::npos) {
        throw Error(ErrorCode::Parse, origin + ": unterminated placeholder");
      }
      const std::string name = text.substr(i + 1, close - i - 1);
      auto it = vars.find(name);
      if (it == vars.end()) {
        throw Error(ErrorCode::UnboundPlaceholder, origin + ": {" + name + "}");
      }
      out += it->second;
      i = close;
    } else {
      out.push_back(c);
    }
  }
  return out;
}

std::string TemplateStore::render(const std::string& template_id, const PromptVars& vars) const {
  return render_text(source(template_id), vars, template_id);
}

// ---------------------------------------------------------------------------
// TraceLog

TraceLog::TraceLog(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  out_.emplace(path, std::ios::trunc);
  if (!*out_) throw Error(ErrorCode::Io, "cannot open trace log " + path.string());
}

void TraceLog::append(TraceEntry entry) {
  std::lock_guard lock(mu_);
  entry.seq = entries_.size();
  if (out_) {
    nlohmann::json j{{"seq", entry.seq},
                     {"ts", entry.ts},
                     {"kind", entry.kind},
                     {"tag", entry.tag},
                     {"template_id", entry.template_id},
                     {"vars_hash", entry.vars_hash},
                     {"response_sha256", entry.response_sha256}};
    if (entry.dur_s > 0.0) j["dur_s"] = entry.dur_s;
    j["prompt"] = entry.prompt;
    *out_ << j.dump() << '\n';
    out_->flush();
  }
  entries_.push_back(std::move(entry));
}

std::vector<TraceEntry> TraceLog::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

std::size_t TraceLog::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

// ---------------------------------------------------------------------------
// Gateway

namespace {

double now_seconds() {
  using namespace std::chrono;
  return duration<double>(system_clock::now().time_since_epoch()).count();
}

}  // namespace

class Gateway::Slot {
 public:
  explicit Slot(Gateway& g) : g_(g) {
    std::unique_lock lock(g_.mu_);
    g_.cv_.wait(lock, [&] { return g_.in_flight_ < g_.config_.max_in_flight; });
    ++g_.in_flight_;
    ++g_.calls_;
    g_.peak_ = std::max(g_.peak_, g_.in_flight_);
  }
  ~Slot() {
    {
      std::lock_guard lock(g_.mu_);
      --g_.in_flight_;
    }
    g_.cv_.notify_one();
  }
  Slot(const Slot&) = delete;
  Slot& operator=(const Slot&) = delete;

 private:
  Gateway& g_;
};

Gateway::Gateway(BackendConfig config, TemplateStore templates,
                 std::unique_ptr<ModelTransport> transport)
    : config_(std::move(config)),
      templates_(std::move(templates)),
      transport_(std::move(transport)),
      jitter_rng_(config_.seed ^ 0x6a09e667f3bcc909ULL) {
  config_.validate();
  if (!transport_) throw Error(ErrorCode::InvalidArgument, "gateway needs a transport");
}

int Gateway::peak_in_flight() const {
  std::lock_guard lock(mu_);
  return peak_;
}

std::uint64_t Gateway::transport_calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

template <class Fn>
auto Gateway::with_retries(Fn&& fn) -> decltype(fn()) {
  double delay = config_.backoff_initial_s;
  for (int attempt = 0;; ++attempt) {
    try {
      Slot slot(*this);
      return fn();
    } catch (const UpstreamError& e) {
      if (!e.retryable() || attempt >= config_.max_retries) throw;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Timeout || attempt >= config_.max_retries) throw;
    }
    double jitter = 1.0;
    {
      std::lock_guard lock(mu_);
      jitter = std::uniform_real_distribution<double>(0.8, 1.2)(jitter_rng_);
    }
    std::this_thread::sleep_for(std::chrono::duration<double>(delay * jitter));
    delay *= 2.0;
  }
}

void Gateway::record(TraceLog& trace, const char* kind, const std::string& tag,
                     const std::string& template_id, const std::string& hash,
                     const std::string& response, const std::string& prompt, double start,
                     double dur) {
  TraceEntry e;
  e.kind = kind;
  e.tag = tag;
  e.template_id = template_id;
  e.vars_hash = hash;
  e.response_sha256 = sha256_hex(response);
  e.prompt = prompt;
  if (config_.uses_wall_clock()) {
    e.ts = start;
    e.dur_s = dur;
  } else {
    e.ts = static_cast<double>(trace.size());
  }
  trace.append(std::move(e));
}

std::string Gateway::complete_traced(const PromptRequest& req, std::optional<fs::path> image,
                                     const char* kind, TraceLog& trace) {
  const std::string prompt = templates_.render(req.template_id, req.variables);
  CompletionCall call{req.template_id, req.variables, prompt, req.max_tokens, req.temperature,
                      std::move(image)};
  const double start = now_seconds();
  std::string text = with_retries([&] { return transport_->complete(call); });
  const double dur = now_seconds() - start;
  record(trace, kind, req.tag, req.template_id, vars_hash(req.variables), text, prompt, start, dur);
  return text;
}

std::string Gateway::chat_complete(const PromptRequest& req, TraceLog& trace) {
  return complete_traced(req, std::nullopt, "chat", trace);
}

std::string Gateway::describe_image(const fs::path& image, const PromptRequest& req,
                                    TraceLog& trace) {
  if (!is_readable_image(image)) throw Error(ErrorCode::UnreadableImage, image.string());
  return complete_traced(req, image, "image", trace);
}

std::vector<float> Gateway::embed_text(const std::string& text, TraceLog& trace,
                                       const std::string& tag) {
  if (text.empty()) throw Error(ErrorCode::EmptyText, "cannot embed empty text");
  const double start = now_seconds();
  std::vector<float> v = with_retries([&] { return transport_->embed(text); });
  const double dur = now_seconds() - start;
  if (static_cast<int>(v.size()) != config_.embed_dim) {
    throw Error(ErrorCode::DimensionMismatch, "embedding has dim " + std::to_string(v.size()) +
                                                  ", configured " +
                                                  std::to_string(config_.embed_dim));
  }
  v = normalized(std::move(v));
  if (!is_unit(v)) throw UpstreamError(200, "zero embedding vector");
  const std::string bytes(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(float));
  record(trace, "embed", tag, "embed", sha256_hex(text).substr(0, 16), bytes, text, start, dur);
  return v;
}

// ---------------------------------------------------------------------------
// AgentSession

std::string AgentSession::tagged(const std::string& tag) const {
  if (tag_prefix_.empty()) return tag;
  if (tag.empty()) return tag_prefix_;
  return tag_prefix_ + "/" + tag;
}

std::string AgentSession::chat_complete(PromptRequest req) {
  req.tag = tagged(req.tag.empty() ? req.template_id : req.tag);
  return gateway_->chat_complete(req, *trace_);
}

std::string AgentSession::describe_image(const fs::path& image, PromptRequest req) {
  req.tag = tagged(req.tag.empty() ? req.template_id : req.tag);
  return gateway_->describe_image(image, req, *trace_);
}

std::vector<float> AgentSession::embed_text(const std::string& text) {
  return gateway_->embed_text(text, *trace_, tagged("embed"));
}

}  // namespace prognos
