#pragma once

#include <atomic>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "prognos/backend.hpp"
#include "prognos/error.hpp"
#include "prognos/mock_backend.hpp"

namespace prognos::testing {

inline fs::path source_dir() { return fs::path(PROGNOS_SOURCE_DIR); }
inline fs::path bundled_cohort() { return source_dir() / "data" / "synthetic"; }

/// Scratch directory removed on scope exit.
struct TempDir {
  fs::path path;

  explicit TempDir(const std::string& name) {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() /
           ("prognos_test_" + name + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  fs::path operator/(const std::string& rel) const { return path / rel; }
};

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

/// Answers from per-template queues; an exhausted queue gives `fallback`.
class ScriptedTransport : public ModelTransport {
 public:
  explicit ScriptedTransport(int dim) : dim_(dim) {}

  void push(const std::string& template_id, std::string answer) {
    std::lock_guard lk(mu_);
    script_[template_id].push_back(std::move(answer));
  }
  void set_fallback(std::string answer) { fallback_ = std::move(answer); }

  std::string complete(const CompletionCall& call) override {
    std::lock_guard lk(mu_);
    calls_.push_back(call);
    auto& q = script_[call.template_id];
    if (q.empty()) return fallback_;
    std::string a = std::move(q.front());
    q.pop_front();
    return a;
  }
  std::vector<float> embed(const std::string& text) override { return mock_text_embedding(text, dim_); }

  std::vector<CompletionCall> calls() const {
    std::lock_guard lk(mu_);
    return calls_;
  }
  std::size_t count(const std::string& template_id) const {
    std::lock_guard lk(mu_);
    std::size_t n = 0;
    for (const auto& c : calls_) n += c.template_id == template_id;
    return n;
  }

 private:
  int dim_;
  mutable std::mutex mu_;
  std::map<std::string, std::deque<std::string>> script_;
  std::string fallback_ = "no idea";
  std::vector<CompletionCall> calls_;
};

/// Gateway over a scripted transport with the shipped prompt templates.
struct Scripted {
  BackendConfig config;
  ScriptedTransport* transport = nullptr;
  std::unique_ptr<Gateway> gateway;
  TraceLog trace;
  std::unique_ptr<AgentSession> session;

  explicit Scripted(int dim = 64) {
    config.embed_dim = dim;
    config.backoff_initial_s = 0.0;
    config.wall_clock_trace = false;
    auto t = std::make_unique<ScriptedTransport>(dim);
    transport = t.get();
    gateway = std::make_unique<Gateway>(config, TemplateStore(source_dir() / "prompts"), std::move(t));
    session = std::make_unique<AgentSession>(*gateway, trace);
  }

  AgentSession& s() { return *session; }
};

/// Random unit vector of dimension `dim`.
inline std::vector<float> random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<float> v(dim);
  double sq = 0.0;
  for (auto& x : v) {
    x = static_cast<float>(n(rng));
    sq += double(x) * x;
  }
  const double norm = std::sqrt(sq);
  for (auto& x : v) x = static_cast<float>(x / norm);
  return v;
}

}  // namespace prognos::testing
