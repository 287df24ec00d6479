#pragma once

// In-process HTTP doubles for the two remote dependencies: the toxicity
// scoring service and a machine-translation endpoint. Both bind an
// ephemeral localhost port and run on a background thread.

#include <atomic>
#include <mutex>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace mock {

class ScoringServer {
 public:
  explicit ScoringServer(double score = 0.91) : score_(score) {
    server_.Post("/v1alpha1/comments:analyze",
                 [this](const httplib::Request& req, httplib::Response& res) {
                   requests_.fetch_add(1);
                   {
                     std::lock_guard<std::mutex> lock(mutex_);
                     last_body_ = req.body;
                     last_key_ = req.get_param_value("key");
                   }
                   if (rate_limit_next_.load() > 0) {
                     rate_limit_next_.fetch_sub(1);
                     res.status = 429;
                     res.set_content("{\"error\": \"quota\"}",
                                     "application/json");
                     return;
                   }
                   nlohmann::json reply = {
                       {"attributeScores",
                        {{"TOXICITY",
                          {{"summaryScore",
                            {{"value", score_.load()}, {"type", "PROBABILITY"}}}}}}}};
                   res.set_content(reply.dump(), "application/json");
                 });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~ScoringServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string endpoint() const {
    return "http://127.0.0.1:" + std::to_string(port_);
  }
  std::uint64_t requests() const { return requests_.load(); }
  void set_score(double v) { score_.store(v); }
  /// The next `n` requests answer HTTP 429 before service resumes.
  void rate_limit_next(int n) { rate_limit_next_.store(n); }
  std::string last_body() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return last_body_;
  }
  std::string last_key() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return last_key_;
  }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<double> score_;
  std::atomic<int> rate_limit_next_{0};
  std::atomic<std::uint64_t> requests_{0};
  mutable std::mutex mutex_;
  std::string last_body_;
  std::string last_key_;
};

// Answers {endpoint}/translate by rewriting each token's language prefix
// from source to target, the same convention the synthetic languages use.
class TranslationServer {
 public:
  TranslationServer() {
    server_.Post("/translate", [this](const httplib::Request& req,
                                      httplib::Response& res) {
      requests_.fetch_add(1);
      const auto body = nlohmann::json::parse(req.body);
      const std::string text = body.at("text").get<std::string>();
      const std::string source = body.at("source").get<std::string>();
      const std::string target = body.at("target").get<std::string>();
      std::string out;
      std::string word;
      auto flush = [&] {
        if (word.rfind(source, 0) == 0)
          word = target + word.substr(source.size());
        if (!out.empty()) out += ' ';
        out += word;
        word.clear();
      };
      for (char c : text) {
        if (c == ' ') {
          if (!word.empty()) flush();
        } else {
          word += c;
        }
      }
      if (!word.empty()) flush();
      nlohmann::json reply = {{"translation", out}};
      res.set_content(reply.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~TranslationServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  std::string endpoint() const {
    return "http://127.0.0.1:" + std::to_string(port_);
  }
  std::uint64_t requests() const { return requests_.load(); }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<std::uint64_t> requests_{0};
};

}  // namespace mock
