#pragma once

// Shared helpers for the unit and acceptance binaries.

#include <algorithm>
#include <atomic>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "kinctx/entity_linker.hpp"
#include "kinctx/knowledge_store.hpp"
#include "kinctx/lm_scorer.hpp"
#include "kinctx/text.hpp"

namespace fixtures {

inline kinctx::KnowledgeBase kb_from(const std::string& aliases, const std::string& triples) {
  std::istringstream a(aliases), t(triples);
  return kinctx::KnowledgeBase::load(a, t);
}

/// Paris/France/Berlin/Germany/New York style toy KB.
inline kinctx::KnowledgeBase toy_kb() {
  return kb_from(
      "Q1\tParis\n"
      "Q2\tFrance\n"
      "Q3\tBerlin\n"
      "Q4\tGermany\n"
      "Q5\tNew York City\tNYC\n"
      "Q6\tUnited States\tUSA\n"
      "Q7\tParis Hilton\n",
      "Q1\tcapital_of\tQ2\n"
      "Q3\tcapital_of\tQ4\n"
      "Q5\tlocated_in\tQ6\n"
      "Q2\tneighbour_of\tQ4\n");
}

inline kinctx::LinkedExample text_example(std::string id, std::string text,
                                          std::optional<std::string> label = std::nullopt) {
  kinctx::LinkedExample ex;
  ex.id = std::move(id);
  ex.fields.push_back({"text", std::move(text), {}});
  ex.label = std::move(label);
  return ex;
}

inline kinctx::LinkedExample qa_example(std::string id, std::string question,
                                        std::vector<std::string> choices, std::string answer) {
  kinctx::LinkedExample ex;
  ex.id = std::move(id);
  ex.fields.push_back({"question", std::move(question), {}});
  ex.choices = std::move(choices);
  ex.label = std::move(answer);
  return ex;
}

/// Prompt-sensitive scorer: the true candidate gets weight 0.5 + the number
/// of surfaces that occur both in the target block (the text after the last
/// blank line) and in some earlier block, every other candidate weight 1.
/// With no shared entity the first wrong candidate wins.
class EntityOverlapScorer final : public kinctx::Scorer {
 public:
  explicit EntityOverlapScorer(std::vector<std::string> surfaces) {
    for (auto& s : surfaces) surfaces_.push_back(kinctx::fold_case(s));
  }

  std::size_t overlap(std::string_view prompt) const {
    const std::string folded = kinctx::fold_case(prompt);
    const auto cut = folded.rfind("\n\n");
    if (cut == std::string::npos) return 0;
    const std::string demos = folded.substr(0, cut), target = folded.substr(cut + 2);
    std::size_t n = 0;
    for (const auto& s : surfaces_) {
      if (contains_word(target, s) && contains_word(demos, s)) ++n;
    }
    return n;
  }

 protected:
  kinctx::PredictionDistribution do_score(std::string_view,
                                          std::span<const std::string> candidates) const override {
    kinctx::PredictionDistribution d;
    d.candidates.assign(candidates.begin(), candidates.end());
    d.probs.assign(candidates.size(), 1.0 / static_cast<double>(candidates.size()));
    return d;
  }
  kinctx::PredictionDistribution do_score_with_oracle(std::string_view prompt,
                                                      std::span<const std::string> candidates,
                                                      std::string_view truth) const override {
    const double boost = 0.5 + static_cast<double>(overlap(prompt));
    kinctx::PredictionDistribution d;
    d.candidates.assign(candidates.begin(), candidates.end());
    double total = 0.0;
    for (const auto& c : candidates) {
      d.probs.push_back(c == truth ? boost : 1.0);
      total += d.probs.back();
    }
    for (double& p : d.probs) p /= total;
    return d;
  }
  std::vector<double> do_token_logprobs(std::span<const std::string> tokens) const override {
    return std::vector<double>(tokens.size(), -1.0);
  }

 private:
  static bool contains_word(const std::string& text, const std::string& w) {
    for (auto pos = text.find(w); pos != std::string::npos; pos = text.find(w, pos + 1)) {
      if (kinctx::is_token_boundary(text, pos) && kinctx::is_token_boundary(text, pos + w.size())) return true;
    }
    return false;
  }
  std::vector<std::string> surfaces_;
};

/// In-process model server replaying fixed values. "/v1/score" answers
/// log(0.5), log(0.25), ... per candidate; "/v1/token_logprobs" answers
/// -0.1 * (i + 1). Prompts containing "FAIL" get HTTP 500 and prompts
/// containing "SHORT" get one score too few.
class FixtureServer {
 public:
  FixtureServer() {
    server_.Post("/v1/score", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests_;
      const int now = ++inflight_;
      int seen = peak_.load();
      while (now > seen && !peak_.compare_exchange_weak(seen, now)) {
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms_));
      const auto body = nlohmann::json::parse(req.body);
      const auto prompt = body.at("prompt").get<std::string>();
      const auto n = body.at("candidates").size();
      --inflight_;
      if (prompt.find("FAIL") != std::string::npos) {
        res.status = 500;
        return;
      }
      std::vector<double> scores;
      const std::size_t count = prompt.find("SHORT") != std::string::npos ? n - 1 : n;
      for (std::size_t i = 0; i < count; ++i) scores.push_back(std::log(std::pow(0.5, static_cast<double>(i + 1))));
      res.set_content(nlohmann::json{{"scores", scores}}.dump(), "application/json");
    });
    server_.Post("/v1/token_logprobs", [](const httplib::Request& req, httplib::Response& res) {
      const auto body = nlohmann::json::parse(req.body);
      std::vector<double> out;
      for (std::size_t i = 0; i < body.at("tokens").size(); ++i) out.push_back(-0.1 * static_cast<double>(i + 1));
      res.set_content(nlohmann::json{{"logprobs", out}}.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FixtureServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  void set_delay_ms(int ms) { delay_ms_ = ms; }
  int peak_inflight() const { return peak_.load(); }
  int requests() const { return requests_.load(); }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  int delay_ms_ = 0;
  std::atomic<int> inflight_{0};
  std::atomic<int> peak_{0};
  std::atomic<int> requests_{0};
};

}  // namespace fixtures
