#pragma once

// Scripted model answers for fixture generation. Prompts are rendered from
// the real templates, so fixtures track template drift.

#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>

#include "revlens/aspects.hpp"
#include "revlens/llm_gateway.hpp"

namespace revlens::testing {

class Script {
 public:
  void on(const llm::PromptTemplate& t, const llm::Variables& vars, std::string response) {
    (*table_)[llm::digest(llm::render_prompt(t, vars))] = std::move(response);
  }
  void on(const llm::Messages& msgs, std::string response) { (*table_)[llm::digest(msgs)] = std::move(response); }

  // Unknown prompts that end a re-prompt (assistant turn then user turn)
  // repeat the earlier assistant answer.
  std::shared_ptr<llm::Backend> backend() const {
    auto table = table_;
    return std::make_shared<llm::CallbackBackend>([table](const llm::Messages& m) -> std::string {
      auto d = llm::digest(m);
      auto it = table->find(d);
      if (it != table->end()) return it->second;
      if (m.size() >= 2 && m[m.size() - 2].role == llm::Role::assistant) return m[m.size() - 2].content;
      throw llm::MissingFixture(d);
    });
  }

 private:
  std::shared_ptr<std::map<std::string, std::string>> table_ = std::make_shared<std::map<std::string, std::string>>();
};

inline nlohmann::json load_json(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("cannot open " + p.string());
  return nlohmann::json::parse(in);
}

// Script entries: {sentence_id, sentence, aspects: [{term, sentiment}], recommendations}.
inline Script aspect_script(const nlohmann::json& sentences, const aspects::Templates& t) {
  Script s;
  for (const auto& e : sentences) {
    std::string sentence = e.at("sentence");
    nlohmann::json terms = nlohmann::json::array();
    for (const auto& a : e.at("aspects")) {
      terms.push_back(a.at("term"));
      s.on(t.classify, {{"sentence", sentence}, {"aspect", a.at("term").get<std::string>()}},
           nlohmann::json{{"sentiment", a.at("sentiment")}}.dump());
    }
    s.on(t.extract, {{"sentence", sentence}}, nlohmann::json{{"aspects", terms}}.dump());
    s.on(t.recommend, {{"sentence", sentence}}, nlohmann::json{{"recommendations", e.at("recommendations")}}.dump());
  }
  return s;
}

inline std::vector<aspects::SentenceInput> sentence_inputs(const nlohmann::json& sentences) {
  std::vector<aspects::SentenceInput> out;
  for (const auto& e : sentences) out.push_back({e.at("sentence_id"), e.at("sentence")});
  return out;
}

// Runs `fn` against a recording wrapper of `live` and returns the fixture
// lines it captured.
template <class Fn>
std::string record_fixtures(std::shared_ptr<llm::Backend> live, Fn fn) {
  auto rec = std::make_shared<llm::RecordingBackend>(std::move(live));
  llm::Gateway gw(rec);
  fn(gw);
  std::ostringstream out;
  rec->write_jsonl(out);
  return out.str();
}

}  // namespace revlens::testing
