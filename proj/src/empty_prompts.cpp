#include "debias/empty_prompts.hpp"

#include <algorithm>
#include <numeric>

#include <json.hpp>

#include "debias/blob_io.hpp"
#include "debias/errors.hpp"
#include "debias/similarity.hpp"

namespace debias {

std::vector<std::string> EmptyVocabulary::selected_words() const {
  std::vector<std::string> out;
  out.reserve(selected.size());
  for (std::size_t i : selected) out.push_back(words.at(i));
  return out;
}

EmptyVocabulary EmptyVocabulary::truncated(std::size_t n) const {
  if (n > selected.size()) {
    throw Error(ErrorKind::KTooLarge,
                "empty count " + std::to_string(n) + " > " + std::to_string(selected.size()) + " words");
  }
  EmptyVocabulary out = *this;
  out.selected.resize(n);
  return out;
}

EmptyVocabulary default_vocabulary() {
  EmptyVocabulary v;
  v.words = {"None",     " ",       "Vacant",     "BlankVoid", "Hollow",    "Bare",        "Desolate",
             "Barren",   "Null",     "Naked",      "Devoid",    "Vacuous",   "Unoccupied",  "Sparse",
             "Clean",    "Clear",    "Abandoned",  "Forsaken",  "Deserted",  "Uninhabited", "Unused",
             "Vast",     "Sterile",  "Unfilled",   "Unpopulated"};
  v.selected.resize(v.words.size());
  std::iota(v.selected.begin(), v.selected.end(), std::size_t{0});
  return v;
}

EmptyVocabulary load_vocabulary(const std::filesystem::path& path) {
  const auto bytes = blob::read_file(path);
  EmptyVocabulary v;
  try {
    v.words = nlohmann::json::parse(bytes.begin(), bytes.end()).get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, "vocabulary must be a JSON list of strings: " + std::string(e.what()));
  }
  if (v.words.empty()) throw Error(ErrorKind::EmptyInput, "vocabulary is empty");
  v.selected.resize(v.words.size());
  std::iota(v.selected.begin(), v.selected.end(), std::size_t{0});
  return v;
}

std::vector<std::string> render_prompts(std::string_view templ, const EmptyVocabulary& vocab) {
  const auto pos = templ.find("{}");
  if (pos == std::string_view::npos || templ.find("{}", pos + 2) != std::string_view::npos) {
    throw Error(ErrorKind::BadTemplate, "template needs exactly one {} placeholder: '" + std::string(templ) + "'");
  }
  std::vector<std::string> out;
  for (const auto& w : vocab.selected_words()) {
    std::string s(templ.substr(0, pos));
    s += w;
    s += templ.substr(pos + 2);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::size_t> select_top_k(std::span<const Embedding> candidates,
                                      std::span<const Embedding> class_names, std::size_t k) {
  if (k > candidates.size()) {
    throw Error(ErrorKind::KTooLarge, std::to_string(k) + " > " + std::to_string(candidates.size()) + " candidates");
  }
  if (class_names.empty()) throw Error(ErrorKind::EmptyInput, "no class names to score against");
  std::vector<double> score(candidates.size(), 0.0);
  for (std::size_t m = 0; m < candidates.size(); ++m) {
    for (const auto& c : class_names) score[m] += cosine(candidates[m], c);
    score[m] /= static_cast<double>(class_names.size());
  }
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  order.resize(k);
  return order;
}

PromptBank with_empty_words(const PromptBank& prompts, const EmptyVocabulary& vocab) {
  PromptBank out = prompts;
  out.empty_words.clear();
  out.empty_prompt_embeddings.clear();
  for (const auto& w : vocab.selected_words()) {
    auto it = std::find(prompts.empty_words.begin(), prompts.empty_words.end(), w);
    if (it == prompts.empty_words.end()) {
      throw Error(ErrorKind::MissingPromptBank, "no embedding for empty word '" + w + "'");
    }
    out.empty_words.push_back(w);
    out.empty_prompt_embeddings.push_back(prompts.empty_prompt_embeddings[static_cast<std::size_t>(it - prompts.empty_words.begin())]);
  }
  if (out.empty_prompt_embeddings.empty()) throw Error(ErrorKind::EmptyInput, "no empty prompts selected");
  return out;
}

}  // namespace debias
