#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "debias/embeddings.hpp"

namespace debias {

/// Candidate "emptiness" words and the indices currently in use.
struct EmptyVocabulary {
  std::vector<std::string> words;
  std::vector<std::size_t> selected;

  std::vector<std::string> selected_words() const;
  /// Keeps the first n selected words. Throws KTooLarge when n exceeds them.
  EmptyVocabulary truncated(std::size_t n) const;
};

/// The 25 shipped words, all selected.
EmptyVocabulary default_vocabulary();

/// JSON array of strings; every word selected.
EmptyVocabulary load_vocabulary(const std::filesystem::path& path);

/// Substitutes each selected word into the single "{}" of `templ`.
std::vector<std::string> render_prompts(std::string_view templ, const EmptyVocabulary& vocab);

/// Indices of the k candidates with the highest mean cosine to the class
/// names, best first; ties go to the lower index.
std::vector<std::size_t> select_top_k(std::span<const Embedding> candidates,
                                      std::span<const Embedding> class_names, std::size_t k);

/// Restricts a dataset's empty prompts to the vocabulary's selected words
/// (matched by word) in vocabulary order. Throws MissingPromptBank when a
/// word has no embedding.
PromptBank with_empty_words(const PromptBank& prompts, const EmptyVocabulary& vocab);

}  // namespace debias
