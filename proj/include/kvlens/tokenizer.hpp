#pragma once

#include <string>
#include <string_view>
#include <vector>

// Fixed word-level tokenization over a 256-entry vocabulary. The table is
// shipped as data so that every text fixture (captions, referring
// expressions, prefixes, questions) is reproducible byte for byte.
namespace kvlens::tok {

inline constexpr int kUnk = 0;
inline constexpr std::size_t kVocabSize = 256;

// Number of assigned words (ids beyond this are reserved, embeddings only).
std::size_t table_size();

// Word -> id; unknown words map to kUnk. Input is lowercased and the
// punctuation marks . , ? are split into their own tokens.
std::vector<int> tokenize(std::string_view text);

int word_id(std::string_view word);
std::string token_text(int id);
std::string detokenize(const std::vector<int>& ids);

} // namespace kvlens::tok
