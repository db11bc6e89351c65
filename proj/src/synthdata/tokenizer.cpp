#include "kvlens/tokenizer.hpp"

#include <array>
#include <cctype>

namespace kvlens::tok {
namespace {

// Order is load-bearing: ids are table indices.
constexpr std::array kWords = {
    "<unk>",
    // grammar / glue
    "a", "the", "is", "there", "and", "it", "of", "at", "from", "in", "on",
    "taken", "image", "near", "above", "below", "left", "right",
    // colors
    "red", "green", "blue", "yellow", "purple", "orange",
    // shapes
    "square", "disc", "bar",
    // domains
    "day", "night", "daytime", "nighttime", "city", "street", "view", "highway",
    // answers
    "yes", "no",
    // punctuation
    ".", ",", "?",
    // fixed control sentence
    "rustic", "wooden", "table", "filled", "with", "freshly", "baked",
    "croissants", "dripping", "honey", "steaming", "pot", "earl", "grey",
    "tea", "beside", "bowl", "ripe", "figs",
};

} // namespace

std::size_t table_size() { return kWords.size(); }

int word_id(std::string_view word) {
    for (std::size_t i = 0; i < kWords.size(); ++i) {
        if (word == kWords[i]) return static_cast<int>(i);
    }
    return kUnk;
}

std::string token_text(int id) {
    if (id < 0 || static_cast<std::size_t>(id) >= kWords.size()) return "<unk>";
    return kWords[static_cast<std::size_t>(id)];
}

std::vector<int> tokenize(std::string_view text) {
    std::vector<int> out;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            out.push_back(word_id(word));
            word.clear();
        }
    };
    for (char c : text) {
        const char lc = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        if (std::isspace(static_cast<unsigned char>(lc))) {
            flush();
        } else if (lc == '.' || lc == ',' || lc == '?') {
            flush();
            out.push_back(word_id(std::string_view(&lc, 1)));
        } else {
            word.push_back(lc);
        }
    }
    flush();
    return out;
}

std::string detokenize(const std::vector<int>& ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i > 0) out.push_back(' ');
        out += token_text(ids[i]);
    }
    return out;
}

} // namespace kvlens::tok
