#include "dmas/tokenizer.hpp"

#include <cctype>

#include "dmas/errors.hpp"

namespace dmas {

namespace {

bool is_break_punct(char c) {
    return c == '.' || c == ',' || c == '?' || c == '!' || c == ';' || c == ':';
}

}  // namespace

Tokenizer::Tokenizer(std::vector<std::string> vocabulary) : words_(std::move(vocabulary)) {
    if (words_.empty() || words_[0] != "<unk>")
        throw param_error("Tokenizer: vocabulary must start with <unk>");
    for (std::size_t i = 0; i < words_.size(); ++i) {
        auto [it, inserted] = index_.emplace(words_[i], static_cast<int>(i));
        if (!inserted) throw param_error("Tokenizer: duplicate word '" + words_[i] + "'");
    }
}

Tokenizer Tokenizer::with_default_vocabulary() {
    std::vector<std::string> words = {
        "<unk>",
        // answers
        "yes", "no",
        // question templates
        "is", "there", "a",
        "does", "this", "picture", "contain", "some",
        "can", "you", "spot", "any", "nearby",
        "might", "one", "notice", "the", "within", "view",
        // description prompt and object sentence
        "please", "describe", "image", "depicts", "and", "of",
        // objects, grouped by category
        "dog", "cat", "horse", "sheep",
        "car", "bus", "train", "bicycle",
        "chair", "table", "sofa", "bed",
        "apple", "banana", "pizza", "bread",
        "guitar", "piano", "drum", "violin",
        "shirt", "hat", "shoe", "glove",
        "hammer", "ladder", "bucket", "rope",
        "river", "cloud", "stone", "tree",
        // punctuation
        ".", ",", "?", "!",
    };
    return Tokenizer(std::move(words));
}

std::vector<int> Tokenizer::encode(const std::string& text) const {
    std::vector<int> out;
    std::string word;
    auto flush_word = [&]() {
        if (!word.empty()) {
            out.push_back(token_id(word));
            word.clear();
        }
    };
    for (char raw : text) {
        char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush_word();
        } else if (is_break_punct(c)) {
            flush_word();
            out.push_back(token_id(std::string(1, c)));
        } else {
            word.push_back(c);
        }
    }
    flush_word();
    return out;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= size()) throw param_error("Tokenizer: id out of range");
        if (!out.empty()) out.push_back(' ');
        out += words_[static_cast<std::size_t>(id)];
    }
    return out;
}

int Tokenizer::token_id(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? 0 : it->second;
}

}  // namespace dmas
