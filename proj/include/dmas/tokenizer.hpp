#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace dmas {

// Fixed-vocabulary toy tokenizer: lowercase, split on whitespace, and break
// trailing/leading punctuation (. , ? !) into their own tokens. Unknown
// words map to <unk> (id 0). The default vocabulary covers the question
// templates, the description prompt, the object names and the yes/no answer
// words, so every string the toolkit generates round-trips without <unk>.
class Tokenizer {
public:
    explicit Tokenizer(std::vector<std::string> vocabulary);

    static Tokenizer with_default_vocabulary();

    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;

    // Id for a single vocabulary word; 0 (<unk>) when absent.
    int token_id(const std::string& word) const;

    int size() const { return static_cast<int>(words_.size()); }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, int> index_;
};

}  // namespace dmas
