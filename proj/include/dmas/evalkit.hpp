#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace dmas {

// canonical object name -> aliases. Mentions are found by lowercased exact
// word-boundary matching of the canonical name or any alias; multi-word
// aliases are allowed.
class ObjectLexicon {
public:
    explicit ObjectLexicon(std::map<std::string, std::vector<std::string>> entries);

    static ObjectLexicon from_json_file(const std::string& path);

    bool has_canonical(const std::string& name) const;

    // Canonical names mentioned anywhere in the text.
    std::set<std::string> extract_mentions(const std::string& text) const;

    const std::map<std::string, std::vector<std::string>>& entries() const { return entries_; }

private:
    std::map<std::string, std::vector<std::string>> entries_;
};

struct CaptionRecord {
    std::string image_id;
    std::string caption;
    std::set<std::string> gold_objects;
};

struct ChairScores {
    double chair_s = 0.0;   // sentences with a hallucinated object / sentences
    double chair_i = 0.0;   // hallucinated mentions / all mentions (deduped per image)
    int total_sentences = 0;
    int hallucinated_sentences = 0;
    int total_mentions = 0;
    int hallucinated_mentions = 0;
};

// Sentence split on . ! ? after trimming; mentions deduplicated per image.
// A corpus with zero sentences or zero mentions has no defined score and
// raises an error instead of returning 0.
ChairScores chair_scores(const std::vector<CaptionRecord>& records,
                         const ObjectLexicon& lexicon);

struct BinaryPrediction {
    std::string id;
    bool predicted_yes = false;
    bool gold_yes = false;
};

struct PopeMetrics {
    double accuracy = 0.0;
    std::optional<double> precision;  // empty when no positive predictions
    std::optional<double> recall;     // empty when no positive gold
    std::optional<double> f1;         // empty when precision or recall is
    int tp = 0, fp = 0, tn = 0, fn = 0;
};

// "yes" is the positive class. Undefined ratios stay unset rather than
// collapsing to 0.
PopeMetrics pope_metrics(const std::vector<BinaryPrediction>& predictions);

struct MmeQuestion {
    std::string image_id;
    bool correct = false;
};

struct MmeScore {
    double accuracy = 0.0;       // percent of questions answered correctly
    double accuracy_plus = 0.0;  // percent of images with both questions correct
    double total = 0.0;          // accuracy + accuracy_plus, at most 200
    int n_images = 0;
    int n_questions = 0;
};

// Every image must contribute exactly two questions.
MmeScore mme_score(const std::vector<MmeQuestion>& questions);

}  // namespace dmas
