#include "dmas/evalkit.hpp"

#include <cctype>
#include <fstream>

#include <nlohmann/json.hpp>

#include "dmas/errors.hpp"

namespace dmas {

namespace {

std::string lowercase(const std::string& s) {
    std::string out = s;
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// Word-boundary containment of needle (already lowercased) in haystack.
bool contains_word(const std::string& haystack, const std::string& needle) {
    if (needle.empty()) return false;
    std::size_t pos = 0;
    while ((pos = haystack.find(needle, pos)) != std::string::npos) {
        bool left_ok = pos == 0 || !word_char(haystack[pos - 1]);
        std::size_t end = pos + needle.size();
        bool right_ok = end == haystack.size() || !word_char(haystack[end]);
        if (left_ok && right_ok) return true;
        ++pos;
    }
    return false;
}

std::vector<std::string> split_sentences(const std::string& caption) {
    std::vector<std::string> sentences;
    std::string current;
    for (char c : caption) {
        if (c == '.' || c == '!' || c == '?') {
            // trim
            std::size_t a = current.find_first_not_of(" \t\n\r");
            if (a != std::string::npos) {
                std::size_t b = current.find_last_not_of(" \t\n\r");
                sentences.push_back(current.substr(a, b - a + 1));
            }
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    std::size_t a = current.find_first_not_of(" \t\n\r");
    if (a != std::string::npos) {
        std::size_t b = current.find_last_not_of(" \t\n\r");
        sentences.push_back(current.substr(a, b - a + 1));
    }
    return sentences;
}

}  // namespace

ObjectLexicon::ObjectLexicon(std::map<std::string, std::vector<std::string>> entries)
    : entries_(std::move(entries)) {
    if (entries_.empty()) throw param_error("ObjectLexicon: empty lexicon");
}

ObjectLexicon ObjectLexicon::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open lexicon file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw io_error(std::string("lexicon file: ") + e.what());
    }
    if (!j.is_object()) throw io_error("lexicon file: top level must be an object");
    std::map<std::string, std::vector<std::string>> entries;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!it.value().is_array())
            throw io_error("lexicon file: '" + it.key() + "' must map to an alias array");
        entries[it.key()] = it.value().get<std::vector<std::string>>();
    }
    return ObjectLexicon(std::move(entries));
}

bool ObjectLexicon::has_canonical(const std::string& name) const {
    return entries_.count(name) != 0;
}

std::set<std::string> ObjectLexicon::extract_mentions(const std::string& text) const {
    std::string lowered = lowercase(text);
    std::set<std::string> found;
    for (const auto& [canonical, aliases] : entries_) {
        if (contains_word(lowered, lowercase(canonical))) {
            found.insert(canonical);
            continue;
        }
        for (const std::string& alias : aliases) {
            if (contains_word(lowered, lowercase(alias))) {
                found.insert(canonical);
                break;
            }
        }
    }
    return found;
}

ChairScores chair_scores(const std::vector<CaptionRecord>& records,
                         const ObjectLexicon& lexicon) {
    if (records.empty()) throw param_error("chair_scores: no caption records");
    ChairScores s;
    for (const CaptionRecord& r : records) {
        for (const std::string& g : r.gold_objects)
            if (!lexicon.has_canonical(g))
                throw param_error("chair_scores: gold object '" + g +
                                  "' is not a lexicon entry (image " + r.image_id + ")");

        std::set<std::string> mentioned;  // deduplicated per image
        for (const std::string& sentence : split_sentences(r.caption)) {
            std::set<std::string> here = lexicon.extract_mentions(sentence);
            bool hallucinated = false;
            for (const std::string& obj : here) {
                mentioned.insert(obj);
                if (!r.gold_objects.count(obj)) hallucinated = true;
            }
            s.total_sentences += 1;
            if (hallucinated) s.hallucinated_sentences += 1;
        }
        for (const std::string& obj : mentioned) {
            s.total_mentions += 1;
            if (!r.gold_objects.count(obj)) s.hallucinated_mentions += 1;
        }
    }
    if (s.total_sentences == 0)
        throw param_error("chair_scores: no sentences in corpus, score undefined");
    if (s.total_mentions == 0)
        throw param_error("chair_scores: no object mentions in corpus, score undefined");
    s.chair_s = static_cast<double>(s.hallucinated_sentences) / s.total_sentences;
    s.chair_i = static_cast<double>(s.hallucinated_mentions) / s.total_mentions;
    return s;
}

PopeMetrics pope_metrics(const std::vector<BinaryPrediction>& predictions) {
    if (predictions.empty()) throw param_error("pope_metrics: no predictions");
    PopeMetrics m;
    for (const BinaryPrediction& p : predictions) {
        if (p.predicted_yes && p.gold_yes) m.tp++;
        else if (p.predicted_yes && !p.gold_yes) m.fp++;
        else if (!p.predicted_yes && p.gold_yes) m.fn++;
        else m.tn++;
    }
    const int n = m.tp + m.fp + m.tn + m.fn;
    m.accuracy = static_cast<double>(m.tp + m.tn) / n;
    if (m.tp + m.fp > 0) m.precision = static_cast<double>(m.tp) / (m.tp + m.fp);
    if (m.tp + m.fn > 0) m.recall = static_cast<double>(m.tp) / (m.tp + m.fn);
    if (m.precision && m.recall && (*m.precision + *m.recall) > 0.0)
        m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
    return m;
}

MmeScore mme_score(const std::vector<MmeQuestion>& questions) {
    if (questions.empty()) throw param_error("mme_score: no questions");
    std::map<std::string, std::vector<bool>> by_image;
    for (const MmeQuestion& q : questions) by_image[q.image_id].push_back(q.correct);
    for (const auto& [image, answers] : by_image)
        if (answers.size() != 2)
            throw param_error("mme_score: image '" + image + "' has " +
                              std::to_string(answers.size()) + " questions, expected exactly 2");

    MmeScore s;
    s.n_images = static_cast<int>(by_image.size());
    s.n_questions = static_cast<int>(questions.size());
    int correct = 0;
    int both = 0;
    for (const auto& [image, answers] : by_image) {
        correct += (answers[0] ? 1 : 0) + (answers[1] ? 1 : 0);
        if (answers[0] && answers[1]) both += 1;
    }
    s.accuracy = 100.0 * correct / s.n_questions;
    s.accuracy_plus = 100.0 * both / s.n_images;
    s.total = s.accuracy + s.accuracy_plus;
    return s;
}

}  // namespace dmas
