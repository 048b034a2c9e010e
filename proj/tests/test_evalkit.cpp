#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "dmas/errors.hpp"
#include "dmas/evalkit.hpp"
#include "dmas/rng.hpp"

using namespace dmas;

namespace {

ObjectLexicon small_lexicon() {
    return ObjectLexicon({{"dog", {"puppy", "hound"}},
                          {"cat", {"kitten"}},
                          {"car", {"automobile"}},
                          {"tree", {}}});
}

}  // namespace

TEST_CASE("lexicon mentions respect word boundaries and aliases") {
    ObjectLexicon lex = small_lexicon();
    CHECK(lex.extract_mentions("A dog sits by the tree") ==
          std::set<std::string>{"dog", "tree"});
    CHECK(lex.extract_mentions("A PUPPY!") == std::set<std::string>{"dog"});
    // Substrings inside longer words must not count.
    CHECK(lex.extract_mentions("the dogma of cartography").empty());
    CHECK(lex.extract_mentions("cat, dog; car.") ==
          std::set<std::string>{"cat", "dog", "car"});
    CHECK(lex.has_canonical("dog"));
    CHECK_FALSE(lex.has_canonical("puppy"));
    CHECK_THROWS_AS(ObjectLexicon({}), param_error);
}

TEST_CASE("chair scores the two-sentence worked example at one half") {
    // Two sentences; the second mentions a hallucinated cat. Two distinct
    // objects mentioned, one hallucinated: CHAIR_s = CHAIR_i = 0.5.
    ObjectLexicon lex = small_lexicon();
    CaptionRecord r;
    r.image_id = "img0";
    r.caption = "A dog is sleeping. A cat watches it.";
    r.gold_objects = {"dog"};
    ChairScores s = chair_scores({r}, lex);
    CHECK(s.total_sentences == 2);
    CHECK(s.hallucinated_sentences == 1);
    CHECK(s.total_mentions == 2);
    CHECK(s.hallucinated_mentions == 1);
    CHECK(s.chair_s == 0.5);
    CHECK(s.chair_i == 0.5);
}

TEST_CASE("chair deduplicates mentions per image and validates gold objects") {
    ObjectLexicon lex = small_lexicon();
    CaptionRecord r;
    r.image_id = "img0";
    r.caption = "A dog and a dog. Another dog!";
    r.gold_objects = {"dog"};
    ChairScores s = chair_scores({r}, lex);
    CHECK(s.total_mentions == 1);
    CHECK(s.hallucinated_mentions == 0);
    CHECK(s.chair_i == 0.0);

    CaptionRecord bad = r;
    bad.gold_objects = {"zebra"};
    CHECK_THROWS_AS((void)chair_scores({bad}, lex), param_error);

    CaptionRecord wordless;
    wordless.image_id = "img1";
    wordless.caption = "Nothing to see here.";
    wordless.gold_objects = {};
    CHECK_THROWS_AS((void)chair_scores({wordless}, lex), param_error);
    CHECK_THROWS_AS((void)chair_scores({}, lex), param_error);
}

TEST_CASE("pope metrics match a recount on randomized instances") {
    Rng rng(41);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t n = 1 + rng.next_below(60);
        std::vector<BinaryPrediction> preds(n);
        int tp = 0, fp = 0, tn = 0, fn = 0;
        for (std::size_t i = 0; i < n; ++i) {
            preds[i].id = std::to_string(i);
            preds[i].predicted_yes = rng.next_below(2) == 0;
            preds[i].gold_yes = rng.next_below(2) == 0;
            if (preds[i].predicted_yes && preds[i].gold_yes) tp++;
            else if (preds[i].predicted_yes) fp++;
            else if (preds[i].gold_yes) fn++;
            else tn++;
        }
        PopeMetrics m = pope_metrics(preds);
        CHECK(m.tp == tp);
        CHECK(m.fp == fp);
        CHECK(m.tn == tn);
        CHECK(m.fn == fn);
        CHECK(m.accuracy == doctest::Approx(static_cast<double>(tp + tn) / n));
        if (tp + fp == 0) {
            CHECK_FALSE(m.precision.has_value());
        } else {
            CHECK(*m.precision == doctest::Approx(static_cast<double>(tp) / (tp + fp)));
        }
        if (tp + fn == 0) {
            CHECK_FALSE(m.recall.has_value());
        } else {
            CHECK(*m.recall == doctest::Approx(static_cast<double>(tp) / (tp + fn)));
        }
        if (m.precision && m.recall && *m.precision + *m.recall > 0.0) {
            double want = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
            CHECK(*m.f1 == doctest::Approx(want));
        } else {
            CHECK_FALSE(m.f1.has_value());
        }
    }
    CHECK_THROWS_AS((void)pope_metrics({}), param_error);
}

TEST_CASE("undefined pope ratios stay unset") {
    std::vector<BinaryPrediction> all_no(4);
    for (auto& p : all_no) {
        p.predicted_yes = false;
        p.gold_yes = false;
    }
    PopeMetrics m = pope_metrics(all_no);
    CHECK(m.accuracy == 1.0);
    CHECK_FALSE(m.precision.has_value());
    CHECK_FALSE(m.recall.has_value());
    CHECK_FALSE(m.f1.has_value());
}

TEST_CASE("mme score matches a recount and stays within bounds") {
    Rng rng(42);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t n_images = 1 + rng.next_below(40);
        std::vector<MmeQuestion> questions;
        int correct = 0, both = 0;
        for (std::size_t i = 0; i < n_images; ++i) {
            bool a = rng.next_below(2) == 0;
            bool b = rng.next_below(2) == 0;
            questions.push_back({"img" + std::to_string(i), a});
            questions.push_back({"img" + std::to_string(i), b});
            correct += (a ? 1 : 0) + (b ? 1 : 0);
            if (a && b) both++;
        }
        MmeScore s = mme_score(questions);
        CHECK(s.n_images == static_cast<int>(n_images));
        CHECK(s.n_questions == static_cast<int>(2 * n_images));
        CHECK(s.accuracy == doctest::Approx(100.0 * correct / (2.0 * n_images)));
        CHECK(s.accuracy_plus == doctest::Approx(100.0 * both / static_cast<double>(n_images)));
        CHECK(s.total == doctest::Approx(s.accuracy + s.accuracy_plus));
        CHECK(s.total <= 200.0);
        CHECK(s.accuracy_plus <= s.accuracy + 1e-12);
    }

    std::vector<MmeQuestion> odd = {{"img0", true}};
    CHECK_THROWS_AS((void)mme_score(odd), param_error);
    CHECK_THROWS_AS((void)mme_score({}), param_error);
}
