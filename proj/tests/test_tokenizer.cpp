#include <string>
#include <vector>

#include "doctest.h"
#include "dmas/errors.hpp"
#include "dmas/tokenizer.hpp"

using namespace dmas;

TEST_CASE("tokenizer splits words and trailing punctuation") {
    Tokenizer tok = Tokenizer::with_default_vocabulary();
    std::vector<int> ids = tok.encode("Is there a dog?");
    REQUIRE(ids.size() == 5);
    CHECK(ids[0] == tok.token_id("is"));
    CHECK(ids[1] == tok.token_id("there"));
    CHECK(ids[2] == tok.token_id("a"));
    CHECK(ids[3] == tok.token_id("dog"));
    CHECK(ids[4] == tok.token_id("?"));
    for (int id : ids) CHECK(id != 0);
}

TEST_CASE("unknown words map to unk id zero") {
    Tokenizer tok = Tokenizer::with_default_vocabulary();
    std::vector<int> ids = tok.encode("is there a zeppelin?");
    REQUIRE(ids.size() == 5);
    CHECK(ids[3] == 0);
    CHECK(tok.token_id("zeppelin") == 0);
}

TEST_CASE("encode and decode round-trip the generated sentence shapes") {
    Tokenizer tok = Tokenizer::with_default_vocabulary();
    for (const std::string& text : {
             std::string("is there a cat ?"),
             std::string("does this picture contain some bread ?"),
             std::string("the image depicts river , stone"),
             std::string("please describe this image ."),
             std::string("yes ."),
             std::string("no ."),
         }) {
        std::vector<int> ids = tok.encode(text);
        CHECK(tok.decode(ids) == text);
        for (int id : ids) CHECK(id != 0);
    }
}

TEST_CASE("encoding is case-insensitive") {
    Tokenizer tok = Tokenizer::with_default_vocabulary();
    CHECK(tok.encode("Is There A DOG?") == tok.encode("is there a dog?"));
}

TEST_CASE("custom vocabulary indexes in declaration order") {
    Tokenizer tok({"<unk>", "alpha", "beta"});
    CHECK(tok.size() == 3);
    CHECK(tok.token_id("alpha") == 1);
    CHECK(tok.token_id("beta") == 2);
    CHECK(tok.encode("beta alpha gamma") == std::vector<int>{2, 1, 0});
}

TEST_CASE("vocabulary validation") {
    CHECK_THROWS_AS(Tokenizer({"alpha", "beta"}), dmas::param_error);
    CHECK_THROWS_AS(Tokenizer({"<unk>", "alpha", "alpha"}), dmas::param_error);
    CHECK_THROWS_AS(Tokenizer(std::vector<std::string>{}), dmas::param_error);
}
