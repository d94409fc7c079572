#include <doctest.h>

#include <fstream>
#include <set>

#include "faceedit/taxonomy.hpp"
#include "faceedit/vqa.hpp"

using namespace faceedit;

namespace {

// The VQA question bank, embedded verbatim as a fixture. Every spec question
// must be byte-equal to one of these, and all 26 must be covered.
const std::vector<std::string> kQuestionBank = {
    "Is the person young?",
    "Is the person old?",
    "Is the person male?",
    "Is the person female?",
    "Is the person bald?",
    "Does the person have black hair?",
    "Does the person have blond hair?",
    "Does the person have brown hair?",
    "Does the person have bangs?",
    "Does the person have no beard?",
    "Does the person have mustache?",
    "Does the person have bushy eyebrows?",
    "Does the person have double chin?",
    "Does the person have slightly open mouth?",
    "Does the person have big nose?",
    "Does the person have big lips?",
    "Is the person wearing eyeglasses?",
    "Is the person wearing necktie?",
    "Is the person wearing hat?",
    "Is the person angry?",
    "Is the person smiling?",
    "Does the person have sad expression?",
    "Does the person have fearful expression?",
    "Does the person have neutral expression?",
    "Does the person have disgusted expression?",
    "Does the person have surprised expression?",
};

bool words_contain_any_keyword(const std::string& text,
                               const std::vector<std::string>& keywords) {
    auto lower = [](std::string s) {
        for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        return s;
    };
    std::string hay = " " + lower(text) + " ";
    for (auto& c : hay)
        if (!std::isalnum(static_cast<unsigned char>(c))) c = ' ';
    for (const auto& kw : keywords) {
        std::string needle = " " + lower(kw) + " ";
        for (auto& c : needle)
            if (!std::isalnum(static_cast<unsigned char>(c))) c = ' ';
        if (hay.find(needle) != std::string::npos) return true;
    }
    return false;
}

}  // namespace

TEST_SUITE("taxonomy") {

TEST_CASE("27 specs with the 15/4/7/1 category split") {
    const Taxonomy& tax = Taxonomy::instance();
    auto all = tax.list_attributes();
    CHECK(all.size() == 27);
    CHECK(tax.list_attributes(AttributeCategory::semantic).size() == 15);
    CHECK(tax.list_attributes(AttributeCategory::demographic).size() == 4);
    CHECK(tax.list_attributes(AttributeCategory::expression).size() == 7);
    CHECK(tax.list_attributes(AttributeCategory::none).size() == 1);

    // deterministic order: semantic, demographic, expression, none
    CHECK(all.front().category == AttributeCategory::semantic);
    CHECK(all.back().category == AttributeCategory::none);
    std::vector<std::string> expr_ids;
    for (const auto& s : tax.list_attributes(AttributeCategory::expression))
        expr_ids.push_back(s.id);
    CHECK(expr_ids == std::vector<std::string>{"smiling", "fear", "neutral", "surprise",
                                               "disgust", "sad", "anger"});
    std::vector<std::string> demo_ids;
    for (const auto& s : tax.list_attributes(AttributeCategory::demographic))
        demo_ids.push_back(s.id);
    CHECK(demo_ids == std::vector<std::string>{"old", "young", "male", "female"});
}

TEST_CASE("every question is byte-equal to the embedded bank, bijectively") {
    const Taxonomy& tax = Taxonomy::instance();
    std::set<std::string> bank(kQuestionBank.begin(), kQuestionBank.end());
    REQUIRE(bank.size() == 26);
    std::set<std::string> seen;
    for (const auto& s : tax.list_attributes()) {
        if (s.is_reconstruction()) {
            CHECK(s.vqa_question.empty());
            continue;
        }
        CHECK_MESSAGE(bank.count(s.vqa_question) == 1,
                      "question not in the bank: " << s.vqa_question);
        CHECK(seen.insert(s.vqa_question).second);
    }
    CHECK(seen.size() == 26);
}

TEST_CASE("spec invariants") {
    const Taxonomy& tax = Taxonomy::instance();
    std::set<std::string> vocab(tax.region_vocabulary().begin(),
                                tax.region_vocabulary().end());
    for (const auto& s : tax.list_attributes()) {
        if (s.editable_locally) CHECK(!s.regions.empty());
        if (!s.is_reconstruction()) CHECK(!s.vqa_question.empty());
        for (const auto& r : s.regions) CHECK(vocab.count(r) == 1);
    }
}

TEST_CASE("build_edit_prompt grammar") {
    const Taxonomy& tax = Taxonomy::instance();
    PromptTemplate tmpl{"sks", "person"};
    CHECK(build_edit_prompt(tmpl, tax.require("black_hair")) ==
          "photo of a sks person with black hair");
    CHECK(build_edit_prompt(tmpl, tax.require("no_attribute")) ==
          "photo of a sks person");
    CHECK(build_edit_prompt(tmpl, tax.require("hat")) ==
          "photo of a sks person wearing a hat");
    CHECK(build_edit_prompt(tmpl, tax.require("mustache")) ==
          "photo of a sks person with mustache");
    CHECK(build_edit_prompt(tmpl, tax.require("old")) == "photo of a sks person old");
}

TEST_CASE("build_edit_prompt is injective over the 27 specs") {
    const Taxonomy& tax = Taxonomy::instance();
    PromptTemplate tmpl{"sks", "person"};
    std::set<std::string> prompts;
    for (const auto& s : tax.list_attributes())
        CHECK(prompts.insert(build_edit_prompt(tmpl, s)).second);
    CHECK(prompts.size() == 27);
}

TEST_CASE("class captions for regularization images") {
    const Taxonomy& tax = Taxonomy::instance();
    CHECK(build_class_caption("person", tax.require("black_hair")) ==
          "photo of a person with black hair");
    CHECK(build_class_caption("person", tax.require("eyeglasses")) ==
          "photo of a person wearing eyeglasses");
}

TEST_CASE("question_for") {
    const Taxonomy& tax = Taxonomy::instance();
    CHECK(question_for(tax.require("mustache")) == "Does the person have mustache?");
    CHECK(question_for(tax.require("eyeglasses")) == "Is the person wearing eyeglasses?");
    CHECK(question_for(tax.require("young")) == "Is the person young?");
    CHECK_THROWS_AS(question_for(tax.require("no_attribute")), Error);
    try {
        question_for(tax.require("no_attribute"));
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::no_question);
    }
}

TEST_CASE("template errors") {
    const Taxonomy& tax = Taxonomy::instance();
    CHECK_THROWS_AS(build_edit_prompt(PromptTemplate{"", "person"}, tax.require("hat")),
                    Error);
    CHECK_THROWS_AS(
        build_edit_prompt(PromptTemplate{"two words", "person"}, tax.require("hat")),
        Error);
}

TEST_CASE("aliases resolve to canonical specs") {
    const Taxonomy& tax = Taxonomy::instance();
    CHECK(tax.find("happy") == tax.find("smiling"));
    CHECK(tax.find("angry") == tax.find("anger"));
    CHECK(tax.find("black hair") == tax.find("black_hair"));
    CHECK(tax.find("No attribute") == tax.find("no_attribute"));
    CHECK(tax.find("stylegan") == nullptr);
    CHECK_THROWS_AS(tax.require("stylegan"), Error);
}

TEST_CASE("question and prompt fragment reference the same concept") {
    // keyword-table check, not free text matching
    const Taxonomy& tax = Taxonomy::instance();
    for (const auto& s : tax.list_attributes()) {
        if (s.is_reconstruction()) continue;
        const auto& keywords = attribute_keywords(s.id);
        REQUIRE_MESSAGE(!keywords.empty(), "no keywords for " << s.id);
        CHECK_MESSAGE(words_contain_any_keyword(s.vqa_question, keywords),
                      s.id << ": question misses every keyword");
        CHECK_MESSAGE(
            words_contain_any_keyword(s.prompt_fragment + " " + s.display_name, keywords),
            s.id << ": fragment misses every keyword");
    }
}

TEST_CASE("shipped JSON document matches the embedded taxonomy") {
    std::ifstream in(std::string(FACEEDIT_SOURCE_DIR) + "/data/taxonomy.json");
    REQUIRE_MESSAGE(in.good(), "data/taxonomy.json missing");
    nlohmann::json shipped = nlohmann::json::parse(in);
    CHECK(shipped == Taxonomy::instance().to_json());
}

}  // TEST_SUITE
