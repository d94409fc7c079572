#include "faceedit/taxonomy.hpp"

#include <algorithm>
#include <unordered_map>

namespace faceedit {

namespace {

using Cat = AttributeCategory;

AttributeSpec spec(std::string id, std::string display, Cat cat, Connective conn,
                   std::string fragment, std::string question,
                   std::vector<std::string> regions, bool local) {
    AttributeSpec s;
    s.id = std::move(id);
    s.display_name = std::move(display);
    s.category = cat;
    s.connective = conn;
    s.prompt_fragment = std::move(fragment);
    s.vqa_question = std::move(question);
    s.regions = std::move(regions);
    s.editable_locally = local;
    return s;
}

std::string normalize_key(const std::string& raw) {
    std::string out;
    out.reserve(raw.size());
    for (char ch : raw) {
        if (ch == ' ' || ch == '-') out += '_';
        else out += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
    return out;
}

}  // namespace

const char* category_name(AttributeCategory c) {
    switch (c) {
        case Cat::semantic: return "semantic";
        case Cat::demographic: return "demographic";
        case Cat::expression: return "expression";
        case Cat::none: return "none";
    }
    return "none";
}

std::optional<AttributeCategory> category_from_name(const std::string& name) {
    if (name == "semantic") return Cat::semantic;
    if (name == "demographic") return Cat::demographic;
    if (name == "expression") return Cat::expression;
    if (name == "none") return Cat::none;
    return std::nullopt;
}

Taxonomy::Taxonomy() {
    regions_ = {"hair", "l_lip", "u_lip", "neck",  "l_eye", "r_eye",
                "eyebrows", "nose", "cloth", "hat", "eye_g", "skin"};

    // Connective and region assignments are a fixed, reviewed table; the
    // mustache and no-beard areas have no isolating parsing region, so those
    // two stay global-only.
    specs_ = {
        spec("bald", "bald", Cat::semantic, Connective::bare, "bald",
             "Is the person bald?", {"hair"}, true),
        spec("bangs", "bangs", Cat::semantic, Connective::with, "bangs",
             "Does the person have bangs?", {"hair"}, true),
        spec("big_lips", "big lips", Cat::semantic, Connective::with, "big lips",
             "Does the person have big lips?", {"l_lip", "u_lip"}, true),
        spec("big_nose", "big nose", Cat::semantic, Connective::with, "big nose",
             "Does the person have big nose?", {"nose"}, true),
        spec("black_hair", "black hair", Cat::semantic, Connective::with, "black hair",
             "Does the person have black hair?", {"hair"}, true),
        spec("blond_hair", "blond hair", Cat::semantic, Connective::with, "blond hair",
             "Does the person have blond hair?", {"hair"}, true),
        spec("brown_hair", "brown hair", Cat::semantic, Connective::with, "brown hair",
             "Does the person have brown hair?", {"hair"}, true),
        spec("bushy_eyebrows", "bushy eyebrows", Cat::semantic, Connective::with,
             "bushy eyebrows", "Does the person have bushy eyebrows?", {"eyebrows"}, true),
        spec("double_chin", "double chin", Cat::semantic, Connective::with, "double chin",
             "Does the person have double chin?", {"neck"}, true),
        spec("eyeglasses", "eyeglasses", Cat::semantic, Connective::wearing, "eyeglasses",
             "Is the person wearing eyeglasses?", {"eye_g", "l_eye", "r_eye"}, true),
        spec("hat", "hat", Cat::semantic, Connective::wearing, "a hat",
             "Is the person wearing hat?", {"hat", "hair"}, true),
        spec("mustache", "mustache", Cat::semantic, Connective::with, "mustache",
             "Does the person have mustache?", {}, false),
        spec("necktie", "necktie", Cat::semantic, Connective::wearing, "a necktie",
             "Is the person wearing necktie?", {"neck"}, true),
        spec("no_beard", "no beard", Cat::semantic, Connective::with, "no beard",
             "Does the person have no beard?", {}, false),
        spec("mouth_slightly_open", "mouth slightly open", Cat::semantic, Connective::with,
             "mouth slightly open", "Does the person have slightly open mouth?",
             {"u_lip", "l_lip"}, true),

        spec("old", "old", Cat::demographic, Connective::bare, "old",
             "Is the person old?", {}, false),
        spec("young", "young", Cat::demographic, Connective::bare, "young",
             "Is the person young?", {}, false),
        spec("male", "male", Cat::demographic, Connective::bare, "male",
             "Is the person male?", {}, false),
        spec("female", "female", Cat::demographic, Connective::bare, "female",
             "Is the person female?", {}, false),

        spec("smiling", "happy", Cat::expression, Connective::bare, "smiling",
             "Is the person smiling?", {}, false),
        spec("fear", "fear", Cat::expression, Connective::bare, "fearful",
             "Does the person have fearful expression?", {}, false),
        spec("neutral", "neutral", Cat::expression, Connective::bare, "neutral",
             "Does the person have neutral expression?", {}, false),
        spec("surprise", "surprise", Cat::expression, Connective::bare, "surprised",
             "Does the person have surprised expression?", {}, false),
        spec("disgust", "disgust", Cat::expression, Connective::bare, "disgusted",
             "Does the person have disgusted expression?", {}, false),
        spec("sad", "sad", Cat::expression, Connective::bare, "sad",
             "Does the person have sad expression?", {}, false),
        spec("anger", "anger", Cat::expression, Connective::bare, "angry",
             "Is the person angry?", {}, false),

        spec("no_attribute", "No attribute", Cat::none, Connective::bare, "", "", {}, false),
    };
}

const Taxonomy& Taxonomy::instance() {
    static const Taxonomy tax;
    return tax;
}

std::vector<AttributeSpec> Taxonomy::list_attributes(
    std::optional<AttributeCategory> filter) const {
    std::vector<AttributeSpec> out;
    for (const auto& s : specs_)
        if (!filter || s.category == *filter) out.push_back(s);
    return out;
}

const AttributeSpec* Taxonomy::find(const std::string& id_or_alias) const {
    static const std::unordered_map<std::string, std::string> aliases = {
        {"happy", "smiling"},      {"angry", "anger"},
        {"fearful", "fear"},       {"surprised", "surprise"},
        {"disgusted", "disgust"},  {"no_attrib", "no_attribute"},
        {"slightly_open_mouth", "mouth_slightly_open"},
        {"glasses", "eyeglasses"},
    };
    std::string key = normalize_key(id_or_alias);
    if (auto it = aliases.find(key); it != aliases.end()) key = it->second;
    for (const auto& s : specs_)
        if (s.id == key) return &s;
    return nullptr;
}

const AttributeSpec& Taxonomy::require(const std::string& id_or_alias) const {
    const AttributeSpec* s = find(id_or_alias);
    if (!s)
        throw Error(ErrorKind::unknown_attribute,
                    "unknown attribute '" + id_or_alias + "'");
    return *s;
}

nlohmann::json Taxonomy::to_json() const {
    nlohmann::json attrs = nlohmann::json::array();
    for (const auto& s : specs_) {
        attrs.push_back({
            {"id", s.id},
            {"display_name", s.display_name},
            {"category", category_name(s.category)},
            {"prompt_fragment", s.prompt_fragment},
            {"connective", s.connective == Connective::with      ? "with"
                           : s.connective == Connective::wearing ? "wearing"
                                                                 : "bare"},
            {"vqa_question", s.vqa_question},
            {"regions", s.regions},
            {"editable_locally", s.editable_locally},
        });
    }
    return {{"schema_version", 1},
            {"region_vocabulary", regions_},
            {"attributes", attrs}};
}

namespace {

std::string attribute_clause(const AttributeSpec& attr) {
    if (attr.is_reconstruction()) return "";
    switch (attr.connective) {
        case Connective::with: return " with " + attr.prompt_fragment;
        case Connective::wearing: return " wearing " + attr.prompt_fragment;
        case Connective::bare: return " " + attr.prompt_fragment;
    }
    return "";
}

}  // namespace

std::string build_edit_prompt(const PromptTemplate& tmpl, const AttributeSpec& attr) {
    if (tmpl.rare_identifier.empty())
        throw Error(ErrorKind::invalid_template, "rare identifier must not be empty");
    if (tmpl.rare_identifier.find_first_of(" \t\n") != std::string::npos)
        throw Error(ErrorKind::invalid_template,
                    "rare identifier must be a single whitespace-free token");
    return "photo of a " + tmpl.rare_identifier + " " + tmpl.class_noun +
           attribute_clause(attr);
}

std::string build_class_caption(const std::string& class_noun, const AttributeSpec& attr) {
    return "photo of a " + class_noun + attribute_clause(attr);
}

std::string question_for(const AttributeSpec& attr) {
    if (attr.is_reconstruction())
        throw Error(ErrorKind::no_question,
                    "the reconstruction spec has no VQA question");
    return attr.vqa_question;
}

}  // namespace faceedit
