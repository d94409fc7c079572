#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "faceedit/errors.hpp"

namespace faceedit {

enum class AttributeCategory { semantic, demographic, expression, none };

const char* category_name(AttributeCategory c);
std::optional<AttributeCategory> category_from_name(const std::string& name);

// How the attribute clause attaches to the subject phrase:
// "with black hair", "wearing a hat", or a bare adjective ("old", "smiling").
enum class Connective { with, wearing, bare };

struct AttributeSpec {
    std::string id;            // stable snake_case key
    std::string display_name;  // report label
    AttributeCategory category = AttributeCategory::none;
    std::string prompt_fragment;
    Connective connective = Connective::bare;
    std::string vqa_question;
    std::vector<std::string> regions;  // face-parsing regions; empty = global-only
    bool editable_locally = false;

    bool is_reconstruction() const { return category == AttributeCategory::none; }
};

struct PromptTemplate {
    std::string rare_identifier;        // e.g. "sks"; binds prompts to one identity
    std::string class_noun = "person";
};

// Immutable attribute universe: 26 editable attributes plus the
// no-attribute reconstruction case. Thread-safe for concurrent reads.
class Taxonomy {
public:
    static const Taxonomy& instance();

    // Deterministic order: semantic, demographic, expression, none.
    std::vector<AttributeSpec> list_attributes(
        std::optional<AttributeCategory> filter = std::nullopt) const;

    // Accepts canonical ids and documented aliases ("happy" -> "smiling");
    // input is normalized (lowercase, spaces/hyphens -> underscores).
    const AttributeSpec* find(const std::string& id_or_alias) const;
    const AttributeSpec& require(const std::string& id_or_alias) const;

    const std::vector<std::string>& region_vocabulary() const { return regions_; }

    nlohmann::json to_json() const;

private:
    Taxonomy();
    std::vector<AttributeSpec> specs_;
    std::vector<std::string> regions_;
};

// "photo of a <rare identifier> <person> with/wearing <attribute>"; bare
// attributes drop the connective, the reconstruction spec drops the clause.
std::string build_edit_prompt(const PromptTemplate& tmpl, const AttributeSpec& attr);

// Caption grammar for regularization images: same clause, no identifier.
std::string build_class_caption(const std::string& class_noun, const AttributeSpec& attr);

// Exact appendix question for the attribute; reconstruction spec has none.
std::string question_for(const AttributeSpec& attr);

}  // namespace faceedit
