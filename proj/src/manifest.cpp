#include "faceedit/manifest.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "faceedit/taxonomy.hpp"

namespace faceedit {

namespace {

[[noreturn]] void toml_error(std::size_t line_no, const std::string& what) {
    throw Error(ErrorKind::schema,
                "manifest line " + std::to_string(line_no) + ": " + what);
}

std::string strip_comment(const std::string& line) {
    std::string out;
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (c == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
        if (c == '#' && !in_string) break;
        out += c;
    }
    return out;
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

nlohmann::json parse_scalar(const std::string& raw, std::size_t line_no) {
    std::string v = trim(raw);
    if (v.empty()) toml_error(line_no, "empty value");
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"')
            toml_error(line_no, "unterminated string");
        std::string out;
        for (std::size_t i = 1; i + 1 < v.size(); ++i) {
            if (v[i] == '\\' && i + 2 < v.size()) {
                char n = v[i + 1];
                if (n == 'n') out += '\n';
                else if (n == 't') out += '\t';
                else if (n == '"') out += '"';
                else if (n == '\\') out += '\\';
                else toml_error(line_no, "unsupported escape");
                ++i;
            } else {
                out += v[i];
            }
        }
        return out;
    }
    if (v == "true") return true;
    if (v == "false") return false;
    // integer or float
    bool looks_float = v.find_first_of(".eE") != std::string::npos;
    try {
        std::size_t used = 0;
        if (looks_float) {
            double d = std::stod(v, &used);
            if (used != v.size()) toml_error(line_no, "bad number '" + v + "'");
            return d;
        }
        long long i = std::stoll(v, &used);
        if (used != v.size()) toml_error(line_no, "bad number '" + v + "'");
        return i;
    } catch (const std::exception&) {
        toml_error(line_no, "unsupported value '" + v + "'");
    }
}

nlohmann::json parse_value(const std::string& raw, std::size_t line_no) {
    std::string v = trim(raw);
    if (!v.empty() && v.front() == '[') {
        if (v.back() != ']') toml_error(line_no, "unterminated array");
        nlohmann::json arr = nlohmann::json::array();
        std::string body = v.substr(1, v.size() - 2);
        std::string item;
        bool in_string = false;
        for (std::size_t i = 0; i < body.size(); ++i) {
            char c = body[i];
            if (c == '"' && (i == 0 || body[i - 1] != '\\')) in_string = !in_string;
            if (c == ',' && !in_string) {
                if (!trim(item).empty()) arr.push_back(parse_scalar(item, line_no));
                item.clear();
            } else {
                item += c;
            }
        }
        if (!trim(item).empty()) arr.push_back(parse_scalar(item, line_no));
        return arr;
    }
    return parse_scalar(v, line_no);
}

bool valid_key(const std::string& k) {
    if (k.empty()) return false;
    for (char c : k)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-')
            return false;
    return true;
}

}  // namespace

nlohmann::json parse_toml(const std::string& text) {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* section = &root;

    std::istringstream in(text);
    std::string raw_line;
    std::size_t line_no = 0;
    std::string pending;  // continuation buffer for multi-line arrays
    std::size_t pending_line = 0;

    while (std::getline(in, raw_line)) {
        ++line_no;
        std::string line = trim(strip_comment(raw_line));
        if (!pending.empty()) {
            pending += " " + line;
            int depth = 0;
            bool in_string = false;
            for (std::size_t i = 0; i < pending.size(); ++i) {
                char c = pending[i];
                if (c == '"' && (i == 0 || pending[i - 1] != '\\')) in_string = !in_string;
                if (!in_string && c == '[') ++depth;
                if (!in_string && c == ']') --depth;
            }
            if (depth > 0) continue;
            line = pending;
            pending.clear();
            line_no = pending_line;
        }
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.size() > 1 && line[1] == '[')
                toml_error(line_no, "arrays of tables are not supported");
            if (line.back() != ']') toml_error(line_no, "malformed section header");
            std::string name = trim(line.substr(1, line.size() - 2));
            section = &root;
            std::string part;
            std::istringstream parts(name);
            while (std::getline(parts, part, '.')) {
                part = trim(part);
                if (!valid_key(part)) toml_error(line_no, "bad section name");
                section = &(*section)[part];
                if (!section->is_object() && !section->is_null())
                    toml_error(line_no, "section clashes with a value");
            }
            continue;
        }

        std::size_t eq = std::string::npos;
        {
            bool in_string = false;
            for (std::size_t i = 0; i < line.size(); ++i) {
                char c = line[i];
                if (c == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
                if (c == '=' && !in_string) {
                    eq = i;
                    break;
                }
            }
        }
        if (eq == std::string::npos) toml_error(line_no, "expected key = value");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (!valid_key(key)) toml_error(line_no, "bad key '" + key + "'");

        if (!value.empty() && value.front() == '[') {
            int depth = 0;
            bool in_string = false;
            for (std::size_t i = 0; i < value.size(); ++i) {
                char c = value[i];
                if (c == '"' && (i == 0 || value[i - 1] != '\\')) in_string = !in_string;
                if (!in_string && c == '[') ++depth;
                if (!in_string && c == ']') --depth;
            }
            if (depth > 0) {  // array continues on following lines
                pending = line;
                pending_line = line_no;
                continue;
            }
        }
        if (section->contains(key)) toml_error(line_no, "duplicate key '" + key + "'");
        (*section)[key] = parse_value(value, line_no);
    }
    if (!pending.empty()) toml_error(pending_line, "unterminated array");
    return root;
}

nlohmann::json parse_toml_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot read manifest: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_toml(buf.str());
}

const char* method_name(Method m) {
    switch (m) {
        case Method::db_base: return "db_base";
        case Method::db_prop: return "db_prop";
        case Method::ti: return "ti";
        case Method::ti_cs: return "ti_cs";
        case Method::cn: return "cn";
        case Method::cn_ti: return "cn_ti";
        case Method::cn_ip: return "cn_ip";
    }
    return "db_prop";
}

std::optional<Method> method_from_name(const std::string& name) {
    for (Method m : {Method::db_base, Method::db_prop, Method::ti, Method::ti_cs,
                     Method::cn, Method::cn_ti, Method::cn_ip})
        if (name == method_name(m)) return m;
    return std::nullopt;
}

bool method_is_global(Method m) {
    return m == Method::db_base || m == Method::db_prop || m == Method::ti ||
           m == Method::ti_cs;
}

namespace {

template <typename T>
T field(const nlohmann::json& j, const std::string& key, const T& fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const std::exception&) {
        throw Error(ErrorKind::schema, "field '" + key + "' has the wrong type");
    }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

std::filesystem::path required_dir(const nlohmann::json& j, const std::string& key,
                                   const std::filesystem::path& base) {
    if (!j.contains(key))
        throw Error(ErrorKind::schema, "missing required field '" + key + "'");
    auto p = resolve(base, j.at(key).get<std::string>());
    if (!std::filesystem::exists(p))
        throw Error(ErrorKind::schema,
                    "field '" + key + "': path does not exist: " + p.string());
    return p;
}

std::optional<std::filesystem::path> optional_dir(const nlohmann::json& j,
                                                  const std::string& key,
                                                  const std::filesystem::path& base) {
    if (!j.contains(key)) return std::nullopt;
    auto p = resolve(base, j.at(key).get<std::string>());
    if (!std::filesystem::exists(p))
        throw Error(ErrorKind::schema,
                    "field '" + key + "': path does not exist: " + p.string());
    return p;
}

ClientKind client_kind(const nlohmann::json& j, const std::string& key) {
    std::string v = field<std::string>(j, key, "stub");
    if (v == "stub") return ClientKind::stub;
    if (v == "http") return ClientKind::http;
    throw Error(ErrorKind::schema, "field '" + key + "' must be 'stub' or 'http'");
}

}  // namespace

ExperimentManifest manifest_from_json(const nlohmann::json& j,
                                      const std::filesystem::path& base_dir) {
    ExperimentManifest m;
    m.schema_version = static_cast<int>(field<long long>(j, "schema_version", 1));
    if (m.schema_version != 1)
        throw Error(ErrorKind::schema, "unsupported schema_version");

    std::string method = field<std::string>(j, "method", "");
    auto parsed = method_from_name(method);
    if (!parsed)
        throw Error(ErrorKind::schema,
                    "field 'method': unknown method '" + method +
                        "' (expected one of db_base, db_prop, ti, ti_cs, cn, cn_ti, cn_ip)");
    m.method = *parsed;

    m.backbone_id = field<std::string>(j, "backbone", "toy");
    if (m.backbone_id != "toy")
        throw Error(ErrorKind::schema,
                    "field 'backbone': only the 'toy' backbone ships in-tree");
    m.seed = static_cast<std::uint64_t>(field<long long>(j, "seed", 0));
    if (!j.contains("output_root"))
        throw Error(ErrorKind::schema, "missing required field 'output_root'");
    m.output_root = resolve(base_dir, j.at("output_root").get<std::string>());

    m.subjects = field<std::vector<std::string>>(j, "subjects", {});
    if (m.subjects.empty())
        throw Error(ErrorKind::schema, "field 'subjects' must list at least one subject");

    const Taxonomy& tax = Taxonomy::instance();
    auto attr_names = field<std::vector<std::string>>(j, "attributes", {});
    if (attr_names.empty())
        throw Error(ErrorKind::schema, "field 'attributes' must list at least one attribute");
    for (const auto& name : attr_names) {
        const AttributeSpec* spec = tax.find(name);
        if (!spec)
            throw Error(ErrorKind::schema,
                        "field 'attributes': unknown attribute '" + name + "'");
        m.attributes.push_back(spec->id);
    }

    m.matchers = field<std::vector<std::string>>(j, "matchers", {"stub-arcface"});
    auto targets = field<std::vector<double>>(j, "fmr_targets", {1e-4, 1e-3});
    for (double t : targets)
        if (t <= 0.0 || t >= 1.0)
            throw Error(ErrorKind::schema, "field 'fmr_targets': values must be in (0,1)");
    m.fmr_targets = targets;

    nlohmann::json data = j.value("data", nlohmann::json::object());
    m.data.images_root = required_dir(data, "images_root", base_dir);
    m.data.masks_root = optional_dir(data, "masks_root", base_dir);
    m.data.gallery_root = optional_dir(data, "gallery_root", base_dir);
    m.data.probes_root = optional_dir(data, "probes_root", base_dir);
    m.data.regularization_root = optional_dir(data, "regularization_root", base_dir);
    m.data.annotations = optional_dir(data, "annotations", base_dir);

    nlohmann::json clients = j.value("clients", nlohmann::json::object());
    m.clients.matcher = client_kind(clients, "matcher");
    m.clients.vqa = client_kind(clients, "vqa");
    m.clients.depth = client_kind(clients, "depth");

    if (j.contains("loss")) m.loss = LossWeights::from_json(j.at("loss"));

    nlohmann::json train = j.value("train", nlohmann::json::object());
    m.train.steps = static_cast<int>(field<long long>(train, "steps", 60));
    m.train.learning_rate = field<double>(train, "learning_rate", 0.05);
    m.train.batch_size = static_cast<int>(field<long long>(train, "batch_size", 2));
    m.train.rare_identifier = field<std::string>(train, "rare_identifier", "sks");
    m.train.reg_per_attribute =
        static_cast<int>(field<long long>(train, "reg_per_attribute", 30));
    m.train.relaxed_reg_counts = field<bool>(train, "relaxed_reg_counts", false);
    m.train.n_vectors = static_cast<int>(field<long long>(train, "n_vectors", 1));
    if (m.train.n_vectors != 1 && m.train.n_vectors != 2 && m.train.n_vectors != 5)
        throw Error(ErrorKind::schema, "field 'n_vectors' must be 1, 2 or 5");

    nlohmann::json edit = j.value("edit", nlohmann::json::object());
    m.edit.steps = static_cast<int>(field<long long>(edit, "steps", 20));
    m.edit.guidance_scale = field<double>(edit, "guidance_scale", 1.0);
    m.edit.controlnet_scale = field<double>(edit, "controlnet_scale", 1.0);
    m.edit.strength = field<double>(edit, "strength", 0.3);
    m.edit.pixel_composite = field<bool>(edit, "pixel_composite", true);
    m.edit.conditioning = field<std::string>(edit, "conditioning", "depth");
    if (m.edit.conditioning != "depth" && m.edit.conditioning != "canny" &&
        m.edit.conditioning != "none")
        throw Error(ErrorKind::schema,
                    "field 'conditioning' must be 'depth', 'canny' or 'none'");
    m.edit.canny_low = field<double>(edit, "canny_low", 0.08);
    m.edit.canny_high = field<double>(edit, "canny_high", 0.2);
    m.edit.dilation_radius = static_cast<int>(field<long long>(edit, "dilation_radius", 0));
    m.edit.generate_steps = static_cast<int>(field<long long>(edit, "generate_steps", 50));

    nlohmann::json eval = j.value("eval", nlohmann::json::object());
    std::string fusion = field<std::string>(eval, "genuine_fusion", "pairwise");
    if (fusion == "pairwise") m.eval.fusion = GenuineFusion::pairwise;
    else if (fusion == "max") m.eval.fusion = GenuineFusion::max_per_subject;
    else throw Error(ErrorKind::schema, "field 'genuine_fusion' must be 'pairwise' or 'max'");
    std::string acq = field<std::string>(eval, "acquisition_policy", "count");
    if (acq == "count") m.eval.acquisition = AcquisitionPolicy::count_as_nonmatch;
    else if (acq == "exclude") m.eval.acquisition = AcquisitionPolicy::exclude;
    else throw Error(ErrorKind::schema, "field 'acquisition_policy' must be 'count' or 'exclude'");
    std::string ts = field<std::string>(eval, "threshold_source", "pool");
    if (ts == "pool") m.eval.threshold_source = ThresholdSource::pool;
    else if (ts == "original") m.eval.threshold_source = ThresholdSource::original;
    else if (ts == "both") m.eval.threshold_source = ThresholdSource::both;
    else throw Error(ErrorKind::schema, "field 'threshold_source' must be 'pool', 'original' or 'both'");
    m.eval.confidence_floor = field<double>(eval, "confidence_floor", 0.5);
    m.eval.tsne = field<bool>(eval, "tsne", false);
    m.eval.degradation.arcface = field<double>(eval, "red_threshold_arcface", 0.10);
    m.eval.degradation.adaface = field<double>(eval, "red_threshold_adaface", 0.05);
    m.eval.degradation.fallback = field<double>(eval, "red_threshold_default", 0.10);

    m.jobs = static_cast<int>(field<long long>(j, "jobs", 1));
    if (m.jobs < 1) throw Error(ErrorKind::schema, "field 'jobs' must be >= 1");

    if (method_is_global(m.method) && m.loss.lambda_p > 0 &&
        !m.data.regularization_root)
        throw Error(ErrorKind::schema,
                    "global methods with lambda_p > 0 need data.regularization_root");
    return m;
}

ExperimentManifest validate_manifest(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw Error(ErrorKind::io, "manifest not found: " + path.string());
    nlohmann::json j;
    if (path.extension() == ".toml") {
        j = parse_toml_file(path);
    } else {
        std::ifstream in(path);
        try {
            j = nlohmann::json::parse(in);
        } catch (const std::exception& e) {
            throw Error(ErrorKind::schema, std::string("manifest JSON: ") + e.what());
        }
    }
    return manifest_from_json(j, path.parent_path());
}

nlohmann::json ExperimentManifest::to_json() const {
    nlohmann::json data_j = {{"images_root", data.images_root.string()}};
    if (data.masks_root) data_j["masks_root"] = data.masks_root->string();
    if (data.gallery_root) data_j["gallery_root"] = data.gallery_root->string();
    if (data.probes_root) data_j["probes_root"] = data.probes_root->string();
    if (data.regularization_root)
        data_j["regularization_root"] = data.regularization_root->string();
    if (data.annotations) data_j["annotations"] = data.annotations->string();

    return {
        {"schema_version", schema_version},
        {"method", method_name(method)},
        {"backbone", backbone_id},
        {"seed", seed},
        {"output_root", output_root.string()},
        {"subjects", subjects},
        {"attributes", attributes},
        {"matchers", matchers},
        {"fmr_targets", fmr_targets},
        {"data", data_j},
        {"clients",
         {{"matcher", clients.matcher == ClientKind::http ? "http" : "stub"},
          {"vqa", clients.vqa == ClientKind::http ? "http" : "stub"},
          {"depth", clients.depth == ClientKind::http ? "http" : "stub"}}},
        {"loss", loss.to_json()},
        {"train",
         {{"steps", train.steps},
          {"learning_rate", train.learning_rate},
          {"batch_size", train.batch_size},
          {"rare_identifier", train.rare_identifier},
          {"reg_per_attribute", train.reg_per_attribute},
          {"relaxed_reg_counts", train.relaxed_reg_counts},
          {"n_vectors", train.n_vectors}}},
        {"edit",
         {{"steps", edit.steps},
          {"guidance_scale", edit.guidance_scale},
          {"controlnet_scale", edit.controlnet_scale},
          {"strength", edit.strength},
          {"pixel_composite", edit.pixel_composite},
          {"conditioning", edit.conditioning},
          {"canny_low", edit.canny_low},
          {"canny_high", edit.canny_high},
          {"dilation_radius", edit.dilation_radius},
          {"generate_steps", edit.generate_steps}}},
        {"eval",
         {{"genuine_fusion",
           eval.fusion == GenuineFusion::pairwise ? "pairwise" : "max"},
          {"acquisition_policy",
           eval.acquisition == AcquisitionPolicy::count_as_nonmatch ? "count"
                                                                    : "exclude"},
          {"threshold_source", eval.threshold_source == ThresholdSource::pool
                                   ? "pool"
                                   : eval.threshold_source == ThresholdSource::original
                                         ? "original"
                                         : "both"},
          {"confidence_floor", eval.confidence_floor},
          {"tsne", eval.tsne},
          {"red_threshold_arcface", eval.degradation.arcface},
          {"red_threshold_adaface", eval.degradation.adaface},
          {"red_threshold_default", eval.degradation.fallback}}},
        {"jobs", jobs},
    };
}

}  // namespace faceedit
