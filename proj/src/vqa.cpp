#include "faceedit/vqa.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

namespace faceedit {

const char* verdict_name(Verdict v) {
    switch (v) {
        case Verdict::yes: return "yes";
        case Verdict::no: return "no";
        case Verdict::unparseable: return "unparseable";
    }
    return "unparseable";
}

nlohmann::json AuditRecord::to_json() const {
    nlohmann::json j = {
        {"image_id", image_id},   {"attribute_id", attribute_id},
        {"question", question},   {"raw_answer", raw_answer},
        {"verdict", verdict_name(verdict)},
    };
    if (expected) j["expected"] = *expected;
    if (!failure_reason.empty()) j["failure_reason"] = failure_reason;
    return j;
}

AuditRecord AuditRecord::from_json(const nlohmann::json& j) {
    AuditRecord r;
    r.image_id = j.value("image_id", "");
    r.attribute_id = j.value("attribute_id", "");
    r.question = j.value("question", "");
    r.raw_answer = j.value("raw_answer", "");
    std::string v = j.value("verdict", "unparseable");
    r.verdict = v == "yes" ? Verdict::yes : v == "no" ? Verdict::no : Verdict::unparseable;
    if (j.contains("expected")) r.expected = j.at("expected").get<bool>();
    r.failure_reason = j.value("failure_reason", "");
    return r;
}

const std::vector<std::string>& attribute_keywords(const std::string& attribute_id) {
    static const std::map<std::string, std::vector<std::string>> table = {
        {"bald", {"bald"}},
        {"bangs", {"bangs", "fringe"}},
        {"big_lips", {"big lips", "large lips", "full lips"}},
        {"big_nose", {"big nose", "large nose"}},
        {"black_hair", {"black"}},
        {"blond_hair", {"blond", "blonde"}},
        {"brown_hair", {"brown", "brunette"}},
        {"bushy_eyebrows", {"bushy eyebrows", "bushy", "thick eyebrows"}},
        {"double_chin", {"double chin"}},
        {"eyeglasses", {"eyeglasses", "glasses", "spectacles"}},
        {"hat", {"hat", "cap", "beanie"}},
        {"mustache", {"mustache", "moustache"}},
        {"necktie", {"necktie", "tie"}},
        {"no_beard", {"no beard", "beardless", "clean shaven", "clean-shaven"}},
        {"mouth_slightly_open", {"mouth slightly open", "slightly open mouth",
                                 "open mouth", "mouth open"}},
        {"old", {"old", "elderly", "aged"}},
        {"young", {"young", "youthful"}},
        {"male", {"male", "man", "masculine"}},
        {"female", {"female", "woman", "feminine"}},
        {"smiling", {"smiling", "smile", "happy"}},
        {"anger", {"angry", "anger"}},
        {"sad", {"sad", "unhappy", "sorrowful"}},
        {"fear", {"fearful", "fear", "afraid", "scared"}},
        {"neutral", {"neutral"}},
        {"disgust", {"disgusted", "disgust"}},
        {"surprise", {"surprised", "surprise", "astonished"}},
    };
    static const std::vector<std::string> empty;
    auto it = table.find(attribute_id);
    return it == table.end() ? empty : it->second;
}

namespace {

// Lowercase words; punctuation and hyphens act as separators.
std::vector<std::string> answer_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        unsigned char u = static_cast<unsigned char>(ch);
        if (std::isalnum(u)) {
            cur += static_cast<char>(std::tolower(u));
        } else if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

bool contains_phrase(const std::vector<std::string>& words, const std::string& phrase) {
    std::vector<std::string> target = answer_words(phrase);
    if (target.empty() || words.size() < target.size()) return false;
    for (std::size_t i = 0; i + target.size() <= words.size(); ++i) {
        bool match = true;
        for (std::size_t j = 0; j < target.size(); ++j)
            if (words[i + j] != target[j]) {
                match = false;
                break;
            }
        if (match) return true;
    }
    return false;
}

}  // namespace

Verdict parse_verdict(const std::string& raw_answer, const AttributeSpec& attr) {
    std::vector<std::string> words = answer_words(raw_answer);
    if (words.empty()) return Verdict::unparseable;
    if (words.front() == "yes") return Verdict::yes;
    if (words.front() == "no") return Verdict::no;
    for (const auto& kw : attribute_keywords(attr.id))
        if (contains_phrase(words, kw)) return Verdict::yes;
    return Verdict::unparseable;
}

AuditRecord audit_image(VQAClient& client, const Image& image,
                        const std::string& image_id, const AttributeSpec& attr,
                        const AuditConfig& config) {
    AuditRecord r;
    r.image_id = image_id;
    r.attribute_id = attr.id;
    r.question = question_for(attr);

    std::string answer;
    bool got_answer = false;
    std::string last_error;
    for (int attempt = 0; attempt <= config.retries; ++attempt) {
        try {
            answer = client.answer(image, r.question);
            got_answer = true;
            break;
        } catch (const std::exception& e) {
            last_error = e.what();
            if (attempt < config.retries)
                std::this_thread::sleep_for(std::chrono::milliseconds(20 << attempt));
        }
    }
    if (!got_answer) {
        r.verdict = Verdict::unparseable;
        r.failure_reason = "client failed after " + std::to_string(config.retries + 1) +
                           " attempts: " + last_error;
        return r;
    }
    r.raw_answer = answer;
    r.verdict = parse_verdict(answer, attr);
    return r;
}

SuccessReport success_rate(const std::vector<AuditRecord>& records,
                           UnparseablePolicy policy) {
    if (records.empty())
        throw Error(ErrorKind::parameter, "success_rate needs at least one record");
    SuccessReport report;
    report.policy = policy;
    for (const auto& r : records) {
        AttributeRate& a = report.per_attribute[r.attribute_id];
        if (r.verdict == Verdict::unparseable) {
            ++a.n_unparseable;
            if (policy == UnparseablePolicy::count_as_failure) ++a.n_images;
            continue;
        }
        ++a.n_images;
        if (r.verdict == Verdict::yes) ++a.n_success;
    }
    for (auto& [_, a] : report.per_attribute)
        a.rate_percent = a.n_images == 0
                             ? 0.0
                             : 100.0 * a.n_success / static_cast<double>(a.n_images);
    return report;
}

nlohmann::json SuccessReport::to_json() const {
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [id, a] : per_attribute)
        per[id] = {{"n_images", a.n_images},
                   {"n_success", a.n_success},
                   {"n_unparseable", a.n_unparseable},
                   {"rate_percent", a.rate_percent}};
    return {{"policy", policy == UnparseablePolicy::exclude ? "exclude"
                                                            : "count_as_failure"},
            {"per_attribute", per}};
}

std::string SuccessReport::to_markdown() const {
    std::ostringstream out;
    out << "| Attribute | Images | Successes | Rate (%) |\n";
    out << "|---|---|---|---|\n";
    for (const auto& [id, a] : per_attribute) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", a.rate_percent);
        out << "| " << id << " | " << a.n_images << " | " << a.n_success << " | "
            << buf << " |\n";
    }
    return out.str();
}

std::string SuccessReport::to_csv() const {
    std::ostringstream out;
    out << "attribute,n_images,n_success,n_unparseable,rate_percent\n";
    for (const auto& [id, a] : per_attribute)
        out << id << "," << a.n_images << "," << a.n_success << ","
            << a.n_unparseable << "," << a.rate_percent << "\n";
    return out.str();
}

void save_records_jsonl(const std::filesystem::path& path,
                        const std::vector<AuditRecord>& records) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::io, "cannot write records: " + path.string());
    for (const auto& r : records) out << r.to_json().dump() << "\n";
}

std::vector<AuditRecord> load_records_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot read records: " + path.string());
    std::vector<AuditRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records.push_back(AuditRecord::from_json(nlohmann::json::parse(line)));
    }
    return records;
}

const std::map<std::string, std::pair<std::string, bool>>& AnnotationSet::column_map() {
    static const std::map<std::string, std::pair<std::string, bool>> m = {
        {"bald", {"Bald", false}},
        {"bangs", {"Bangs", false}},
        {"big_lips", {"Big_Lips", false}},
        {"big_nose", {"Big_Nose", false}},
        {"black_hair", {"Black_Hair", false}},
        {"blond_hair", {"Blond_Hair", false}},
        {"brown_hair", {"Brown_Hair", false}},
        {"bushy_eyebrows", {"Bushy_Eyebrows", false}},
        {"double_chin", {"Double_Chin", false}},
        {"eyeglasses", {"Eyeglasses", false}},
        {"hat", {"Wearing_Hat", false}},
        {"mustache", {"Mustache", false}},
        {"necktie", {"Wearing_Necktie", false}},
        {"no_beard", {"No_Beard", false}},
        {"mouth_slightly_open", {"Mouth_Slightly_Open", false}},
        {"male", {"Male", false}},
        {"female", {"Male", true}},
        {"young", {"Young", false}},
        {"old", {"Young", true}},
        {"smiling", {"Smiling", false}},
    };
    return m;
}

AnnotationSet AnnotationSet::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::io, "cannot read annotations: " + path.string());
    AnnotationSet set;
    std::string line;
    if (!std::getline(in, line))
        throw Error(ErrorKind::schema, "empty annotation file");
    // optional count line (a single integer) before the header
    {
        std::istringstream probe(line);
        long long count;
        std::string extra;
        if ((probe >> count) && !(probe >> extra)) {
            if (!std::getline(in, line))
                throw Error(ErrorKind::schema, "annotation file has no header");
        }
    }
    {
        std::istringstream header(line);
        std::string col;
        while (header >> col) set.columns_.push_back(col);
    }
    if (set.columns_.empty())
        throw Error(ErrorKind::schema, "annotation header has no columns");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string image_id;
        row >> image_id;
        std::vector<int> values;
        int v;
        while (row >> v) values.push_back(v == 1 ? 1 : -1);
        if (values.size() != set.columns_.size())
            throw Error(ErrorKind::schema,
                        "annotation row for '" + image_id + "' has " +
                            std::to_string(values.size()) + " values, expected " +
                            std::to_string(set.columns_.size()));
        auto dot = image_id.rfind('.');
        if (dot != std::string::npos) image_id = image_id.substr(0, dot);
        set.rows_[image_id] = std::move(values);
    }
    return set;
}

bool AnnotationSet::covers(const std::string& attribute_id) const {
    auto it = column_map().find(attribute_id);
    if (it == column_map().end()) return false;
    return std::find(columns_.begin(), columns_.end(), it->second.first) !=
           columns_.end();
}

std::optional<bool> AnnotationSet::label(const std::string& image_id,
                                         const std::string& attribute_id) const {
    auto it = column_map().find(attribute_id);
    if (it == column_map().end()) return std::nullopt;
    auto col = std::find(columns_.begin(), columns_.end(), it->second.first);
    if (col == columns_.end()) return std::nullopt;
    auto row = rows_.find(image_id);
    if (row == rows_.end()) return std::nullopt;
    bool positive = row->second[static_cast<std::size_t>(col - columns_.begin())] == 1;
    return it->second.second ? !positive : positive;
}

std::vector<std::string> AnnotationSet::image_ids() const {
    std::vector<std::string> ids;
    for (const auto& [id, _] : rows_) ids.push_back(id);
    return ids;
}

BenchmarkResult benchmark_predictor(VQAClient& client, const AnnotationSet& annotations,
                                    const std::map<std::string, Image>& images,
                                    const std::vector<std::string>& attribute_ids,
                                    const AuditConfig& config) {
    const Taxonomy& tax = Taxonomy::instance();
    std::vector<std::string> attrs = attribute_ids;
    if (attrs.empty()) {
        for (const auto& s : tax.list_attributes())
            if (!s.is_reconstruction() && annotations.covers(s.id))
                attrs.push_back(s.id);
    } else {
        for (const auto& id : attrs)
            if (!annotations.covers(tax.require(id).id))
                throw Error(ErrorKind::coverage,
                            "annotations do not cover attribute '" + id + "'");
    }
    if (attrs.empty())
        throw Error(ErrorKind::coverage, "no benchmarkable attributes");

    BenchmarkResult result;
    result.client_id = client.client_id();
    double acc_sum = 0.0;
    for (const auto& id : attrs) {
        const AttributeSpec& attr = tax.require(id);
        BenchmarkRow row;
        row.attribute_id = id;
        for (const auto& [image_id, image] : images) {
            std::optional<bool> truth = annotations.label(image_id, id);
            if (!truth) continue;
            AuditRecord rec = audit_image(client, image, image_id, attr, config);
            rec.expected = truth;
            bool predicted_yes = rec.verdict == Verdict::yes;
            ++row.n;
            if (predicted_yes == *truth) ++row.n_correct;
            result.records.push_back(std::move(rec));
        }
        row.accuracy_percent =
            row.n == 0 ? 0.0 : 100.0 * row.n_correct / static_cast<double>(row.n);
        acc_sum += row.accuracy_percent;
        result.rows.push_back(row);
    }
    result.mean_accuracy_percent = acc_sum / static_cast<double>(result.rows.size());
    return result;
}

std::string benchmark_comparison_markdown(const BenchmarkResult& a,
                                          const BenchmarkResult& b) {
    std::ostringstream out;
    out << "| Attribute | " << a.client_id << " | " << b.client_id << " |\n";
    out << "|---|---|---|\n";
    auto find_row = [](const BenchmarkResult& r, const std::string& id) -> double {
        for (const auto& row : r.rows)
            if (row.attribute_id == id) return row.accuracy_percent;
        return std::nan("");
    };
    for (const auto& row : a.rows) {
        double other = find_row(b, row.attribute_id);
        char left[32], right[32];
        std::snprintf(left, sizeof left, "%.1f", row.accuracy_percent);
        std::snprintf(right, sizeof right, "%.1f", other);
        out << "| " << row.attribute_id << " | " << left << " | "
            << (std::isnan(other) ? std::string("-") : std::string(right)) << " |\n";
    }
    char am[32], bm[32];
    std::snprintf(am, sizeof am, "%.1f", a.mean_accuracy_percent);
    std::snprintf(bm, sizeof bm, "%.1f", b.mean_accuracy_percent);
    out << "| **mean** | " << am << " | " << bm << " |\n";
    return out.str();
}

}  // namespace faceedit
