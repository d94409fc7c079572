#pragma once

#include <map>
#include <memory>
#include <string>

#include "faceedit/biometric.hpp"
#include "faceedit/conditioning.hpp"
#include "faceedit/vqa.hpp"

namespace faceedit {

// ---- in-tree stubs: CI and toy pipelines never need model weights ----------

// Deterministic embedding from coarse image statistics; blank images count
// as detection failures. Similar images land close in embedding space, which
// is all the toy pipelines need from a matcher.
class StubMatcherClient final : public MatcherClient {
public:
    explicit StubMatcherClient(std::string matcher_id = "stub-arcface")
        : matcher_id_(std::move(matcher_id)) {}
    Result embed(const Image& image) override;
    std::string matcher_id() const override { return matcher_id_; }

private:
    std::string matcher_id_;
};

// Deterministic pseudo-random yes/no answers keyed on image content and
// question text.
class HashVqaClient final : public VQAClient {
public:
    explicit HashVqaClient(std::string id = "stub-vqa") : id_(std::move(id)) {}
    std::string answer(const Image& image, const std::string& question) override;
    std::string client_id() const override { return id_; }

private:
    std::string id_;
};

class FixedAnswerVqaClient final : public VQAClient {
public:
    explicit FixedAnswerVqaClient(std::string answer, std::string id = "fixed-vqa")
        : answer_(std::move(answer)), id_(std::move(id)) {}
    std::string answer(const Image&, const std::string&) override { return answer_; }
    std::string client_id() const override { return id_; }

private:
    std::string answer_;
    std::string id_;
};

// Benchmark stubs: echo or invert annotated ground truth.
class GroundTruthVqaClient final : public VQAClient {
public:
    GroundTruthVqaClient(const AnnotationSet& annotations,
                         std::map<std::string, std::string> question_to_attr,
                         bool invert, std::string id)
        : annotations_(annotations),
          question_to_attr_(std::move(question_to_attr)),
          invert_(invert),
          id_(std::move(id)) {}
    std::string answer(const Image& image, const std::string& question) override;
    std::string client_id() const override { return id_; }

    // Keyed by the taxonomy question bank.
    static std::map<std::string, std::string> question_map();
    void bind_image(const std::string& image_id) { current_image_ = image_id; }

private:
    const AnnotationSet& annotations_;
    std::map<std::string, std::string> question_to_attr_;
    bool invert_ = false;
    std::string id_;
    std::string current_image_;
};

// Smooth radial depth field; deterministic.
class StubDepthClient final : public DepthModelClient {
public:
    std::vector<double> estimate(const Image& image) override;
    std::string client_id() const override { return "stub-depth"; }
};

class FailingDepthClient final : public DepthModelClient {
public:
    std::vector<double> estimate(const Image&) override;
    std::string client_id() const override { return "failing-depth"; }
};

// ---- HTTP clients: live-stack adapters ------------------------------------
// Wire format (JSON over POST):
//   /embed  {"image_png_b64": ...}               -> {"detect_ok": bool,
//             "embedding": [..], "confidence": x}
//   /answer {"image_png_b64": ..., "question": .} -> {"answer": "..."}
//   /depth  {"image_png_b64": ...}               -> {"width": w, "height": h,
//             "depth": [..]}

class HttpMatcherClient final : public MatcherClient {
public:
    HttpMatcherClient(std::string endpoint, std::string matcher_id);
    Result embed(const Image& image) override;
    std::string matcher_id() const override { return matcher_id_; }

private:
    std::string endpoint_;
    std::string matcher_id_;
};

class HttpVqaClient final : public VQAClient {
public:
    HttpVqaClient(std::string endpoint, std::string id);
    std::string answer(const Image& image, const std::string& question) override;
    std::string client_id() const override { return id_; }

private:
    std::string endpoint_;
    std::string id_;
};

class HttpDepthClient final : public DepthModelClient {
public:
    explicit HttpDepthClient(std::string endpoint);
    std::vector<double> estimate(const Image& image) override;
    std::string client_id() const override { return "http-depth"; }

private:
    std::string endpoint_;
};

std::string base64_encode(const std::vector<std::uint8_t>& bytes);

// PNG-encode an image in memory (for the HTTP clients).
std::vector<std::uint8_t> encode_png_bytes(const Image& image);

}  // namespace faceedit
