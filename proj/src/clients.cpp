#include "faceedit/clients.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <httplib.h>
#include <json.hpp>

#include "faceedit/rng.hpp"
#include "faceedit/taxonomy.hpp"

namespace faceedit {

namespace {

double bilinear_gray(const Image& gray, double fy, double fx) {
    std::size_t y0 = static_cast<std::size_t>(fy);
    std::size_t x0 = static_cast<std::size_t>(fx);
    std::size_t y1 = std::min(y0 + 1, gray.height - 1);
    std::size_t x1 = std::min(x0 + 1, gray.width - 1);
    double dy = fy - static_cast<double>(y0);
    double dx = fx - static_cast<double>(x0);
    return gray.at(0, y0, x0) * (1 - dy) * (1 - dx) + gray.at(0, y0, x1) * (1 - dy) * dx +
           gray.at(0, y1, x0) * dy * (1 - dx) + gray.at(0, y1, x1) * dy * dx;
}

}  // namespace

StubMatcherClient::Result StubMatcherClient::embed(const Image& image) {
    Result res;
    // blank frames have no face to detect
    double mean = 0.0;
    for (double v : image.data) mean += v;
    mean /= static_cast<double>(image.data.size());
    double var = 0.0;
    for (double v : image.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(image.data.size());
    if (var < 1e-8) {
        res.detect_ok = false;
        return res;
    }

    Image gray = image.to_gray();
    res.embedding.reserve(512);
    // 16x16 resampled intensities (256)
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            double fy = (y + 0.5) / 16.0 * (gray.height - 1);
            double fx = (x + 0.5) / 16.0 * (gray.width - 1);
            res.embedding.push_back(bilinear_gray(gray, fy, fx));
        }
    // 8x8 per-channel means (192)
    for (std::size_t c = 0; c < 3; ++c) {
        std::size_t src = image.channels == 3 ? c : 0;
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) {
                std::size_t y0 = y * image.height / 8, y1 = (y + 1) * image.height / 8;
                std::size_t x0 = x * image.width / 8, x1 = (x + 1) * image.width / 8;
                double acc = 0.0;
                for (std::size_t yy = y0; yy < y1; ++yy)
                    for (std::size_t xx = x0; xx < x1; ++xx) acc += image.at(src, yy, xx);
                res.embedding.push_back(acc / static_cast<double>((y1 - y0) * (x1 - x0)));
            }
    }
    // 8x8 horizontal gradient magnitudes (64)
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            double fy = (y + 0.5) / 8.0 * (gray.height - 2);
            double fx = (x + 0.5) / 8.0 * (gray.width - 2);
            double g = bilinear_gray(gray, fy, fx + 1) - bilinear_gray(gray, fy, fx);
            res.embedding.push_back(std::fabs(g));
        }

    res.detect_ok = true;
    res.confidence = std::min(1.0, 0.5 + 10.0 * var);
    return res;
}

std::string HashVqaClient::answer(const Image& image, const std::string& question) {
    std::uint64_t h = fnv1a64(question);
    h = fnv1a64(image.data.data(), std::min<std::size_t>(image.data.size(), 256) * sizeof(double), h);
    return (h % 100) < 60 ? "Yes" : "No";
}

std::map<std::string, std::string> GroundTruthVqaClient::question_map() {
    std::map<std::string, std::string> m;
    for (const auto& s : Taxonomy::instance().list_attributes())
        if (!s.is_reconstruction()) m[s.vqa_question] = s.id;
    return m;
}

std::string GroundTruthVqaClient::answer(const Image&, const std::string& question) {
    auto it = question_to_attr_.find(question);
    if (it == question_to_attr_.end())
        throw Error(ErrorKind::client, "ground-truth stub has no mapping for question");
    auto truth = annotations_.label(current_image_, it->second);
    if (!truth)
        throw Error(ErrorKind::client,
                    "no annotation for image '" + current_image_ + "'");
    bool yes = invert_ ? !*truth : *truth;
    return yes ? "Yes" : "No";
}

std::vector<double> StubDepthClient::estimate(const Image& image) {
    std::vector<double> depth(image.height * image.width);
    double cy = (image.height - 1) / 2.0, cx = (image.width - 1) / 2.0;
    for (std::size_t y = 0; y < image.height; ++y)
        for (std::size_t x = 0; x < image.width; ++x) {
            double dy = (y - cy) / image.height, dx = (x - cx) / image.width;
            depth[y * image.width + x] = 2.0 + 8.0 * std::sqrt(dy * dy + dx * dx);
        }
    return depth;
}

std::vector<double> FailingDepthClient::estimate(const Image&) {
    throw Error(ErrorKind::client, "depth client unreachable");
}

// ---- HTTP plumbing ---------------------------------------------------------

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    static const char* alphabet =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    for (std::size_t i = 0; i < bytes.size(); i += 3) {
        std::uint32_t chunk = bytes[i] << 16;
        if (i + 1 < bytes.size()) chunk |= bytes[i + 1] << 8;
        if (i + 2 < bytes.size()) chunk |= bytes[i + 2];
        out += alphabet[(chunk >> 18) & 63];
        out += alphabet[(chunk >> 12) & 63];
        out += i + 1 < bytes.size() ? alphabet[(chunk >> 6) & 63] : '=';
        out += i + 2 < bytes.size() ? alphabet[chunk & 63] : '=';
    }
    return out;
}

std::vector<std::uint8_t> encode_png_bytes(const Image& image) {
    // libpng's simplest in-memory path is a temp file; image sizes here are
    // tiny so this is not a bottleneck.
    auto tmp = std::filesystem::temp_directory_path() /
               ("faceedit_png_" + std::to_string(fnv1a64(
                    image.data.data(), std::min<std::size_t>(image.data.size(), 64) *
                                           sizeof(double))) +
                ".png");
    save_png(tmp, image);
    std::ifstream in(tmp, std::ios::binary);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    std::filesystem::remove(tmp);
    return bytes;
}

namespace {

nlohmann::json post_json(const std::string& endpoint, const std::string& path,
                         const nlohmann::json& body) {
    httplib::Client client(endpoint);
    client.set_connection_timeout(5);
    client.set_read_timeout(60);
    auto res = client.Post(path, body.dump(), "application/json");
    if (!res)
        throw Error(ErrorKind::client, "no response from " + endpoint + path);
    if (res->status != 200)
        throw Error(ErrorKind::client, "HTTP " + std::to_string(res->status) +
                                           " from " + endpoint + path);
    return nlohmann::json::parse(res->body);
}

}  // namespace

HttpMatcherClient::HttpMatcherClient(std::string endpoint, std::string matcher_id)
    : endpoint_(std::move(endpoint)), matcher_id_(std::move(matcher_id)) {}

MatcherClient::Result HttpMatcherClient::embed(const Image& image) {
    nlohmann::json body = {{"image_png_b64", base64_encode(encode_png_bytes(image))},
                           {"matcher", matcher_id_}};
    nlohmann::json reply = post_json(endpoint_, "/embed", body);
    Result res;
    res.detect_ok = reply.value("detect_ok", false);
    res.confidence = reply.value("confidence", 1.0);
    if (res.detect_ok)
        res.embedding = reply.at("embedding").get<std::vector<double>>();
    return res;
}

HttpVqaClient::HttpVqaClient(std::string endpoint, std::string id)
    : endpoint_(std::move(endpoint)), id_(std::move(id)) {}

std::string HttpVqaClient::answer(const Image& image, const std::string& question) {
    nlohmann::json body = {{"image_png_b64", base64_encode(encode_png_bytes(image))},
                           {"question", question}};
    return post_json(endpoint_, "/answer", body).at("answer").get<std::string>();
}

HttpDepthClient::HttpDepthClient(std::string endpoint) : endpoint_(std::move(endpoint)) {}

std::vector<double> HttpDepthClient::estimate(const Image& image) {
    nlohmann::json body = {{"image_png_b64", base64_encode(encode_png_bytes(image))}};
    nlohmann::json reply = post_json(endpoint_, "/depth", body);
    return reply.at("depth").get<std::vector<double>>();
}

}  // namespace faceedit
