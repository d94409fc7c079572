#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "faceedit/image.hpp"
#include "faceedit/masks.hpp"
#include "faceedit/taxonomy.hpp"
#include "helpers.hpp"

namespace test_helpers {

struct ToyExperimentOptions {
    std::string method = "cn_ip";
    std::vector<std::string> subjects = {"s001", "s002"};
    std::vector<std::string> attributes = {"black_hair", "big_nose", "no_attribute"};
    std::vector<std::string> matchers = {"stub-arcface", "stub-adaface"};
    int images_per_subject = 3;
    int gallery_per_subject = 2;
    int probes_per_subject = 2;
    int reg_per_attribute = 3;
    int train_steps = 12;
    int edit_steps = 6;
    int generate_steps = 8;
    std::uint64_t seed = 42;
    std::string extra_top_toml;  // inserted before the first section
    std::string extra_toml;      // appended verbatim (sections)
};

// Rectangular region masks covering the conventional face layout of the toy
// portraits; enough for every locally editable attribute.
inline void write_region_masks(const std::filesystem::path& dir, std::size_t size) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto rect = [size](std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1) {
        faceedit::BinaryMask m(size, size, 0);
        for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t x = x0; x < x1; ++x) m.at(y, x) = 1;
        return m;
    };
    std::size_t q = size / 8;
    faceedit::save_mask_png(dir / "hair.png", rect(0, 2 * q, q, 7 * q));
    faceedit::save_mask_png(dir / "eyebrows.png", rect(2 * q, 3 * q, 2 * q, 6 * q));
    faceedit::save_mask_png(dir / "l_eye.png", rect(3 * q, 4 * q, 2 * q, 3 * q));
    faceedit::save_mask_png(dir / "r_eye.png", rect(3 * q, 4 * q, 5 * q, 6 * q));
    faceedit::save_mask_png(dir / "eye_g.png", rect(3 * q, 4 * q, 2 * q, 6 * q));
    faceedit::save_mask_png(dir / "nose.png", rect(4 * q, 5 * q, 3 * q, 5 * q));
    faceedit::save_mask_png(dir / "u_lip.png", rect(5 * q, 6 * q, 3 * q, 5 * q));
    faceedit::save_mask_png(dir / "l_lip.png", rect(6 * q, 7 * q, 3 * q, 5 * q));
    faceedit::save_mask_png(dir / "neck.png", rect(7 * q, size, 3 * q, 5 * q));
    faceedit::save_mask_png(dir / "cloth.png", rect(7 * q, size, 0, size));
    faceedit::save_mask_png(dir / "hat.png", rect(0, q, 0, size));
    faceedit::save_mask_png(dir / "skin.png", rect(2 * q, 7 * q, 2 * q, 6 * q));
}

// Writes a complete desk-scale experiment tree plus manifest.toml; returns
// the manifest path.
inline std::filesystem::path make_toy_experiment(const std::filesystem::path& root,
                                                 const ToyExperimentOptions& opts = {}) {
    namespace fs = std::filesystem;
    const std::size_t size = 64;

    for (const auto& subject : opts.subjects) {
        fs::create_directories(root / "images" / subject);
        fs::create_directories(root / "gallery" / subject);
        fs::create_directories(root / "probes" / subject);
        for (int i = 0; i < opts.images_per_subject; ++i) {
            auto p = root / "images" / subject / (subject + "_in" + std::to_string(i) + ".png");
            faceedit::save_png(p, toy_face(subject, i));
            write_region_masks(root / "masks" / p.stem().string(), size);
        }
        for (int i = 0; i < opts.gallery_per_subject; ++i)
            faceedit::save_png(
                root / "gallery" / subject / (subject + "_g" + std::to_string(i) + ".png"),
                toy_face(subject, 100 + i));
        for (int i = 0; i < opts.probes_per_subject; ++i)
            faceedit::save_png(
                root / "probes" / subject / (subject + "_p" + std::to_string(i) + ".png"),
                toy_face(subject, 200 + i));
    }

    const auto& tax = faceedit::Taxonomy::instance();
    for (const auto& attr : opts.attributes) {
        const auto& spec = tax.require(attr);
        if (spec.is_reconstruction()) continue;
        fs::create_directories(root / "reg" / spec.id);
        for (int i = 0; i < opts.reg_per_attribute; ++i)
            faceedit::save_png(root / "reg" / spec.id / ("reg" + std::to_string(i) + ".png"),
                               toy_face("regsubj_" + spec.id, i));
    }

    auto quote_list = [](const std::vector<std::string>& items) {
        std::string out = "[";
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (i) out += ", ";
            out += "\"" + items[i] + "\"";
        }
        return out + "]";
    };

    std::ofstream toml(root / "manifest.toml");
    toml << "schema_version = 1\n";
    toml << "method = \"" << opts.method << "\"\n";
    toml << "backbone = \"toy\"\n";
    toml << "seed = " << opts.seed << "\n";
    toml << "output_root = \"out\"\n";
    toml << "subjects = " << quote_list(opts.subjects) << "\n";
    toml << "attributes = " << quote_list(opts.attributes) << "\n";
    toml << "matchers = " << quote_list(opts.matchers) << "\n";
    toml << "fmr_targets = [1e-2, 1e-1]\n";  // resolvable at toy impostor counts
    toml << opts.extra_top_toml;
    toml << "\n[data]\n";
    toml << "images_root = \"images\"\n";
    toml << "masks_root = \"masks\"\n";
    toml << "gallery_root = \"gallery\"\n";
    toml << "probes_root = \"probes\"\n";
    toml << "regularization_root = \"reg\"\n";
    toml << "\n[train]\n";
    toml << "steps = " << opts.train_steps << "\n";
    toml << "learning_rate = 0.5\n";
    toml << "relaxed_reg_counts = true\n";
    toml << "reg_per_attribute = " << opts.reg_per_attribute << "\n";
    toml << "\n[edit]\n";
    toml << "steps = " << opts.edit_steps << "\n";
    toml << "generate_steps = " << opts.generate_steps << "\n";
    toml << "conditioning = \"depth\"\n";
    toml << opts.extra_toml;
    toml.close();
    return root / "manifest.toml";
}

}  // namespace test_helpers
