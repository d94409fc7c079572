// Writes a desk-scale experiment tree (images, masks, gallery, probes,
// regularization set, manifest.toml) for CLI smoke runs.
#include <iostream>

#include "fixtures.hpp"

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: faceedit_make_fixture <directory>\n";
        return 2;
    }
    test_helpers::ToyExperimentOptions opts;
    opts.subjects = {"s001", "s002"};
    opts.attributes = {"black_hair", "big_nose", "no_attribute"};
    opts.matchers = {"stub-arcface"};
    auto manifest = test_helpers::make_toy_experiment(argv[1], opts);
    std::cout << manifest.string() << "\n";
    return 0;
}
