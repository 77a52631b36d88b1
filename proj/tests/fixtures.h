#pragma once

#include "dress/corpus.h"

#include <cctype>
#include <filesystem>
#include <string>

namespace dress::testing {

// n pairs whose target answer is the ordinary one in upper case
inline style_corpus varied_corpus(size_t n) {
    style_corpus c;
    const char * words[] = {"river", "stone", "candle", "window", "garden", "letter", "harbor", "violin"};
    for (size_t i = 0; i < n; ++i) {
        std::string w = words[i % 8];
        std::string up = w;
        for (char & ch : up) ch = char(std::toupper(static_cast<unsigned char>(ch)));
        c.pairs.push_back({"v" + std::to_string(i), "tell me of the " + w + " " + std::to_string(i), "the " + w + " is near",
                           "THE " + up + " IS NEAR", pair_source::target_style});
    }
    return c;
}

inline std::filesystem::path scratch_dir(const std::string & name) {
    auto dir = std::filesystem::temp_directory_path() / "dress_tests" / name;
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace dress::testing
