#pragma once

#include <stdexcept>
#include <string>

namespace dress {

// Each category maps to a CLI exit code (see tools/dress_cli.cpp).
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct model_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct invariant_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace dress
