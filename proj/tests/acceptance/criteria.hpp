#pragma once

#include <functional>
#include <string>
#include <vector>

namespace acceptance {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    std::string name;
    std::function<Outcome()> check;
};

std::vector<Criterion> criteria();

/// Hex digest of a fixed multi-accessory render, used to compare processes.
std::string render_digest();

}  // namespace acceptance
