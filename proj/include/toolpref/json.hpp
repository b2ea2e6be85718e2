#pragma once

#include <json.hpp>

namespace toolpref {

// Insertion-ordered so every artifact serializes byte-stably.
using Json = nlohmann::ordered_json;

}  // namespace toolpref
