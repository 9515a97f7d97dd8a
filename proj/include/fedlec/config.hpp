#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "fedlec/engine.hpp"

namespace fedlec {

/// Raised for unreadable, malformed, or invalid configuration input.
/// The CLI maps it to exit code 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Parses a flat key = value experiment file (TOML-compatible grammar:
/// comments with '#', quoted strings, integers, floats, booleans).
/// Unknown keys are rejected; omitted keys take the documented defaults.
ExperimentConfig parse_config(const std::string& path);

/// Same grammar from an in-memory string; `name` is used in error messages.
ExperimentConfig parse_config_text(const std::string& text, const std::string& name);

/// Canonical serialized form: every key, sorted, one per line. Parsing the
/// output reproduces the config exactly.
std::string serialize_config(const ExperimentConfig& cfg);

/// FNV-1a over the canonical serialization; changes iff any field changes.
std::uint64_t config_hash(const ExperimentConfig& cfg);

}  // namespace fedlec
