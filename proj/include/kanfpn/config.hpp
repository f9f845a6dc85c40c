#pragma once

#include <filesystem>
#include <istream>
#include <string>
#include <vector>

#include "kanfpn/train.hpp"

namespace kanfpn::config {

/// Sets one `group.key` entry; throws ConfigError for unknown keys or bad values.
void apply(train::RunConfig& cfg, const std::string& key, const std::string& value);

/// `key = value` lines; `#` starts a comment; blank lines are ignored.
train::RunConfig parse(std::istream& in, train::RunConfig base = {});
train::RunConfig load(const std::filesystem::path& path, train::RunConfig base = {});

/// Every accepted key, for documentation and error messages.
const std::vector<std::string>& known_keys();

} // namespace kanfpn::config
