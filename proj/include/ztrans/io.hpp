#pragma once

#include <string>

namespace ztrans::io {

// Write-temp-then-rename; partial files never appear under the final name.
void atomic_write_file(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

}  // namespace ztrans::io
