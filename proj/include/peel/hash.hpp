#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace peel {

// Lowercase hex SHA-1 of "blob <size>\0" + bytes, as `git hash-object` prints.
std::string GitBlobSha1(std::span<const std::uint8_t> bytes);
std::string GitBlobSha1(std::string_view text);
std::string FileGitBlobSha1(const std::string& path);

}  // namespace peel
