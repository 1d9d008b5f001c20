#include "peel/hash.hpp"

#include <openssl/evp.h>

#include <memory>

#include "peel/binary_io.hpp"
#include "peel/error.hpp"

namespace peel {

std::string GitBlobSha1(std::span<const std::uint8_t> bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  const bool ok = ctx && EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx.get(), header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx.get(), digest, &length) == 1;
  Require(ok, ErrorKind::kIo, "SHA-1 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < length; ++i) {
    hex += kHex[digest[i] >> 4];
    hex += kHex[digest[i] & 15];
  }
  return hex;
}

std::string GitBlobSha1(std::string_view text) {
  return GitBlobSha1(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string FileGitBlobSha1(const std::string& path) { return GitBlobSha1(ReadFileBytes(path)); }

}  // namespace peel
