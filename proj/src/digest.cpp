#include "unifine/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <fstream>
#include <stdexcept>

#include "unifine/errors.hpp"

namespace unifine {

struct Sha256::Impl {
  EVP_MD_CTX* ctx = nullptr;
};

Sha256::Sha256() : impl_(new Impl) {
  impl_->ctx = EVP_MD_CTX_new();
  if (impl_->ctx == nullptr || EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(impl_->ctx);
    delete impl_;
    throw std::runtime_error("sha256: digest init failed");
  }
}

Sha256::~Sha256() {
  EVP_MD_CTX_free(impl_->ctx);
  delete impl_;
}

Sha256& Sha256::update(std::string_view data) {
  EVP_DigestUpdate(impl_->ctx, data.data(), data.size());
  return *this;
}

Sha256& Sha256::update(std::span<const unsigned char> data) {
  EVP_DigestUpdate(impl_->ctx, data.data(), data.size());
  return *this;
}

namespace {

std::array<unsigned char, 32> finish(EVP_MD_CTX* ctx) {
  std::array<unsigned char, 32> out{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, out.data(), &len);
  return out;
}

std::string to_hex(std::span<const unsigned char> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(bytes.size() * 2);
  for (unsigned char b : bytes) {
    hex.push_back(kDigits[b >> 4]);
    hex.push_back(kDigits[b & 0xf]);
  }
  return hex;
}

std::uint64_t first_u64(const std::array<unsigned char, 32>& d) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v = (v << 8) | d[i];
  return v;
}

}  // namespace

std::string Sha256::hex_digest() { return to_hex(finish(impl_->ctx)); }

std::uint64_t Sha256::digest64() { return first_u64(finish(impl_->ctx)); }

std::string sha256_hex(std::string_view data) { return Sha256().update(data).hex_digest(); }

std::string sha256_hex(std::span<const unsigned char> data) {
  return Sha256().update(data).hex_digest();
}

std::uint64_t content_hash64(std::string_view data) { return Sha256().update(data).digest64(); }

std::string file_sha256_hex(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read file: " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(std::string_view(buf.data(), static_cast<std::size_t>(in.gcount())));
  }
  return h.hex_digest();
}

}  // namespace unifine
