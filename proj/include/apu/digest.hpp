// Content digests and base64, used for response caching and HTTP payloads.

#pragma once

#include "apu/error.hpp"

#include <openssl/evp.h>

#include <cstdint>
#include <string>
#include <vector>

namespace apu {

using Bytes = std::vector<std::uint8_t>;

inline std::string sha256_hex(const void* data, size_t len) {
    unsigned char out[EVP_MAX_MD_SIZE];
    unsigned int out_len = 0;
    if (!EVP_Digest(data, len, out, &out_len, EVP_sha256(), nullptr))
        throw Error("sha256 digest failed");
    static const char* hex = "0123456789abcdef";
    std::string s;
    s.reserve(out_len * 2);
    for (unsigned int i = 0; i < out_len; ++i) {
        s += hex[out[i] >> 4];
        s += hex[out[i] & 0xf];
    }
    return s;
}

inline std::string sha256_hex(const Bytes& data) {
    return sha256_hex(data.data(), data.size());
}

inline std::string sha256_hex(const std::string& data) {
    return sha256_hex(data.data(), data.size());
}

// Digest of an (image, prompt) pair. Length-prefixed so the boundary is
// unambiguous.
inline std::string query_digest(const Bytes& image, const std::string& prompt) {
    std::string buf;
    buf.reserve(image.size() + prompt.size() + 24);
    buf += std::to_string(image.size());
    buf += ':';
    buf.append(reinterpret_cast<const char*>(image.data()), image.size());
    buf += prompt;
    return sha256_hex(buf);
}

inline std::string base64_encode(const Bytes& data) {
    static const char* alphabet =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 3 <= data.size(); i += 3) {
        const uint32_t n = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
        out += alphabet[(n >> 18) & 63];
        out += alphabet[(n >> 12) & 63];
        out += alphabet[(n >> 6) & 63];
        out += alphabet[n & 63];
    }
    if (i + 1 == data.size()) {
        const uint32_t n = data[i] << 16;
        out += alphabet[(n >> 18) & 63];
        out += alphabet[(n >> 12) & 63];
        out += "==";
    } else if (i + 2 == data.size()) {
        const uint32_t n = (data[i] << 16) | (data[i + 1] << 8);
        out += alphabet[(n >> 18) & 63];
        out += alphabet[(n >> 12) & 63];
        out += alphabet[(n >> 6) & 63];
        out += '=';
    }
    return out;
}

}  // namespace apu
