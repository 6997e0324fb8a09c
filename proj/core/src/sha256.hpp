#pragma once

#include <string>
#include <string_view>

namespace selans::detail {

/// SHA-256 digest as lowercase hex. Self-contained so the cache key stays
/// collision-resistant without pulling in a TLS library.
std::string sha256_hex(std::string_view data);

} // namespace selans::detail
