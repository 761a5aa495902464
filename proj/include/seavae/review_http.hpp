#pragma once

#include <httplib.h>

#include "seavae/review.hpp"

namespace seavae {

inline constexpr std::size_t kDefaultPageSize = 50;
inline constexpr std::size_t kMaxPageSize = 1000;

/// Registers the JSON API on `server`. Errors come back as {"error": message}
/// with 400 for malformed input, 404 for unknown ids and 409 when a view
/// needs a model that was not loaded. The service must outlive the server.
void install_routes(httplib::Server& server, ReviewService& service);

}  // namespace seavae
