#include "completions_client.hpp"

#include <chrono>

#include <httplib.h>

#include "iclforge/error.hpp"

namespace iclforge::detail {

std::string post_completions(const std::string& base_url,
                             const std::string& api_key, double timeout_seconds,
                             const std::string& body,
                             const std::vector<std::string>& ids) {
  httplib::Client client(base_url);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(timeout_seconds));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  httplib::Headers headers;
  if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);

  auto res = client.Post("/v1/completions", headers, body, "application/json");
  if (!res) {
    throw Error(ErrorCode::kBackendUnavailable,
                base_url + ": " + httplib::to_string(res.error()), ids);
  }
  if (res->status >= 500 || res->status == 429) {
    throw Error(ErrorCode::kBackendUnavailable,
                base_url + " returned HTTP " + std::to_string(res->status), ids);
  }
  if (res->status >= 400) {
    const bool overflow = res->body.find("context") != std::string::npos &&
                          res->body.find("length") != std::string::npos;
    throw Error(overflow ? ErrorCode::kContextOverflow : ErrorCode::kProtocolError,
                base_url + " returned HTTP " + std::to_string(res->status) +
                    ": " + res->body,
                ids);
  }
  return std::move(res->body);
}

}  // namespace iclforge::detail
