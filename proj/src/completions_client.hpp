#pragma once

#include <string>
#include <vector>

namespace iclforge::detail {

// POSTs `body` to {base_url}/v1/completions and returns the response body.
// Transport failures, 5xx and 429 raise BackendUnavailable; a 4xx mentioning
// context length raises ContextOverflow; any other 4xx raises ProtocolError.
// `ids` is attached to every raised error.
std::string post_completions(const std::string& base_url,
                             const std::string& api_key, double timeout_seconds,
                             const std::string& body,
                             const std::vector<std::string>& ids);

}  // namespace iclforge::detail
