#pragma once

#include "streetctx/imagery.hpp"

#include <httplib.h>

#include <memory>
#include <string>

namespace streetctx::imagery {

// Live HTTP static-image provider. The request URL is
//   {base}?{canonical_request}&key={api_key}
// with the key taken from the environment by the caller and never echoed
// into errors or logs. Rate limited by a token bucket (default 10 rps).
class HttpProvider : public Provider {
public:
    explicit HttpProvider(const std::string& base_url, double requests_per_second = 10.0)
        : bucket_(requests_per_second, requests_per_second) {
        const auto scheme_end = base_url.find("://");
        if (scheme_end == std::string::npos)
            throw std::invalid_argument("provider URL must include a scheme: " + base_url);
        const auto path_start = base_url.find('/', scheme_end + 3);
        if (path_start == std::string::npos) {
            origin_ = base_url;
            path_ = "/";
        } else {
            origin_ = base_url.substr(0, path_start);
            path_ = base_url.substr(path_start);
        }
        client_ = std::make_unique<httplib::Client>(origin_);
        client_->set_connection_timeout(10);
        client_->set_read_timeout(30);
    }

    std::string name() const override { return "http:" + origin_ + path_; }

    std::vector<std::uint8_t> fetch(const ProviderRequest& req, const std::string& api_key) override {
        bucket_.acquire();
        const std::string echo = canonical_request(req.image);
        std::string url = path_ + "?" + echo;
        if (!api_key.empty()) url += "&key=" + api_key;
        auto res = client_->Get(url);
        if (!res)
            throw ImageryError("provider unreachable at " + origin_ + " for " + echo);
        if (res->status == 401 || res->status == 403) throw AuthError(res->status, echo);
        if (res->status == 429) throw RetryableError(res->status, echo);
        if (res->status == 404) throw NoCoverageError("no coverage for " + echo);
        if (res->status != 200) throw HttpStatusError(res->status, echo);
        return std::vector<std::uint8_t>(res->body.begin(), res->body.end());
    }

private:
    std::string origin_;
    std::string path_;
    std::unique_ptr<httplib::Client> client_;
    TokenBucket bucket_;
};

} // namespace streetctx::imagery
