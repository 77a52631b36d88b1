#include "dress/corpus.h"

#include <httplib.h>
#include <json.hpp>

namespace dress {

http_provider::http_provider(std::string host, int port, int timeout_seconds)
    : host_(std::move(host)), port_(port), timeout_(timeout_seconds) {}

std::optional<std::string> http_provider::rewrite(const rewrite_request & req) {
    httplib::Client cli(host_, port_);
    cli.set_connection_timeout(timeout_);
    cli.set_read_timeout(timeout_);
    nlohmann::json body = {{"id", req.id}, {"template_id", req.template_id}, {"slots", req.slots}, {"prompt", req.prompt}};
    auto res = cli.Post("/rewrite", body.dump(), "application/json");
    if (!res || res->status != 200) return std::nullopt;
    auto j = nlohmann::json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.contains("text") || !j["text"].is_string()) return std::nullopt;
    return j["text"].get<std::string>();
}

}  // namespace dress
