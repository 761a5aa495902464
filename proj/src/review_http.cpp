#include "seavae/review_http.hpp"

#include <charconv>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace seavae {

namespace {

void send_json(httplib::Response& res, const nlohmann::json& body, int status = 200) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

std::size_t size_param(const httplib::Request& req, const std::string& key, std::size_t fallback) {
    if (!req.has_param(key)) return fallback;
    const std::string text = req.get_param_value(key);
    std::size_t value = 0;
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || end != text.data() + text.size()) {
        throw ReviewError(400, fmt::format("query parameter {}='{}' is not a non-negative integer", key, text));
    }
    return value;
}

nlohmann::json parse_body(const httplib::Request& req) {
    try {
        return nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::parse_error& e) {
        throw ReviewError(400, fmt::format("request body is not JSON: {}", e.what()));
    }
}

// Runs a handler and turns exceptions into JSON error responses.
template <typename F>
httplib::Server::Handler guarded(F handler) {
    return [handler](const httplib::Request& req, httplib::Response& res) {
        try {
            handler(req, res);
        } catch (const ReviewError& e) {
            send_json(res, {{"error", e.what()}}, e.status());
        } catch (const std::exception& e) {
            spdlog::error("{} {}: {}", req.method, req.path, e.what());
            send_json(res, {{"error", e.what()}}, 500);
        }
    };
}

}  // namespace

void install_routes(httplib::Server& server, ReviewService& service) {
    server.Get("/images", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                   const std::size_t offset = size_param(req, "offset", 0);
                   const std::size_t limit = size_param(req, "limit", kDefaultPageSize);
                   if (limit == 0 || limit > kMaxPageSize) {
                       throw ReviewError(400, fmt::format("limit must lie in [1, {}]", kMaxPageSize));
                   }
                   const GalleryFilter filter = parse_filter(req.has_param("filter") ? req.get_param_value("filter") : "");
                   send_json(res, service.images(offset, limit, filter));
               }));
    server.Get(R"(/images/([^/]+))", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                   send_json(res, service.image(req.matches[1]));
               }));
    server.Get(R"(/images/([^/]+)/thumbnail)",
               guarded([&service](const httplib::Request& req, httplib::Response& res) {
                   const ThumbnailView view = parse_view(req.has_param("view") ? req.get_param_value("view") : "");
                   const auto png = service.thumbnail(req.matches[1], view);
                   res.set_content(std::string(png.begin(), png.end()), "image/png");
               }));
    server.Get("/embedding", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                   send_json(res, service.embedding(size_param(req, "grid", 0)));
               }));
    server.Get("/thresholds", guarded([&service](const httplib::Request&, httplib::Response& res) {
                   send_json(res, service.thresholds());
               }));
    server.Post("/thresholds", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                    send_json(res, service.set_thresholds(parse_body(req)));
                }));
    server.Post("/labels", guarded([&service](const httplib::Request& req, httplib::Response& res) {
                    send_json(res, service.set_label(parse_body(req)));
                }));
    server.Get("/metrics", guarded([&service](const httplib::Request&, httplib::Response& res) {
                   send_json(res, service.metrics());
               }));
    server.Get("/export", guarded([&service](const httplib::Request&, httplib::Response& res) {
                   res.set_header("Content-Disposition", "attachment; filename=\"detections.csv\"");
                   res.set_content(service.export_csv(), "text/csv");
               }));
    server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
        if (res.body.empty()) {
            send_json(res, {{"error", fmt::format("no route for {} {}", req.method, req.path)}}, res.status);
        }
    });
}

}  // namespace seavae
