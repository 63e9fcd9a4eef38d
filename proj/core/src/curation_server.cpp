#include "glandsynth/curation_server.hpp"

#include <httplib.h>

#include <regex>

namespace gsyn {

namespace {

ApiResponse json_response(int status, const nlohmann::json& body) {
    return {status, "application/json", body.dump()};
}

ApiResponse error_response(int status, const std::string& message) {
    return json_response(status, nlohmann::json{{"error", message}});
}

}  // namespace

ApiResponse handle_api_request(CurationStore& store, const std::string& method, const std::string& path,
                               const std::map<std::string, std::string>& query, const std::string& body) {
    static const std::regex item(R"(^/api/candidates/([^/]+)/(mask\.png|preview\.png|verdict)$)");
    try {
        if (path == "/api/stats") {
            if (method != "GET") return error_response(405, "method not allowed");
            const auto s = store.stats();
            return json_response(200, nlohmann::json{{"pending", s.pending},
                                                     {"accepted", s.accepted},
                                                     {"rejected", s.rejected},
                                                     {"total", s.pending + s.accepted + s.rejected}});
        }
        if (path == "/api/candidates") {
            if (method != "GET") return error_response(405, "method not allowed");
            std::optional<Verdict> status;
            if (auto it = query.find("status"); it != query.end() && !it->second.empty()) {
                status = parse_verdict(it->second);
            }
            nlohmann::json items = nlohmann::json::array();
            for (const auto& r : store.list(status)) items.push_back(r);
            return json_response(200, nlohmann::json{{"items", items}});
        }
        std::smatch m;
        if (std::regex_match(path, m, item)) {
            const std::string id = m[1];
            const std::string what = m[2];
            if (what == "verdict") {
                if (method != "POST") return error_response(405, "method not allowed");
                const auto doc = nlohmann::json::parse(body);
                const auto verdict = parse_verdict(doc.at("verdict").get<std::string>());
                if (verdict == Verdict::pending) return error_response(400, "verdict must be accepted or rejected");
                return json_response(200, store.set_verdict(id, verdict, VerdictSource::human));
            }
            if (method != "GET") return error_response(405, "method not allowed");
            if (what == "mask.png") return {200, "image/png", encode_png(mask_to_gray(store.mask(id)))};
            auto preview = store.preview_png(id);
            if (!preview) return error_response(404, "no preview for '" + id + "'");
            return {200, "image/png", std::move(*preview)};
        }
        return error_response(404, "no route for " + path);
    } catch (const UnknownCandidateError& e) {
        return error_response(404, e.what());
    } catch (const IllegalTransitionError& e) {
        return error_response(409, e.what());
    } catch (const nlohmann::json::exception& e) {
        return error_response(400, e.what());
    } catch (const std::invalid_argument& e) {
        return error_response(400, e.what());
    }
}

struct CurationServer::Impl {
    CurationStore& store;
    httplib::Server server;

    explicit Impl(CurationStore& s) : store(s) {
        auto handler = [this](const httplib::Request& req, httplib::Response& res) {
            std::map<std::string, std::string> query(req.params.begin(), req.params.end());
            const auto r = handle_api_request(store, req.method, req.path, query, req.body);
            res.status = r.status;
            res.set_content(r.body, r.content_type);
        };
        server.Get(R"(/api/.*)", handler);
        server.Post(R"(/api/.*)", handler);
    }
};

CurationServer::CurationServer(CurationStore& store) : impl_(std::make_unique<Impl>(store)) {}

CurationServer::~CurationServer() { stop(); }

int CurationServer::bind(const std::string& host, int port) {
    if (port == 0) return impl_->server.bind_to_any_port(host);
    if (!impl_->server.bind_to_port(host, port)) return -1;
    return port;
}

void CurationServer::serve() { impl_->server.listen_after_bind(); }

void CurationServer::stop() {
    if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace gsyn
