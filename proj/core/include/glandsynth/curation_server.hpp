#pragma once

#include <map>
#include <memory>
#include <string>

#include "glandsynth/curation.hpp"

namespace gsyn {

struct ApiResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
};

/// Routes one request of the review API against a store:
///   GET  /api/candidates?status=pending|accepted|rejected
///   GET  /api/candidates/{id}/mask.png
///   GET  /api/candidates/{id}/preview.png
///   POST /api/candidates/{id}/verdict   {"verdict":"accepted"|"rejected"}
///   GET  /api/stats
/// Verdicts posted here are human verdicts. Unknown ids give 404, illegal transitions 409.
ApiResponse handle_api_request(CurationStore& store, const std::string& method, const std::string& path,
                               const std::map<std::string, std::string>& query, const std::string& body);

/// HTTP front end for handle_api_request.
class CurationServer {
public:
    explicit CurationServer(CurationStore& store);
    ~CurationServer();
    CurationServer(const CurationServer&) = delete;
    CurationServer& operator=(const CurationServer&) = delete;

    /// Binds to host:port (port 0 picks a free port) and returns the bound port.
    int bind(const std::string& host, int port);
    /// Serves until stop(); call after bind().
    void serve();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace gsyn
