#pragma once

// Read-only HTTP inference service: reconstruct any test image at any alpha.
//
//   GET /api/health
//   GET /api/images                       -> {"ids": [...]}
//   GET /api/reconstruct?image=&a1=&a2=&format=png|raw
//   GET /api/landscape                    -> landscape CSV passthrough

#include <cerrno>
#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "hyperrecon/binary_io.hpp"
#include "hyperrecon/data.hpp"
#include "hyperrecon/evaluation.hpp"
#include "hyperrecon/hypermodel.hpp"
#include "hyperrecon/image_io.hpp"

namespace hyperrecon {

struct ServiceResponse {
  int status = 200;
  std::string body;
  std::string content_type = "application/json";
};

class ReconService {
 public:
  ReconService(HyperNet net, Split test, std::optional<std::string> landscape_csv = std::nullopt)
      : net_(std::move(net)), test_(std::move(test)), landscape_(std::move(landscape_csv)) {}

  ServiceResponse health() const { return {200, R"({"status":"ok"})"}; }

  ServiceResponse images() const {
    std::vector<std::size_t> ids(test_.size());
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    return {200, nlohmann::json{{"ids", ids}}.dump()};
  }

  ServiceResponse landscape() const {
    if (!landscape_) return error(404, "no landscape loaded");
    return {200, *landscape_, "text/csv"};
  }

  /// Handles /api/reconstruct from its query parameters.
  ServiceResponse reconstruct(const std::map<std::string, std::string>& params) const {
    const auto image = parse_index(params, "image");
    if (!image) return error(400, "missing or malformed 'image'");
    if (*image >= test_.size()) return error(404, "unknown image id " + std::to_string(*image));
    std::vector<double> a;
    for (const char* key : {"a1", "a2"}) {
      if (a.size() == net_.config().input_dim) break;
      const auto v = parse_real(params, key);
      if (!v) return error(400, std::string("missing or malformed '") + key + "'");
      if (!(*v >= 0.0 && *v <= 1.0)) return error(400, std::string("'") + key + "' must lie in [0,1]");
      a.push_back(*v);
    }
    std::string format = "png";
    if (auto it = params.find("format"); it != params.end()) format = it->second;
    if (format != "png" && format != "raw") return error(400, "format must be png or raw");
    return {200, reconstruct_json(*image, AlphaVector(a), format)};
  }

  /// JSON body for one reconstruction; the HTTP handler returns exactly this string.
  std::string reconstruct_json(std::size_t image, const AlphaVector& alpha, const std::string& format) const {
    const auto& y = test_.measurements.at(image);
    const auto& truth = test_.truths.at(image);
    const ComplexGrid recon = hyperrecon::reconstruct(net_, alpha, y);
    nlohmann::json j = {{"image", image},
                        {"alpha", std::vector<double>(alpha.values().begin(), alpha.values().end())},
                        {"rpsnr_db", rpsnr(recon, truth, y)},
                        {"psnr_db", psnr(recon, truth)},
                        {"height", recon.height()},
                        {"width", recon.width()},
                        {"format", format}};
    if (format == "raw") {
      io::Writer w;
      for (double m : recon.magnitude()) w.f64(m);
      j["magnitude_f64le_base64"] = base64_encode(std::string_view(w.buffer().data(), w.buffer().size()));
    } else {
      j["png_base64"] = base64_encode(magnitude_png(recon));
    }
    return j.dump();
  }

  void mount(httplib::Server& server) const {
    auto send = [](httplib::Response& res, const ServiceResponse& r) {
      res.status = r.status;
      res.set_content(r.body, r.content_type);
    };
    server.Get("/api/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
    server.Get("/api/images", [this, send](const httplib::Request&, httplib::Response& res) { send(res, images()); });
    server.Get("/api/landscape",
               [this, send](const httplib::Request&, httplib::Response& res) { send(res, landscape()); });
    server.Get("/api/reconstruct", [this, send](const httplib::Request& req, httplib::Response& res) {
      std::map<std::string, std::string> params;
      for (const auto& [k, v] : req.params) params.emplace(k, v);
      send(res, reconstruct(params));
    });
  }

  const Split& test() const { return test_; }
  const HyperNet& model() const { return net_; }

 private:
  static ServiceResponse error(int status, const std::string& msg) {
    return {status, nlohmann::json{{"error", msg}}.dump()};
  }

  static std::optional<double> parse_real(const std::map<std::string, std::string>& p, const std::string& key) {
    const auto it = p.find(key);
    if (it == p.end() || it->second.empty()) return std::nullopt;
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(it->second.c_str(), &end);
    if (errno != 0 || end != it->second.c_str() + it->second.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  }

  static std::optional<std::size_t> parse_index(const std::map<std::string, std::string>& p, const std::string& key) {
    const auto it = p.find(key);
    if (it == p.end() || it->second.empty()) return std::nullopt;
    for (char c : it->second)
      if (c < '0' || c > '9') return std::nullopt;
    errno = 0;
    const unsigned long long v = std::strtoull(it->second.c_str(), nullptr, 10);
    if (errno != 0) return std::nullopt;
    return static_cast<std::size_t>(v);
  }

  HyperNet net_;
  Split test_;
  std::optional<std::string> landscape_;
};

}  // namespace hyperrecon
