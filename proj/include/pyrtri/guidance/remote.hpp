#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <thread>

#include <httplib.h>

#include "pyrtri/guidance/protocol.hpp"
#include "pyrtri/guidance/provider.hpp"

namespace pyrtri {

/// Pixel-space provider backed by an HTTP service speaking the wire protocol.
/// The encoder is the identity: no encoder Jacobian crosses the wire.
class RemoteProvider : public GuidanceProvider {
 public:
  explicit RemoteProvider(const std::string& endpoint, std::chrono::milliseconds timeout = std::chrono::seconds(30))
      : client_(endpoint) {
    if (!client_.is_valid()) throw TransportError("invalid provider endpoint: " + endpoint, false);
    client_.set_connection_timeout(timeout);
    client_.set_read_timeout(timeout);
    client_.set_write_timeout(timeout);
  }

  /// Protocol version reported by the service.
  std::string health() {
    auto res = client_.Get("/health");
    if (!res) throw TransportError("health check failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw TransportError("health check returned HTTP " + std::to_string(res->status));
    return res->body;
  }

  Image<double> predict_noise(const NoiseQuery& q) override {
    wire::Request r;
    r.timestep = q.timestep;
    r.prompt = q.cond.prompt;
    r.seed = q.cond.seed;
    r.tensors = {q.z_t.cast<float>(), q.noise.cast<float>()};
    return call("/predict_noise", r, q.z_t);
  }

  Image<double> denoise(const Image<double>& image, double noise_level, const Conditioning& cond) override {
    wire::Request r;
    r.noise_level = noise_level;
    r.prompt = cond.prompt;
    r.seed = cond.seed;
    r.tensors = {image.cast<float>()};
    return call("/denoise", r, image);
  }

 private:
  Image<double> call(const char* path, const wire::Request& r, const Image<double>& like) {
    auto res = client_.Post(path, wire::encode_request(r), "application/octet-stream");
    if (!res) throw TransportError(std::string(path) + ": " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw TransportError(std::string(path) + " returned HTTP " + std::to_string(res->status) + ": " + res->body);
    const auto tensors = wire::decode_response(res->body);
    if (tensors.size() != 1) throw TransportError(std::string(path) + ": expected one tensor in the response");
    const auto& t = tensors.front();
    if (t.height != like.height || t.width != like.width || t.channels != like.channels)
      throw TransportError(std::string(path) + ": dimension mismatch in the response");
    auto out = t.cast<double>();
    detail::require_finite(out, "remote provider returned non-finite values");
    return out;
  }

  httplib::Client client_;
};

/// Serves a provider over the wire protocol on 127.0.0.1; used for fixtures and local bridges.
/// Requests reach the provider with no camera in the conditioning.
class ProviderServer {
 public:
  explicit ProviderServer(GuidanceProvider& provider, const std::string& host = "127.0.0.1", int port = 0)
      : provider_(provider) {
    server_.Get("/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(std::string(wire::kProtocolVersion), "text/plain");
    });
    server_.Post("/predict_noise", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [this](const wire::Request& r) {
        if (r.tensors.size() != 2 || !r.tensors[0].same_shape(r.tensors[1]))
          throw TransportError("predict_noise needs two tensors of equal shape");
        NoiseQuery q;
        q.z_t = r.tensors[0].cast<double>();
        q.noise = r.tensors[1].cast<double>();
        q.timestep = r.timestep;
        q.alpha_bar = cosine_alpha_bar(r.timestep);
        q.cond = {r.prompt, r.seed, std::nullopt};
        return provider_.predict_noise(q);
      });
    });
    server_.Post("/denoise", [this](const httplib::Request& req, httplib::Response& res) {
      handle(req, res, [this](const wire::Request& r) {
        if (r.tensors.size() != 1) throw TransportError("denoise needs one tensor");
        return provider_.denoise(r.tensors[0].cast<double>(), r.noise_level, {r.prompt, r.seed, std::nullopt});
      });
    });
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ <= 0) throw TransportError("could not bind provider server", false);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~ProviderServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  ProviderServer(const ProviderServer&) = delete;
  ProviderServer& operator=(const ProviderServer&) = delete;

  int port() const { return port_; }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  template <typename Fn>
  static void handle(const httplib::Request& req, httplib::Response& res, Fn&& fn) {
    try {
      const auto out = fn(wire::decode_request(req.body));
      res.set_content(wire::encode_response({out.template cast<float>()}), "application/octet-stream");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(e.what(), "text/plain");
    }
  }

  GuidanceProvider& provider_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace pyrtri
