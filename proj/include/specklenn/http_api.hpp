#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>

// Eigen must come first: httplib pulls in <resolv.h>, whose _res macro breaks
// Eigen's product kernels.
#include "specklenn/png.hpp"
#include "specklenn/service.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace specklenn {

inline nlohmann::json to_json(const FrameRecord& f) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : f.history) history.push_back({{"label", h.label}, {"previous", h.previous}, {"at_ms", h.at_ms}});
  nlohmann::json j{{"frame_id", f.frame_id},
                   {"state", to_string(f.state)},
                   {"pinned", f.pinned},
                   {"received_ms", f.received_ms},
                   {"updated_ms", f.updated_ms},
                   {"label_history", history}};
  j["label"] = f.label ? nlohmann::json(*f.label) : nlohmann::json(nullptr);
  j["result"] = f.result ? to_json(*f.result) : nlohmann::json(nullptr);
  return j;
}

/// HTTP front end of a Service. Routes live under /api; every response body is
/// JSON except the frame preview (PNG) and the event stream (SSE).
class HttpApi {
 public:
  explicit HttpApi(Service& service) : service_(service) { routes(); }
  ~HttpApi() { stop(); }

  HttpApi(const HttpApi&) = delete;
  HttpApi& operator=(const HttpApi&) = delete;

  /// Binds and serves on a background thread. Port 0 picks a free port.
  int start(const std::string& host, int port) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    port_ = bound;
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  /// Serves on the calling thread until stop() is called.
  void run(const std::string& host, int port) {
    if (!server_.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    service_.stop_streams();
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  httplib::Server& server() { return server_; }

 private:
  static void reply(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static nlohmann::json body_of(const httplib::Request& req) {
    auto j = nlohmann::json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw ServiceError(400, "request body must be a JSON object");
    return j;
  }

  static std::uint64_t frame_id_of(const nlohmann::json& j) {
    if (!j.contains("frame_id") || !j["frame_id"].is_number_integer() || j["frame_id"].get<std::int64_t>() < 0) {
      throw ServiceError(400, "frame_id must be a non-negative integer");
    }
    return j["frame_id"].get<std::uint64_t>();
  }

  template <class F>
  httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const ServiceError& e) {
        reply(res, e.status, {{"error", e.what()}});
      } catch (const nlohmann::json::exception& e) {
        reply(res, 400, {{"error", e.what()}});
      } catch (const std::invalid_argument& e) {
        reply(res, 400, {{"error", e.what()}});
      } catch (const std::exception& e) {
        reply(res, 500, {{"error", e.what()}});
      }
    };
  }

  void routes() {
    server_.Get("/api/frames", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::optional<FrameState> state;
      if (req.has_param("state")) {
        try {
          state = parse_frame_state(req.get_param_value("state"));
        } catch (const std::invalid_argument& e) {
          throw ServiceError(400, e.what());
        }
      }
      nlohmann::json out = nlohmann::json::array();
      for (const auto& f : service_.frames(state)) out.push_back(to_json(f));
      reply(res, 200, out);
    }));

    server_.Get(R"(/api/frames/(\d+)/image)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const FrameRecord f = service_.frame(std::stoull(req.matches[1].str()));
      const std::size_t S = service_.config().frame_size;
      res.set_content(encode_png_gray8(log_preview(*f.pixels), S, S), "image/png");
    }));

    server_.Post("/api/frames", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto j = body_of(req);
      auto pixels = j.at("pixels").get<std::vector<float>>();
      std::vector<std::uint8_t> mask;
      if (j.contains("mask")) mask = j["mask"].get<std::vector<std::uint8_t>>();
      reply(res, 201, {{"frame_id", service_.add_frame(std::move(pixels), std::move(mask))}});
    }));

    server_.Post("/api/labels", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto j = body_of(req);
      if (!j.contains("label") || !j["label"].is_string()) throw ServiceError(400, "label must be a string");
      const LabelAck ack = service_.label(frame_id_of(j), j["label"].get<std::string>());
      reply(res, 200,
            {{"frame_id", ack.frame_id},
             {"label", ack.label},
             {"previous", ack.previous.empty() ? nlohmann::json(nullptr) : nlohmann::json(ack.previous)},
             {"retrain_triggered", ack.retrain_triggered},
             {"label_counts", ack.label_counts}});
    }));

    server_.Get("/api/supports", guarded([this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, service_.supports_json());
    }));

    server_.Post("/api/supports/pin", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto j = body_of(req);
      const bool pinned = j.value("pinned", true);
      service_.pin(frame_id_of(j), pinned);
      reply(res, 200, service_.supports_json());
    }));

    server_.Post("/api/classify", guarded([this](const httplib::Request& req, httplib::Response& res) {
      reply(res, 200, to_json(service_.classify(frame_id_of(body_of(req)))));
    }));

    server_.Post("/api/retrain", guarded([this](const httplib::Request&, httplib::Response& res) {
      if (service_.retraining()) throw ServiceError(409, "a retrain is already running");
      if (!service_.start_retrain()) throw ServiceError(409, "no labeled frames to train on, or a retrain is running");
      reply(res, 202, {{"started", true}});
    }));

    server_.Get("/api/status", guarded([this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, service_.status());
    }));

    // Server-sent events; ?after=<seq> resumes after a known event.
    server_.Get("/api/stream", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::uint64_t after = 0;
      if (req.has_param("after")) after = std::stoull(req.get_param_value("after"));
      else if (req.has_header("Last-Event-ID")) after = std::stoull(req.get_header_value("Last-Event-ID"));
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider("text/event-stream", [this, after](std::size_t, httplib::DataSink& sink) mutable {
        if (stopped()) {
          sink.done();
          return true;
        }
        const auto events = service_.classifications_since(after, std::chrono::milliseconds(250));
        for (const auto& e : events) {
          const std::string msg = "id: " + std::to_string(e.seq) + "\nevent: classification\ndata: " +
                                  to_json(e).dump() + "\n\n";
          if (!sink.write(msg.data(), msg.size())) return false;
          after = e.seq;
        }
        if (!events.empty()) return true;
        if (!sink.is_writable()) return false;
        const std::string ping = ": keep-alive\n\n";
        return sink.write(ping.data(), ping.size());
      });
    }));
  }

  bool stopped() const { return !server_.is_running(); }

  Service& service_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace specklenn
