#pragma once

// Line-protocol CTR server over the exported lookup table: request
// `ad_id<TAB>feat:val,feat:val,...`, response `ctr<TAB>value` with a trailing
// `cold` field when the ad is not covered (zero visual-feature fallback).
// The CNN is never touched at serve time.

#include <atomic>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "cscnn/lookup.hpp"
#include "cscnn/models.hpp"

namespace cscnn {

struct ServeModel {
  LookupTable table;
  DcnModel<float> dcn;

  // One request line in, one response line out (no trailing newline).
  // Malformed input yields `error<TAB>message`; the connection stays usable.
  std::string handle(const std::string& line) const;
};

class Server {
 public:
  explicit Server(ServeModel model) : model_(std::move(model)) {}
  ~Server() { stop(); }

  // Binds and starts accepting in the background; port 0 picks a free port.
  // Returns the bound port.
  int start(int port);
  void stop();

  const ServeModel& model() const { return model_; }

 private:
  void accept_loop();

  ServeModel model_;
  int listen_fd_ = -1;
  std::atomic<bool> running_{false};
  std::thread accept_thread_;
  std::vector<std::thread> workers_;
};

struct LatencyStats {
  std::vector<double> micros;          // per request, send-to-response
  std::vector<std::string> responses;  // aligned with the request list
  double elapsed_seconds = 0.0;
  double first_request_micros = 0.0;

  double percentile(double p) const;  // nearest rank
  double p50() const { return percentile(50.0); }
  double p99() const { return percentile(99.0); }
  double throughput() const {
    return elapsed_seconds > 0 ? static_cast<double>(micros.size()) / elapsed_seconds : 0.0;
  }
};

// Drives `requests` against a running server, split across `concurrency`
// connections. Reports latency only; makes no pass/fail judgment.
LatencyStats bench(const std::string& host, int port, const std::vector<std::string>& requests,
                   int concurrency);

}  // namespace cscnn
