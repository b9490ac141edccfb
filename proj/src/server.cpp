#include "cscnn/server.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <mutex>
#include <stdexcept>

namespace cscnn {

namespace {

std::string format_ctr(double value) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", value);
  return buf;
}

bool parse_u64(const std::string& s, uint64_t& out) {
  if (s.empty()) return false;
  out = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
    out = out * 10 + static_cast<uint64_t>(c - '0');
  }
  return true;
}

}  // namespace

std::string ServeModel::handle(const std::string& line) const {
  auto tab = line.find('\t');
  std::string id_part = line.substr(0, tab);
  uint64_t ad_id;
  if (!parse_u64(id_part, ad_id)) return "error\tbad ad id '" + id_part + "'";

  std::vector<std::vector<int>> lists(dcn.cfg.feature_vocabs.size());
  if (tab != std::string::npos) {
    std::string feats = line.substr(tab + 1);
    size_t start = 0;
    while (start <= feats.size() && !feats.empty()) {
      size_t end = feats.find(',', start);
      std::string item = feats.substr(start, end == std::string::npos ? std::string::npos : end - start);
      if (!item.empty()) {
        auto colon = item.find(':');
        if (colon == std::string::npos) return "error\tbad feature pair '" + item + "'";
        uint64_t f, v;
        if (!parse_u64(item.substr(0, colon), f) || !parse_u64(item.substr(colon + 1), v))
          return "error\tbad feature pair '" + item + "'";
        if (f >= lists.size()) return "error\tunknown feature " + std::to_string(f);
        lists[static_cast<size_t>(f)].push_back(static_cast<int>(v));
      }
      if (end == std::string::npos) break;
      start = end + 1;
    }
  }
  for (auto& l : lists)
    if (l.empty()) l.push_back(0);

  const float* xv = table.find(ad_id);
  bool cold = xv == nullptr;
  try {
    NoGradGuard guard;
    Tensor<float> visual =
        cold ? Tensor<float>::zeros({dcn.cfg.visual_dim})
             : Tensor<float>({dcn.cfg.visual_dim}, std::vector<float>(xv, xv + dcn.cfg.visual_dim));
    Tensor<float> xnv = dcn.embedding.embed(lists);
    double ctr = static_cast<double>(dcn.forward(visual, xnv).at(0));
    std::string response = "ctr\t" + format_ctr(ctr);
    if (cold) response += "\tcold";
    return response;
  } catch (const std::exception& e) {
    return std::string("error\t") + e.what();
  }
}

int Server::start(int port) {
  if (running_.load()) throw std::runtime_error("server: already running");
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw std::runtime_error("server: socket() failed");
  int opt = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &opt, sizeof(opt));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<uint16_t>(port));
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw std::runtime_error("server: bind failed on port " + std::to_string(port));
  }
  if (::listen(listen_fd_, 64) != 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
    throw std::runtime_error("server: listen failed");
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);

  running_.store(true);
  accept_thread_ = std::thread([this] { accept_loop(); });
  return static_cast<int>(ntohs(addr.sin_port));
}

void Server::accept_loop() {
  while (running_.load()) {
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) break;
    int opt = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &opt, sizeof(opt));
    workers_.emplace_back([this, fd] {
      std::string pending;
      char buf[4096];
      while (running_.load()) {
        ssize_t n = ::read(fd, buf, sizeof(buf));
        if (n <= 0) break;
        pending.append(buf, static_cast<size_t>(n));
        size_t nl;
        while ((nl = pending.find('\n')) != std::string::npos) {
          std::string line = pending.substr(0, nl);
          if (!line.empty() && line.back() == '\r') line.pop_back();
          pending.erase(0, nl + 1);
          std::string response = model_.handle(line) + "\n";
          size_t sent = 0;
          while (sent < response.size()) {
            ssize_t w = ::write(fd, response.data() + sent, response.size() - sent);
            if (w <= 0) break;
            sent += static_cast<size_t>(w);
          }
        }
      }
      ::close(fd);
    });
  }
}

void Server::stop() {
  if (!running_.exchange(false)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  listen_fd_ = -1;
  if (accept_thread_.joinable()) accept_thread_.join();
  for (auto& w : workers_)
    if (w.joinable()) w.join();
  workers_.clear();
}

double LatencyStats::percentile(double p) const {
  if (micros.empty()) return 0.0;
  std::vector<double> sorted = micros;
  std::sort(sorted.begin(), sorted.end());
  size_t rank = static_cast<size_t>(
      std::ceil(p / 100.0 * static_cast<double>(sorted.size())));
  if (rank == 0) rank = 1;
  return sorted[std::min(rank - 1, sorted.size() - 1)];
}

namespace {

int connect_to(const std::string& host, int port) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw std::runtime_error("bench: socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw std::runtime_error("bench: bad host " + host);
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    throw std::runtime_error("bench: connection refused at " + host + ":" + std::to_string(port));
  }
  int opt = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &opt, sizeof(opt));
  return fd;
}

std::string request_response(int fd, const std::string& request, std::string& pending) {
  std::string line = request + "\n";
  size_t sent = 0;
  while (sent < line.size()) {
    ssize_t w = ::write(fd, line.data() + sent, line.size() - sent);
    if (w <= 0) throw std::runtime_error("bench: write failed");
    sent += static_cast<size_t>(w);
  }
  char buf[4096];
  size_t nl;
  while ((nl = pending.find('\n')) == std::string::npos) {
    ssize_t n = ::read(fd, buf, sizeof(buf));
    if (n <= 0) throw std::runtime_error("bench: connection closed mid-response");
    pending.append(buf, static_cast<size_t>(n));
  }
  std::string response = pending.substr(0, nl);
  pending.erase(0, nl + 1);
  return response;
}

}  // namespace

LatencyStats bench(const std::string& host, int port, const std::vector<std::string>& requests,
                   int concurrency) {
  if (concurrency < 1) throw std::invalid_argument("bench: concurrency must be >= 1");
  LatencyStats stats;
  stats.micros.assign(requests.size(), 0.0);
  stats.responses.assign(requests.size(), "");

  auto wall_start = std::chrono::steady_clock::now();
  std::vector<std::thread> threads;
  std::mutex error_mutex;
  std::string error;
  for (int t = 0; t < concurrency; ++t) {
    threads.emplace_back([&, t] {
      try {
        int fd = connect_to(host, port);
        std::string pending;
        for (size_t i = static_cast<size_t>(t); i < requests.size();
             i += static_cast<size_t>(concurrency)) {
          auto begin = std::chrono::steady_clock::now();
          stats.responses[i] = request_response(fd, requests[i], pending);
          auto end = std::chrono::steady_clock::now();
          stats.micros[i] =
              std::chrono::duration_cast<std::chrono::nanoseconds>(end - begin).count() / 1e3;
        }
        ::close(fd);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (error.empty()) error = e.what();
      }
    });
  }
  for (auto& th : threads) th.join();
  if (!error.empty()) throw std::runtime_error(error);
  stats.elapsed_seconds =
      std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() -
                                                           wall_start)
          .count() /
      1e9;
  if (!stats.micros.empty()) stats.first_request_micros = stats.micros.front();
  return stats;
}

}  // namespace cscnn
