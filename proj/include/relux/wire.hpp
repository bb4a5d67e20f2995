#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "relux/net.hpp"
#include "relux/oracle.hpp"

namespace relux {

/// host:port pair. Port 0 asks the server for an ephemeral port.
struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  static Endpoint parse(std::string_view text);
  std::string str() const { return host + ":" + std::to_string(port); }
};

// Line protocol, one message per '\n'-terminated line:
//   request   Q <d hex floats>
//   response  A <K hex floats>   |   E <message>

std::string encode_query(const Vector& x);
std::string encode_answer(const Vector& logits);
std::string encode_error(std::string_view message);

/// Builds the response line (without newline) for one request line.
std::string answer_request(const TwoLayerNet& net, std::string_view request);

/// Parses a response line. `E` lines raise OracleError, anything malformed
/// raises FormatError.
Vector decode_answer(std::string_view response);

/// Serves a network's logits over TCP until stopped or destroyed. Each
/// connection gets its own thread; the network is immutable so clients never
/// interfere with one another.
class OracleServer {
 public:
  OracleServer(TwoLayerNet net, const Endpoint& listen);
  ~OracleServer();
  OracleServer(const OracleServer&) = delete;
  OracleServer& operator=(const OracleServer&) = delete;

  /// Actual bound endpoint (resolves port 0).
  Endpoint endpoint() const { return bound_; }
  std::uint64_t requests_served() const { return served_.load(); }

  void stop();
  /// Blocks until stop() is called from another thread.
  void wait();

 private:
  void accept_loop();
  void serve_client(int fd);

  std::shared_ptr<const TwoLayerNet> net_;
  Endpoint bound_;
  int listen_fd_ = -1;
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> served_{0};
  std::thread acceptor_;
  std::mutex stop_mu_;
  std::mutex clients_mu_;
  std::vector<int> client_fds_;
  std::vector<std::thread> client_threads_;
};

std::unique_ptr<OracleServer> serve(TwoLayerNet net, const Endpoint& listen);

/// Client side of the line protocol. Requests on one connection are
/// serialised with a mutex so the backend can be shared across threads.
class WireBackend final : public OracleBackend {
 public:
  explicit WireBackend(const Endpoint& endpoint);
  ~WireBackend() override;
  WireBackend(const WireBackend&) = delete;
  WireBackend& operator=(const WireBackend&) = delete;

  Vector evaluate(const Vector& x) override;
  std::optional<std::size_t> input_dim() const override { return std::nullopt; }
  std::string describe() const override { return "tcp:" + endpoint_.str(); }

  /// Sends a raw line and returns the raw response line (protocol testing).
  std::string round_trip(std::string_view line);

 private:
  std::string round_trip_locked(std::string_view line);

  Endpoint endpoint_;
  int fd_ = -1;
  std::mutex mu_;
  std::string buffer_;
  std::optional<std::size_t> output_dim_;
};

/// Connects to a served oracle. `input_dim`, when given, enables local
/// dimension checks before anything is sent.
OracleHandle connect(const Endpoint& endpoint, std::optional<std::size_t> input_dim = std::nullopt);

/// Opens an oracle from a spec string: "local:<model-file>" or "tcp:<host:port>".
OracleHandle open_oracle(std::string_view spec, std::optional<std::size_t> input_dim = std::nullopt);

}  // namespace relux
