#include "relux/wire.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstring>

#include "relux/errors.hpp"
#include "relux/model_io.hpp"

namespace relux {

namespace {

constexpr std::size_t kMaxLine = std::size_t{1} << 24;

std::string errno_text() { return std::strerror(errno); }

bool send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

enum class ReadStatus { line, closed, too_long };

/// Pulls bytes into `buffer` until it holds a full line, which is moved into
/// `line` (without the terminator).
ReadStatus read_line(int fd, std::string& buffer, std::string& line) {
  for (;;) {
    const auto pos = buffer.find('\n');
    if (pos != std::string::npos) {
      line.assign(buffer, 0, pos);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      buffer.erase(0, pos + 1);
      return ReadStatus::line;
    }
    if (buffer.size() > kMaxLine) return ReadStatus::too_long;
    char chunk[65536];
    const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return ReadStatus::closed;
    buffer.append(chunk, static_cast<std::size_t>(n));
  }
}

addrinfo* resolve(const Endpoint& ep, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(ep.port);
  const int rc = ::getaddrinfo(ep.host.empty() ? nullptr : ep.host.c_str(), port.c_str(), &hints, &res);
  if (rc != 0) throw OracleError("cannot resolve " + ep.str() + ": " + ::gai_strerror(rc));
  return res;
}

}  // namespace

Endpoint Endpoint::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos) throw InvalidArgument("endpoint must be host:port");
  Endpoint ep;
  ep.host = std::string(text.substr(0, colon));
  if (ep.host.size() >= 2 && ep.host.front() == '[' && ep.host.back() == ']')
    ep.host = ep.host.substr(1, ep.host.size() - 2);
  const auto port_text = text.substr(colon + 1);
  unsigned value = 0;
  auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), value);
  if (ec != std::errc() || ptr != port_text.data() + port_text.size() || value > 65535)
    throw InvalidArgument("bad port in endpoint '" + std::string(text) + "'");
  ep.port = static_cast<std::uint16_t>(value);
  return ep;
}

std::string encode_query(const Vector& x) { return "Q " + format_hex_list(x); }
std::string encode_answer(const Vector& logits) { return "A " + format_hex_list(logits); }

std::string encode_error(std::string_view message) {
  std::string m(message);
  std::replace(m.begin(), m.end(), '\n', ' ');
  return "E " + m;
}

std::string answer_request(const TwoLayerNet& net, std::string_view request) {
  try {
    if (request.size() < 2 || request[0] != 'Q' || request[1] != ' ')
      return encode_error("malformed request: expected 'Q <values>'");
    const auto values = parse_hex_list(request.substr(2));
    if (values.size() != net.d())
      return encode_error("dimension mismatch: expected " + std::to_string(net.d()) + " values, got " +
                          std::to_string(values.size()));
    const Vector x = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
    return encode_answer(net.forward_logits(x));
  } catch (const Error& e) {
    return encode_error(e.what());
  }
}

Vector decode_answer(std::string_view response) {
  if (response.size() >= 1 && response[0] == 'E')
    throw OracleError("oracle error: " + std::string(response.size() > 2 ? response.substr(2) : ""));
  if (response.size() < 2 || response[0] != 'A' || response[1] != ' ')
    throw FormatError("malformed oracle response");
  const auto values = parse_hex_list(response.substr(2));
  if (values.empty()) throw FormatError("oracle response carries no logits");
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

OracleServer::OracleServer(TwoLayerNet net, const Endpoint& listen)
    : net_(std::make_shared<const TwoLayerNet>(std::move(net))), bound_(listen) {
  addrinfo* res = resolve(listen, true);
  std::string last_error = "no addresses";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 64) == 0) {
      listen_fd_ = fd;
      break;
    }
    last_error = errno_text();
    ::close(fd);
  }
  ::freeaddrinfo(res);
  if (listen_fd_ < 0) throw OracleError("cannot bind " + listen.str() + ": " + last_error);

  sockaddr_storage addr{};
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  if (addr.ss_family == AF_INET)
    bound_.port = ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
  else if (addr.ss_family == AF_INET6)
    bound_.port = ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port);

  acceptor_ = std::thread([this] { accept_loop(); });
}

OracleServer::~OracleServer() { stop(); }

void OracleServer::accept_loop() {
  while (!stopping_.load()) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      if (stopping_.load()) break;
      continue;
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    std::lock_guard lock(clients_mu_);
    if (stopping_.load()) {
      ::close(fd);
      break;
    }
    client_fds_.push_back(fd);
    client_threads_.emplace_back([this, fd] { serve_client(fd); });
  }
}

void OracleServer::serve_client(int fd) {
  std::string buffer, line;
  for (;;) {
    const auto status = read_line(fd, buffer, line);
    if (status == ReadStatus::too_long) {
      send_all(fd, encode_error("request line too long; closing connection") + "\n");
      break;
    }
    if (status == ReadStatus::closed) break;
    if (line.empty()) continue;
    const std::string reply = answer_request(*net_, line) + "\n";
    served_.fetch_add(1);
    if (!send_all(fd, reply)) break;
  }
  std::lock_guard lock(clients_mu_);
  auto it = std::find(client_fds_.begin(), client_fds_.end(), fd);
  if (it != client_fds_.end()) {
    client_fds_.erase(it);
    ::close(fd);
  }
}

void OracleServer::stop() {
  std::lock_guard stop_lock(stop_mu_);
  stopping_.store(true);
  if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
  if (acceptor_.joinable()) acceptor_.join();
  if (listen_fd_ >= 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  std::vector<std::thread> threads;
  {
    std::lock_guard lock(clients_mu_);
    for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
    threads.swap(client_threads_);
  }
  for (auto& t : threads)
    if (t.joinable()) t.join();
  stopping_.notify_all();
}

void OracleServer::wait() { stopping_.wait(false); }

std::unique_ptr<OracleServer> serve(TwoLayerNet net, const Endpoint& listen) {
  return std::make_unique<OracleServer>(std::move(net), listen);
}

WireBackend::WireBackend(const Endpoint& endpoint) : endpoint_(endpoint) {
  addrinfo* res = resolve(endpoint, false);
  std::string last_error = "no addresses";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
      fd_ = fd;
      break;
    }
    last_error = errno_text();
    ::close(fd);
  }
  ::freeaddrinfo(res);
  if (fd_ < 0) throw OracleError("cannot connect to " + endpoint.str() + ": " + last_error);
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

WireBackend::~WireBackend() {
  if (fd_ >= 0) ::close(fd_);
}

std::string WireBackend::round_trip_locked(std::string_view line) {
  if (fd_ < 0) throw OracleError("connection to " + endpoint_.str() + " is closed");
  std::string msg(line);
  msg.push_back('\n');
  if (!send_all(fd_, msg)) throw OracleError("send to " + endpoint_.str() + " failed: " + errno_text());
  std::string reply;
  if (read_line(fd_, buffer_, reply) != ReadStatus::line)
    throw OracleError("connection to " + endpoint_.str() + " closed while awaiting reply");
  return reply;
}

std::string WireBackend::round_trip(std::string_view line) {
  std::lock_guard lock(mu_);
  return round_trip_locked(line);
}

Vector WireBackend::evaluate(const Vector& x) {
  std::lock_guard lock(mu_);
  Vector y = decode_answer(round_trip_locked(encode_query(x)));
  if (output_dim_ && static_cast<std::size_t>(y.size()) != *output_dim_)
    throw FormatError("oracle response length changed between queries");
  output_dim_ = static_cast<std::size_t>(y.size());
  return y;
}

OracleHandle connect(const Endpoint& endpoint, std::optional<std::size_t> input_dim) {
  OracleHandle h(std::make_shared<WireBackend>(endpoint));
  if (input_dim) h.set_input_dim(*input_dim);
  return h;
}

OracleHandle open_oracle(std::string_view spec, std::optional<std::size_t> input_dim) {
  if (spec.rfind("local:", 0) == 0) {
    OracleHandle h = OracleHandle::local(load_model(std::string(spec.substr(6))));
    if (input_dim) h.set_input_dim(*input_dim);
    return h;
  }
  if (spec.rfind("tcp:", 0) == 0) return connect(Endpoint::parse(spec.substr(4)), input_dim);
  throw InvalidArgument("oracle spec must be local:<model-file> or tcp:<host:port>");
}

}  // namespace relux
