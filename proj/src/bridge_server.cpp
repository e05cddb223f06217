#include "bimap/bridge.hpp"

#include "bimap/errors.hpp"

#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/signal_set.hpp>
#include <boost/asio/steady_timer.hpp>
#include <boost/asio/strand.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <chrono>
#include <deque>
#include <filesystem>
#include <fstream>
#include <optional>
#include <thread>

namespace bimap {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

std::pair<std::string, unsigned short> parse_address(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == addr.size()) {
    throw ValidationError("address must look like host:port, got '" + addr + "'");
  }
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(addr.substr(colon + 1), &used);
    if (used != addr.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ValidationError("invalid port in '" + addr + "'");
  }
  if (port < 0 || port > 65535) throw ValidationError("port out of range in '" + addr + "'");
  return {addr.substr(0, colon), static_cast<unsigned short>(port)};
}

namespace {

double wall_now() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

constexpr std::size_t kMaxOutbox = 16;

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket&& socket, std::shared_ptr<MapRegistry> registry, const BridgeOptions& options)
      : ws_(std::move(socket)),
        timer_(ws_.get_executor()),
        session_(std::move(registry), options),
        period_(std::chrono::duration_cast<std::chrono::steady_clock::duration>(
            std::chrono::duration<double>(1.0 / options.tick_hz))) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    next_tick_ = std::chrono::steady_clock::now() + period_;
    schedule_tick();
    read();
  }

  void read() { ws_.async_read(buffer_, beast::bind_front_handler(&WsSession::on_read, shared_from_this())); }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      close();
      return;
    }
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    for (const auto& frame : session_.handle(text, wall_now())) send(frame.dump());
    read();
  }

  void schedule_tick() {
    timer_.expires_at(next_tick_);
    timer_.async_wait(beast::bind_front_handler(&WsSession::on_tick, shared_from_this()));
  }

  void on_tick(beast::error_code ec) {
    if (ec || closed_) return;
    for (const auto& frame : session_.tick(wall_now())) send(frame.dump());
    next_tick_ += period_;
    const auto now = std::chrono::steady_clock::now();
    if (next_tick_ < now) next_tick_ = now + period_;
    schedule_tick();
  }

  // Bounded outbox: when the client cannot keep up the oldest queued frames
  // (never the one being written) are discarded.
  void send(std::string text) {
    if (closed_) return;
    if (outbox_.size() >= kMaxOutbox) outbox_.erase(outbox_.begin() + (writing_ ? 1 : 0));
    outbox_.push_back(std::move(text));
    if (!writing_) write_next();
  }

  void write_next() {
    writing_ = true;
    ws_.text(true);
    ws_.async_write(net::buffer(outbox_.front()), beast::bind_front_handler(&WsSession::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t) {
    outbox_.pop_front();
    writing_ = false;
    if (ec) {
      close();
      return;
    }
    if (!outbox_.empty()) write_next();
  }

  void close() {
    closed_ = true;
    timer_.cancel();
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  net::steady_timer timer_;
  BridgeSession session_;
  std::chrono::steady_clock::duration period_;
  std::chrono::steady_clock::time_point next_tick_;
  std::deque<std::string> outbox_;
  bool writing_ = false;
  bool closed_ = false;
};

std::string mime_type(const std::filesystem::path& p) {
  const std::string ext = p.extension().string();
  if (ext == ".html" || ext == ".htm") return "text/html";
  if (ext == ".js" || ext == ".mjs") return "application/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json") return "application/json";
  if (ext == ".csv") return "text/csv";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".wasm") return "application/wasm";
  return "application/octet-stream";
}

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, std::shared_ptr<MapRegistry> registry, const ServerOptions& options)
      : stream_(std::move(socket)), registry_(std::move(registry)), options_(options) {}

  void run() { read(); }

 private:
  void read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      beast::error_code ignored;
      stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
      return;
    }
    if (websocket::is_upgrade(req_)) {
      stream_.expires_never();
      std::make_shared<WsSession>(stream_.release_socket(), registry_, options_.bridge)->run(std::move(req_));
      return;
    }
    respond();
  }

  void respond() {
    namespace fs = std::filesystem;
    auto res = std::make_shared<http::response<http::string_body>>();
    res->version(req_.version());
    res->keep_alive(req_.keep_alive());
    res->set(http::field::server, "bimap-bridge");
    auto fail = [&](http::status status, const std::string& body) {
      res->result(status);
      res->set(http::field::content_type, "text/plain");
      res->body() = body;
    };
    std::string target(req_.target());
    if (auto q = target.find('?'); q != std::string::npos) target.resize(q);
    if (req_.method() != http::verb::get && req_.method() != http::verb::head) {
      fail(http::status::method_not_allowed, "only GET is supported\n");
    } else if (options_.static_dir.empty()) {
      fail(http::status::not_found, "no static directory configured\n");
    } else if (target.empty() || target[0] != '/' || target.find("..") != std::string::npos) {
      fail(http::status::bad_request, "illegal path\n");
    } else {
      fs::path path = fs::path(options_.static_dir) / target.substr(1);
      if (target.back() == '/') path /= "index.html";
      std::ifstream in(path, std::ios::binary);
      if (!fs::is_regular_file(path) || !in) {
        fail(http::status::not_found, "not found\n");
      } else {
        res->result(http::status::ok);
        res->set(http::field::content_type, mime_type(path));
        res->body().assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
      }
    }
    if (req_.method() == http::verb::head) {
      res->content_length(res->body().size());
      res->body().clear();
    }
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
      if (ec || !res->keep_alive()) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->read();
    });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  std::shared_ptr<MapRegistry> registry_;
  const ServerOptions& options_;
};

}  // namespace

struct BridgeServer::Impl {
  std::shared_ptr<MapRegistry> registry;
  ServerOptions options;
  net::io_context ioc;
  tcp::acceptor acceptor{net::make_strand(ioc)};
  std::vector<std::thread> threads;
  std::optional<net::signal_set> signals;

  void accept() {
    acceptor.async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (!ec) std::make_shared<HttpSession>(std::move(socket), registry, options)->run();
      if (acceptor.is_open()) accept();
    });
  }
};

BridgeServer::BridgeServer(std::shared_ptr<MapRegistry> registry, ServerOptions options)
    : impl_(std::make_unique<Impl>()) {
  if (options.threads < 1) throw ValidationError("server needs at least one thread");
  BridgeSession probe(registry, options.bridge);  // validates the bridge options
  impl_->registry = std::move(registry);
  impl_->options = std::move(options);
}

BridgeServer::~BridgeServer() { stop(); }

unsigned short BridgeServer::start() {
  auto& im = *impl_;
  beast::error_code ec;
  const auto address = net::ip::make_address(im.options.address, ec);
  if (ec) throw ValidationError("invalid bind address '" + im.options.address + "'");
  const tcp::endpoint endpoint(address, im.options.port);
  im.acceptor.open(endpoint.protocol(), ec);
  if (!ec) im.acceptor.set_option(net::socket_base::reuse_address(true), ec);
  if (!ec) im.acceptor.bind(endpoint, ec);
  if (!ec) im.acceptor.listen(net::socket_base::max_listen_connections, ec);
  if (ec) throw IoError("cannot listen on " + im.options.address + ":" + std::to_string(im.options.port) + ": " +
                        ec.message());
  im.accept();
  for (int i = 0; i < im.options.threads; ++i) im.threads.emplace_back([&im] { im.ioc.run(); });
  return im.acceptor.local_endpoint().port();
}

void BridgeServer::wait() {
  auto& im = *impl_;
  im.signals.emplace(im.ioc, SIGINT, SIGTERM);
  im.signals->async_wait([this](beast::error_code, int) { impl_->ioc.stop(); });
  for (auto& t : im.threads) {
    if (t.joinable()) t.join();
  }
}

void BridgeServer::stop() {
  if (!impl_) return;
  impl_->ioc.stop();
  for (auto& t : impl_->threads) {
    if (t.joinable()) t.join();
  }
  impl_->threads.clear();
}

}  // namespace bimap
