#include "weldloop/link.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>
#include <zlib.h>

#include <cerrno>
#include <chrono>
#include <cstring>

namespace weldloop::link {
namespace {

void le_put16(std::vector<std::uint8_t>& v, std::uint16_t x) {
  v.push_back(static_cast<std::uint8_t>(x & 0xff));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
}

void le_put32(std::vector<std::uint8_t>& v, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) v.push_back(static_cast<std::uint8_t>((x >> (8 * i)) & 0xff));
}

void le_put_f32(std::vector<std::uint8_t>& v, float x) {
  std::uint32_t bits;
  std::memcpy(&bits, &x, 4);
  le_put32(v, bits);
}

std::uint16_t le_get16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

std::uint32_t le_get32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float le_get_f32(const std::uint8_t* p) {
  const std::uint32_t bits = le_get32(p);
  float x;
  std::memcpy(&x, &bits, 4);
  return x;
}

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

bool valid_type(std::uint8_t t) { return t >= 1 && t <= 4; }

}  // namespace

std::vector<std::uint8_t> encode_frame(const Frame& f) {
  if (f.payload.size() > kMaxPayload) throw std::invalid_argument("frame payload oversize");
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderSize + f.payload.size() + 4);
  out.push_back(kMagic0);
  out.push_back(kMagic1);
  out.push_back(static_cast<std::uint8_t>(f.type));
  le_put32(out, f.seq);
  le_put32(out, static_cast<std::uint32_t>(f.payload.size()));
  out.insert(out.end(), f.payload.begin(), f.payload.end());
  le_put32(out, crc_of(out.data(), out.size()));
  return out;
}

void FrameDecoder::feed(const std::uint8_t* data, std::size_t n) {
  if (fatal_) return;
  buf_.insert(buf_.end(), data, data + n);
  scan();
}

void FrameDecoder::scan() {
  while (!fatal_) {
    const std::size_t avail = buf_.size() - pos_;
    if (avail < kHeaderSize) break;
    const std::uint8_t* p = buf_.data() + pos_;
    const bool header_ok = p[0] == kMagic0 && p[1] == kMagic1 && valid_type(p[2]);
    if (synced_) {
      if (!header_ok) {
        synced_ = false;
        ++resyncs_;
        continue;  // the desynced branch advances
      }
      const std::uint32_t len = le_get32(p + 7);
      if (len > kMaxPayload) {
        fatal_ = true;
        fatal_reason_ = "oversize payload length";
        break;
      }
      const std::size_t total = kHeaderSize + len + 4;
      if (avail < total) break;
      const std::uint32_t want = le_get32(p + kHeaderSize + len);
      if (crc_of(p, kHeaderSize + len) != want) {
        ++crc_errors_;
        pos_ += total;  // drop exactly this frame, stay in sync
        continue;
      }
      Frame f;
      f.type = static_cast<MsgType>(p[2]);
      f.seq = le_get32(p + 3);
      f.payload.assign(p + kHeaderSize, p + kHeaderSize + len);
      frames_.push_back(std::move(f));
      pos_ += total;
    } else {
      if (!header_ok) {
        ++pos_;
        continue;
      }
      const std::uint32_t len = le_get32(p + 7);
      if (len > kMaxPayload) {
        ++pos_;
        continue;
      }
      const std::size_t total = kHeaderSize + len + 4;
      if (avail < total) break;  // can't judge the candidate yet
      const std::uint32_t want = le_get32(p + kHeaderSize + len);
      if (crc_of(p, kHeaderSize + len) != want) {
        ++pos_;
        continue;
      }
      Frame f;
      f.type = static_cast<MsgType>(p[2]);
      f.seq = le_get32(p + 3);
      f.payload.assign(p + kHeaderSize, p + kHeaderSize + len);
      frames_.push_back(std::move(f));
      pos_ += total;
      synced_ = true;
    }
  }
  if (pos_ == buf_.size() || pos_ > 65536) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
}

std::vector<Frame> FrameDecoder::take_frames() {
  std::vector<Frame> out;
  out.swap(frames_);
  return out;
}

// ---- payloads ----

std::vector<std::uint8_t> encode_control(const ControlPayload& p) {
  std::vector<std::uint8_t> out;
  out.push_back(p.cmd);
  le_put32(out, p.episode_id);
  out.push_back(p.arg);
  return out;
}

ControlPayload decode_control(const std::vector<std::uint8_t>& b) {
  if (b.size() != 6) throw std::invalid_argument("control payload size");
  ControlPayload p;
  p.cmd = b[0];
  if (p.cmd < ControlPayload::kStartEpisode || p.cmd > ControlPayload::kShutdown)
    throw std::invalid_argument("control payload command");
  p.episode_id = le_get32(b.data() + 1);
  p.arg = b[5];
  return p;
}

std::vector<std::uint8_t> encode_epsilons(const EpsilonsPayload& p) {
  if (p.eps.size() > 65535) throw std::invalid_argument("epsilons payload too long");
  std::vector<std::uint8_t> out;
  le_put32(out, p.episode_id);
  le_put16(out, static_cast<std::uint16_t>(p.eps.size()));
  for (float e : p.eps) le_put_f32(out, e);
  return out;
}

EpsilonsPayload decode_epsilons(const std::vector<std::uint8_t>& b) {
  if (b.size() < 6) throw std::invalid_argument("epsilons payload truncated");
  EpsilonsPayload p;
  p.episode_id = le_get32(b.data());
  const std::size_t count = le_get16(b.data() + 4);
  if (b.size() != 6 + 4 * count) throw std::invalid_argument("epsilons payload size");
  p.eps.reserve(count);
  for (std::size_t i = 0; i < count; ++i) p.eps.push_back(le_get_f32(b.data() + 6 + 4 * i));
  return p;
}

std::vector<std::uint8_t> encode_experience(const ExperiencePayload& p) {
  if (p.entries.empty()) throw std::invalid_argument("experience payload needs entries");
  if (p.entries.size() - 1 > 65535) throw std::invalid_argument("experience payload too long");
  std::vector<std::uint8_t> out;
  le_put32(out, p.episode_id);
  le_put16(out, static_cast<std::uint16_t>(p.entries.size() - 1));
  for (const ExpEntry& e : p.entries) {
    le_put_f32(out, e.or_volts);
    le_put_f32(out, e.oe_volts);
    le_put_f32(out, e.action_squashed);
    le_put_f32(out, e.power_watts);
  }
  out.push_back(p.flags);
  return out;
}

ExperiencePayload decode_experience(const std::vector<std::uint8_t>& b) {
  if (b.size() < 7) throw std::invalid_argument("experience payload truncated");
  ExperiencePayload p;
  p.episode_id = le_get32(b.data());
  const std::size_t steps = le_get16(b.data() + 4);
  const std::size_t want = 4 + 2 + 16 * (steps + 1) + 1;
  if (b.size() != want) throw std::invalid_argument("experience payload size");
  p.entries.reserve(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) {
    const std::uint8_t* q = b.data() + 6 + 16 * i;
    ExpEntry e;
    e.or_volts = le_get_f32(q);
    e.oe_volts = le_get_f32(q + 4);
    e.action_squashed = le_get_f32(q + 8);
    e.power_watts = le_get_f32(q + 12);
    p.entries.push_back(e);
  }
  p.flags = b.back();
  return p;
}

// ---- loopback transport ----

namespace {

struct Pipe {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::uint8_t> data;
  bool closed = false;
};

class LoopbackStream : public ByteStream {
 public:
  LoopbackStream(std::shared_ptr<Pipe> rx, std::shared_ptr<Pipe> tx)
      : rx_(std::move(rx)), tx_(std::move(tx)) {}

  int read_some(std::uint8_t* buf, std::size_t cap, int timeout_ms) override {
    std::unique_lock<std::mutex> lk(rx_->mu);
    const auto ready = [&] { return !rx_->data.empty() || rx_->closed; };
    if (timeout_ms < 0) {
      rx_->cv.wait(lk, ready);
    } else if (!rx_->cv.wait_for(lk, std::chrono::milliseconds(timeout_ms), ready)) {
      return -1;
    }
    if (rx_->data.empty()) return 0;  // closed and drained
    std::size_t n = 0;
    while (n < cap && !rx_->data.empty()) {
      buf[n++] = rx_->data.front();
      rx_->data.pop_front();
    }
    return static_cast<int>(n);
  }

  void write_all(const std::uint8_t* buf, std::size_t n) override {
    std::lock_guard<std::mutex> lk(tx_->mu);
    if (tx_->closed) throw LinkError(LinkError::kClosed, "loopback peer closed");
    tx_->data.insert(tx_->data.end(), buf, buf + n);
    tx_->cv.notify_all();
  }

  void close() override {
    for (const auto& p : {rx_, tx_}) {
      std::lock_guard<std::mutex> lk(p->mu);
      p->closed = true;
      p->cv.notify_all();
    }
  }

 private:
  std::shared_ptr<Pipe> rx_, tx_;
};

}  // namespace

LoopbackPair make_loopback() {
  auto p1 = std::make_shared<Pipe>();
  auto p2 = std::make_shared<Pipe>();
  LoopbackPair pair;
  pair.a = std::make_shared<LoopbackStream>(p1, p2);
  pair.b = std::make_shared<LoopbackStream>(p2, p1);
  return pair;
}

// ---- tcp transport ----

TcpStream::TcpStream(int fd) : fd_(fd) {}

TcpStream::~TcpStream() { close(); }

int TcpStream::read_some(std::uint8_t* buf, std::size_t cap, int timeout_ms) {
  if (fd_ < 0) return 0;
  struct pollfd pfd = {fd_, POLLIN, 0};
  for (;;) {
    const int pr = ::poll(&pfd, 1, timeout_ms);
    if (pr == 0) return -1;
    if (pr < 0) {
      if (errno == EINTR) continue;
      throw LinkError(LinkError::kClosed, std::string("poll: ") + std::strerror(errno));
    }
    const ssize_t n = ::recv(fd_, buf, cap, 0);
    if (n > 0) return static_cast<int>(n);
    if (n == 0) return 0;
    if (errno == EINTR) continue;
    if (errno == ECONNRESET) return 0;
    throw LinkError(LinkError::kClosed, std::string("recv: ") + std::strerror(errno));
  }
}

void TcpStream::write_all(const std::uint8_t* buf, std::size_t n) {
  std::size_t off = 0;
  while (off < n) {
    const ssize_t w = ::send(fd_, buf + off, n - off, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw LinkError(LinkError::kClosed, std::string("send: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(w);
  }
}

void TcpStream::close() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
  }
}

TcpListener::TcpListener(int port) : fd_(-1), port_(0) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw LinkError(LinkError::kClosed, "socket() failed");
  const int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  struct sockaddr_in addr;
  std::memset(&addr, 0, sizeof(addr));
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(fd_, reinterpret_cast<struct sockaddr*>(&addr), sizeof(addr)) < 0 ||
      ::listen(fd_, 8) < 0) {
    ::close(fd_);
    throw LinkError(LinkError::kClosed, std::string("bind/listen: ") + std::strerror(errno));
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<struct sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() { close(); }

std::shared_ptr<ByteStream> TcpListener::accept(int timeout_ms) {
  struct pollfd pfd = {fd_, POLLIN, 0};
  for (;;) {
    const int pr = ::poll(&pfd, 1, timeout_ms);
    if (pr == 0) return nullptr;
    if (pr < 0) {
      if (errno == EINTR) continue;
      throw LinkError(LinkError::kClosed, std::string("poll: ") + std::strerror(errno));
    }
    const int cfd = ::accept(fd_, nullptr, nullptr);
    if (cfd < 0) {
      if (errno == EINTR) continue;
      throw LinkError(LinkError::kClosed, std::string("accept: ") + std::strerror(errno));
    }
    const int one = 1;
    ::setsockopt(cfd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return std::make_shared<TcpStream>(cfd);
  }
}

void TcpListener::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

std::shared_ptr<ByteStream> tcp_connect(const std::string& host, int port, int timeout_ms) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw LinkError(LinkError::kClosed, "socket() failed");
  struct sockaddr_in addr;
  std::memset(&addr, 0, sizeof(addr));
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw LinkError(LinkError::kClosed, "bad host address: " + host);
  }
  const int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
  int rc = ::connect(fd, reinterpret_cast<struct sockaddr*>(&addr), sizeof(addr));
  if (rc < 0 && errno != EINPROGRESS) {
    ::close(fd);
    throw LinkError(LinkError::kClosed, std::string("connect: ") + std::strerror(errno));
  }
  if (rc < 0) {
    struct pollfd pfd = {fd, POLLOUT, 0};
    const int pr = ::poll(&pfd, 1, timeout_ms);
    int err = 0;
    socklen_t len = sizeof(err);
    ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
    if (pr <= 0 || err != 0) {
      ::close(fd);
      throw LinkError(pr == 0 ? LinkError::kTimeout : LinkError::kClosed,
                      std::string("connect: ") + (pr == 0 ? "timed out" : std::strerror(err)));
    }
  }
  ::fcntl(fd, F_SETFL, flags);
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return std::make_shared<TcpStream>(fd);
}

// ---- framed connection ----

FramedConn::FramedConn(std::shared_ptr<ByteStream> stream) : stream_(std::move(stream)) {}

void FramedConn::send(MsgType type, const std::vector<std::uint8_t>& payload) {
  std::lock_guard<std::mutex> lk(tx_mu_);
  Frame f;
  f.type = type;
  f.seq = ++tx_seq_;
  f.payload = payload;
  const std::vector<std::uint8_t> bytes = encode_frame(f);
  stream_->write_all(bytes.data(), bytes.size());
}

std::optional<Frame> FramedConn::recv(int timeout_ms) {
  for (;;) {
    if (pending_pos_ < pending_.size()) {
      Frame f = std::move(pending_[pending_pos_++]);
      if (f.seq != rx_expected_)
        throw LinkError(LinkError::kProtocol,
                        "out-of-order frame: got seq " + std::to_string(f.seq) + ", expected " +
                            std::to_string(rx_expected_));
      ++rx_expected_;
      ++rx_count_;
      return f;
    }
    pending_.clear();
    pending_pos_ = 0;
    std::uint8_t buf[4096];
    const int n = stream_->read_some(buf, sizeof(buf), timeout_ms);
    if (n == 0) return std::nullopt;
    if (n < 0) throw LinkError(LinkError::kTimeout, "link receive timed out");
    decoder_.feed(buf, static_cast<std::size_t>(n));
    if (decoder_.fatal())
      throw LinkError(LinkError::kProtocol, "stream fatal: " + decoder_.fatal_reason());
    pending_ = decoder_.take_frames();
  }
}

void FramedConn::close() { stream_->close(); }

std::uint64_t FramedConn::crc_dropped() const { return decoder_.crc_errors(); }

}  // namespace weldloop::link
