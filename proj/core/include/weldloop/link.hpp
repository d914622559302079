#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

// Framed wire protocol between trainer and device. Layout (all little
// endian): magic 0x57 0x4C | type u8 | seq u32 | payload_len u32 | payload |
// crc32 u32 over everything before it. Each direction numbers its own frames
// from 1.
namespace weldloop::link {

inline constexpr std::uint8_t kMagic0 = 0x57;
inline constexpr std::uint8_t kMagic1 = 0x4C;
inline constexpr std::size_t kHeaderSize = 11;
inline constexpr std::size_t kMaxPayload = 16u * 1024 * 1024;

enum class MsgType : std::uint8_t {
  kWeights = 1,
  kEpsilons = 2,
  kExperience = 3,
  kControl = 4,
};

struct Frame {
  MsgType type = MsgType::kControl;
  std::uint32_t seq = 0;
  std::vector<std::uint8_t> payload;
};

std::vector<std::uint8_t> encode_frame(const Frame& f);

// Incremental decoder. While in sync a crc failure drops exactly that frame
// (counted) and a bad magic/type desynchronizes; desynced it scans byte by
// byte for a fully validating frame. An oversize length on an otherwise
// valid header is unrecoverable (length can't be trusted) and marks the
// stream fatal. Never throws, whatever the input.
class FrameDecoder {
 public:
  void feed(const std::uint8_t* data, std::size_t n);
  std::vector<Frame> take_frames();

  std::uint64_t crc_errors() const { return crc_errors_; }
  std::uint64_t resyncs() const { return resyncs_; }
  bool fatal() const { return fatal_; }
  const std::string& fatal_reason() const { return fatal_reason_; }

 private:
  void scan();

  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
  bool synced_ = true;
  bool fatal_ = false;
  std::string fatal_reason_;
  std::vector<Frame> frames_;
  std::uint64_t crc_errors_ = 0;
  std::uint64_t resyncs_ = 0;
};

// ---- payloads ----

struct ControlPayload {
  enum Cmd : std::uint8_t { kStartEpisode = 1, kError = 2, kShutdown = 3 };
  enum Err : std::uint8_t { kErrNone = 0, kErrBadState = 1, kErrTrigger = 2, kErrProtocol = 3 };
  // run mode for kStartEpisode (matches device::Mode), error code for kError
  std::uint8_t cmd = 0;
  std::uint32_t episode_id = 0;
  std::uint8_t arg = 0;
};

struct EpsilonsPayload {
  std::uint32_t episode_id = 0;
  std::vector<float> eps;  // one per step
};

struct ExpEntry {
  float or_volts = 0;
  float oe_volts = 0;
  float action_squashed = 0;
  float power_watts = 0;
};

// step_count entries of (state, action taken from it) plus one terminal
// entry carrying the final observation with zeroed action fields.
struct ExperiencePayload {
  std::uint32_t episode_id = 0;
  std::vector<ExpEntry> entries;  // step_count + 1
  std::uint8_t flags = 0;         // bit0: test episode

  bool is_test() const { return (flags & 1u) != 0; }
  std::size_t step_count() const { return entries.empty() ? 0 : entries.size() - 1; }
};

std::vector<std::uint8_t> encode_control(const ControlPayload& p);
ControlPayload decode_control(const std::vector<std::uint8_t>& b);
std::vector<std::uint8_t> encode_epsilons(const EpsilonsPayload& p);
EpsilonsPayload decode_epsilons(const std::vector<std::uint8_t>& b);
std::vector<std::uint8_t> encode_experience(const ExperiencePayload& p);
ExperiencePayload decode_experience(const std::vector<std::uint8_t>& b);

// ---- transports ----

class ByteStream {
 public:
  virtual ~ByteStream() = default;
  // > 0: bytes read; 0: clean EOF; -1: timed out.
  virtual int read_some(std::uint8_t* buf, std::size_t cap, int timeout_ms) = 0;
  virtual void write_all(const std::uint8_t* buf, std::size_t n) = 0;
  virtual void close() = 0;
};

struct LoopbackPair {
  std::shared_ptr<ByteStream> a;
  std::shared_ptr<ByteStream> b;
};
LoopbackPair make_loopback();

class TcpStream : public ByteStream {
 public:
  explicit TcpStream(int fd);
  ~TcpStream() override;
  int read_some(std::uint8_t* buf, std::size_t cap, int timeout_ms) override;
  void write_all(const std::uint8_t* buf, std::size_t n) override;
  void close() override;

 private:
  int fd_;
};

class TcpListener {
 public:
  explicit TcpListener(int port);  // 0 picks an ephemeral port
  ~TcpListener();
  int port() const { return port_; }
  std::shared_ptr<ByteStream> accept(int timeout_ms);  // nullptr on timeout
  void close();

 private:
  int fd_;
  int port_;
};

std::shared_ptr<ByteStream> tcp_connect(const std::string& host, int port, int timeout_ms);

// ---- framed connection ----

struct LinkError : std::runtime_error {
  enum Kind { kTimeout, kProtocol, kClosed };
  LinkError(Kind k, const std::string& what) : std::runtime_error(what), kind(k) {}
  Kind kind;
};

// Send/receive of whole frames with per-direction sequence enforcement.
// Sending and receiving may run on different threads; each path has its own
// state.
class FramedConn {
 public:
  explicit FramedConn(std::shared_ptr<ByteStream> stream);

  void send(MsgType type, const std::vector<std::uint8_t>& payload);
  // Next valid frame. nullopt on clean EOF; LinkError on timeout, sequence
  // gap or a fatal decode state. CRC-dropped frames are skipped and counted.
  std::optional<Frame> recv(int timeout_ms);
  void close();

  std::uint64_t crc_dropped() const;
  std::uint64_t frames_sent() const { return tx_seq_; }
  std::uint64_t frames_received() const { return rx_count_; }

 private:
  std::shared_ptr<ByteStream> stream_;
  FrameDecoder decoder_;
  std::vector<Frame> pending_;
  std::size_t pending_pos_ = 0;
  std::uint32_t tx_seq_ = 0;
  std::uint32_t rx_expected_ = 1;
  std::uint64_t rx_count_ = 0;
  std::mutex tx_mu_;
};

// Bounded MPMC queue; push blocks when full (backpressure), pop blocks when
// empty. close() wakes everyone; pop returns nullopt once drained+closed.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : cap_(capacity ? capacity : 1) {}

  bool push(T item) {
    std::unique_lock<std::mutex> lk(mu_);
    cv_push_.wait(lk, [&] { return closed_ || q_.size() < cap_; });
    if (closed_) return false;
    q_.push_back(std::move(item));
    cv_pop_.notify_one();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock<std::mutex> lk(mu_);
    cv_pop_.wait(lk, [&] { return closed_ || !q_.empty(); });
    if (q_.empty()) return std::nullopt;
    T item = std::move(q_.front());
    q_.pop_front();
    cv_push_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard<std::mutex> lk(mu_);
    closed_ = true;
    cv_push_.notify_all();
    cv_pop_.notify_all();
  }

  std::size_t size() const {
    std::lock_guard<std::mutex> lk(mu_);
    return q_.size();
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_push_, cv_pop_;
  std::deque<T> q_;
  std::size_t cap_;
  bool closed_ = false;
};

}  // namespace weldloop::link
