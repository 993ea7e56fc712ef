#include "append_log.hpp"

#include <fcntl.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "lalog/store/event_store.hpp"

namespace lalog::store {

namespace {

constexpr std::string_view kMagic = "LALOGv1\n";
constexpr std::size_t kFrameOverhead = 4 + 1 + 4;

[[noreturn]] void io_failure(const std::string& what) {
  throw StoreError(StoreError::Code::storage_failure, what + ": " + std::strerror(errno));
}

std::uint32_t read_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
  return v;
}

std::uint32_t frame_crc(std::uint8_t type, std::string_view payload) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto t = static_cast<Bytef>(type);
  crc = crc32(crc, &t, 1);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size()));
  return static_cast<std::uint32_t>(crc);
}

std::string frame(RecordType type, std::string_view payload) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.u8(static_cast<std::uint8_t>(type));
  w.raw(payload);
  w.u32(frame_crc(static_cast<std::uint8_t>(type), payload));
  return w.bytes();
}

std::string read_all(int fd) {
  std::string data;
  const off_t size = ::lseek(fd, 0, SEEK_END);
  if (size < 0) io_failure("seek");
  data.resize(static_cast<std::size_t>(size));
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::pread(fd, data.data() + done, data.size() - done, static_cast<off_t>(done));
    if (n < 0) {
      if (errno == EINTR) continue;
      io_failure("read");
    }
    if (n == 0) break;
    done += static_cast<std::size_t>(n);
  }
  data.resize(done);
  return data;
}

// Walks the frames; returns the end of the last intact record.
std::uint64_t walk(std::string_view data,
                   const std::function<void(RecordType, std::uint64_t, std::string_view)>* visit) {
  std::uint64_t pos = kMagic.size();
  while (pos < data.size()) {
    const std::uint64_t remaining = data.size() - pos;
    if (remaining < kFrameOverhead) return pos;
    const std::uint32_t len = read_u32(data.data() + pos);
    if (len > remaining - kFrameOverhead) return pos;
    const auto type = static_cast<std::uint8_t>(data[pos + 4]);
    const std::string_view payload = data.substr(pos + 5, len);
    const std::uint32_t crc = read_u32(data.data() + pos + 5 + len);
    const std::uint64_t next = pos + kFrameOverhead + len;
    // The type byte of a tombstone is written before its payload is cleared,
    // so a torn tombstone still reads as a tombstone.
    if (type != static_cast<std::uint8_t>(RecordType::tombstone) && crc != frame_crc(type, payload)) {
      if (next == data.size()) return pos;
      throw StoreError(StoreError::Code::storage_failure, "checksum mismatch in log", pos);
    }
    if (type > static_cast<std::uint8_t>(RecordType::replace)) {
      throw StoreError(StoreError::Code::storage_failure, "unknown record type in log", pos);
    }
    if (visit != nullptr) (*visit)(static_cast<RecordType>(type), pos, payload);
    pos = next;
  }
  return pos;
}

}  // namespace

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  out_.append(s);
}

std::string_view ByteReader::raw(std::size_t n) {
  if (n > in_.size() - pos_) throw std::out_of_range("record underrun");
  auto s = in_.substr(pos_, n);
  pos_ += n;
  return s;
}

std::uint8_t ByteReader::u8() { return static_cast<std::uint8_t>(raw(1)[0]); }

std::uint32_t ByteReader::u32() { return read_u32(raw(4).data()); }

std::uint64_t ByteReader::u64() {
  const auto lo = u32();
  const auto hi = u32();
  return (static_cast<std::uint64_t>(hi) << 32) | lo;
}

std::string_view ByteReader::str() { return raw(u32()); }

AppendLog::AppendLog(int fd, std::filesystem::path path, std::uint64_t end)
    : fd_(fd), path_(std::move(path)), end_(end) {}

AppendLog::~AppendLog() { ::close(fd_); }

std::unique_ptr<AppendLog> AppendLog::open(const std::filesystem::path& path) {
  const bool existed = std::filesystem::exists(path);
  const int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0600);
  if (fd < 0) io_failure("open " + path.string());
  std::unique_ptr<AppendLog> log(new AppendLog(fd, path, 0));

  std::string data = read_all(fd);
  if (data.empty()) {
    log->write_at(0, kMagic);
    log->sync();
    if (!existed && path.has_parent_path()) {
      const int dir = ::open(path.parent_path().c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
      if (dir >= 0) {
        ::fsync(dir);
        ::close(dir);
      }
    }
    log->end_ = kMagic.size();
    return log;
  }
  if (data.size() < kMagic.size() || std::string_view(data).substr(0, kMagic.size()) != kMagic) {
    throw StoreError(StoreError::Code::storage_failure, "not a log file: " + path.string());
  }
  const std::uint64_t end = walk(data, nullptr);
  if (end < data.size()) {
    // Torn tail: never acknowledged, safe to drop.
    if (::ftruncate(fd, static_cast<off_t>(end)) != 0) io_failure("truncate");
    log->sync();
  }
  log->end_ = end;
  return log;
}

void AppendLog::scan(const std::function<void(RecordType, std::uint64_t, std::string_view)>& visit) const {
  const std::string data = read_all(fd_);
  walk(std::string_view(data).substr(0, end_), &visit);
}

std::uint64_t AppendLog::append(RecordType type, std::string_view payload) {
  const std::string bytes = frame(type, payload);
  std::uint64_t offset = 0;
  {
    std::lock_guard lock(mutex_);
    offset = end_;
    write_at(offset, bytes);
    end_ += bytes.size();
  }
  wait_durable(offset + bytes.size());
  return offset;
}

void AppendLog::wait_durable(std::uint64_t end) {
  std::unique_lock lock(sync_mutex_);
  while (durable_ < end) {
    if (syncing_) {
      synced_.wait(lock);
      continue;
    }
    syncing_ = true;
    std::uint64_t upto = 0;
    {
      std::lock_guard write(mutex_);
      upto = end_;
    }
    lock.unlock();
    try {
      sync();
    } catch (...) {
      lock.lock();
      syncing_ = false;
      synced_.notify_all();
      throw;
    }
    lock.lock();
    syncing_ = false;
    durable_ = std::max(durable_, upto);
    synced_.notify_all();
  }
}

void AppendLog::tombstone(std::uint64_t offset) {
  std::lock_guard lock(mutex_);
  char header[5];
  std::size_t done = 0;
  while (done < sizeof(header)) {
    const ssize_t n = ::pread(fd_, header + done, sizeof(header) - done, static_cast<off_t>(offset + done));
    if (n <= 0) io_failure("read record header");
    done += static_cast<std::size_t>(n);
  }
  const std::uint32_t len = read_u32(header);
  write_at(offset + 4, std::string_view("\0", 1));
  sync();
  const std::string zeros(len, '\0');
  ByteWriter crc;
  crc.u32(frame_crc(0, zeros));
  write_at(offset + 5, zeros + crc.bytes());
  sync();
}

void AppendLog::write_at(std::uint64_t offset, std::string_view bytes) {
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::pwrite(fd_, bytes.data() + done, bytes.size() - done, static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      io_failure("write " + path_.string());
    }
    done += static_cast<std::size_t>(n);
  }
}

void AppendLog::sync() {
  if (::fdatasync(fd_) != 0) io_failure("fdatasync " + path_.string());
}

}  // namespace lalog::store
