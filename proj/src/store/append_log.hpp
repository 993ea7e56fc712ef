#pragma once

#include <cstdint>
#include <filesystem>
#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>

namespace lalog::store {

enum class RecordType : std::uint8_t { tombstone = 0, activity = 1, session = 2, event = 3, replace = 4 };

/// Single-file log of framed records:
///   u32 payload length | u8 type | payload | u32 crc32(type, payload)
/// after an 8-byte file header. All integers little-endian.
class AppendLog {
 public:
  ~AppendLog();
  AppendLog(const AppendLog&) = delete;
  AppendLog& operator=(const AppendLog&) = delete;

  /// Creates the file when missing. A torn record at the tail is cut off.
  static std::unique_ptr<AppendLog> open(const std::filesystem::path& path);

  /// Visits every record in file order, tombstones included.
  void scan(const std::function<void(RecordType, std::uint64_t offset, std::string_view payload)>& visit) const;

  /// Returns the record's offset once the bytes are on stable storage. Concurrent
  /// appenders share one flush (group commit).
  std::uint64_t append(RecordType type, std::string_view payload);

  /// Marks a record dead and zeroes its payload in place.
  void tombstone(std::uint64_t offset);

 private:
  AppendLog(int fd, std::filesystem::path path, std::uint64_t end);

  void write_at(std::uint64_t offset, std::string_view bytes);
  void sync();
  /// Blocks until every byte before `end` has been flushed.
  void wait_durable(std::uint64_t end);

  int fd_;
  std::filesystem::path path_;
  std::uint64_t end_;
  std::mutex mutex_;

  std::mutex sync_mutex_;
  std::condition_variable synced_;
  std::uint64_t durable_ = 0;
  bool syncing_ = false;
};

/// Little-endian payload builder.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void str(std::string_view s);
  void raw(std::string_view s) { out_.append(s); }

  const std::string& bytes() const { return out_; }

 private:
  std::string out_;
};

/// Throws std::out_of_range on underrun.
class ByteReader {
 public:
  explicit ByteReader(std::string_view in) : in_(in) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  std::string_view str();
  std::string_view raw(std::size_t n);
  bool done() const { return pos_ == in_.size(); }

 private:
  std::string_view in_;
  std::size_t pos_ = 0;
};

}  // namespace lalog::store
