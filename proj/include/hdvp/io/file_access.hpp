#pragma once

// Every file the library reads or writes goes through these helpers, so that
// tests can observe which kinds of files a stage touched.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <string>
#include <vector>

#include "hdvp/core/error.hpp"

namespace hdvp {
namespace fs = std::filesystem;
}  // namespace hdvp

namespace hdvp::io {

enum class FileKind { kVideo, kLatent, kCheckpoint, kJson, kImage, kOther };

inline FileKind classify(const std::vector<char>& bytes) {
  if (bytes.size() >= 4) {
    if (std::memcmp(bytes.data(), "HVID", 4) == 0) return FileKind::kVideo;
    if (std::memcmp(bytes.data(), "HLAT", 4) == 0) return FileKind::kLatent;
  }
  static constexpr char kCkpt[] = "{\"format\":\"hdvp-checkpoint\"";
  if (bytes.size() >= sizeof(kCkpt) - 1 && std::memcmp(bytes.data(), kCkpt, sizeof(kCkpt) - 1) == 0) {
    return FileKind::kCheckpoint;
  }
  if (!bytes.empty() && (bytes[0] == '{' || bytes[0] == '[')) return FileKind::kJson;
  if (!bytes.empty() && bytes[0] == 'P') return FileKind::kImage;
  return FileKind::kOther;
}

/// Observer hook for file reads. Install with a ScopedReadObserver.
class FileAccessLog {
 public:
  using Observer = std::function<void(const fs::path&, FileKind)>;

  static FileAccessLog& instance() {
    static FileAccessLog log;
    return log;
  }
  void notify(const fs::path& p, FileKind k) {
    std::lock_guard<std::mutex> lock(mu_);
    for (auto& o : observers_) o(p, k);
  }
  std::size_t add(Observer o) {
    std::lock_guard<std::mutex> lock(mu_);
    observers_.push_back(std::move(o));
    return observers_.size() - 1;
  }
  void remove(std::size_t id) {
    std::lock_guard<std::mutex> lock(mu_);
    observers_[id] = [](const fs::path&, FileKind) {};
  }

 private:
  std::mutex mu_;
  std::vector<Observer> observers_;
};

class ScopedReadObserver {
 public:
  explicit ScopedReadObserver(FileAccessLog::Observer o)
      : id_(FileAccessLog::instance().add(std::move(o))) {}
  ~ScopedReadObserver() { FileAccessLog::instance().remove(id_); }
  ScopedReadObserver(const ScopedReadObserver&) = delete;
  ScopedReadObserver& operator=(const ScopedReadObserver&) = delete;

 private:
  std::size_t id_;
};

inline std::vector<char> read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + p.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  FileAccessLog::instance().notify(p, classify(bytes));
  return bytes;
}

inline std::string read_text(const fs::path& p) {
  auto b = read_file(p);
  return std::string(b.begin(), b.end());
}

inline void write_file(const fs::path& p, const void* data, std::size_t n) {
  if (p.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
  }
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + p.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) fail(ErrorKind::kIo, "write failed for " + p.string());
}

inline void write_text(const fs::path& p, const std::string& s) { write_file(p, s.data(), s.size()); }

inline void append_line(const fs::path& p, const std::string& line) {
  std::ofstream out(p, std::ios::app);
  if (!out) fail(ErrorKind::kIo, "cannot append to " + p.string());
  out << line << '\n';
}

// Little-endian scalar packing; the host is assumed little-endian (x86/ARM).
static_assert(std::endian::native == std::endian::little, "little-endian host required");

inline void put_u32(std::vector<char>& buf, std::uint32_t v) {
  const char* p = reinterpret_cast<const char*>(&v);
  buf.insert(buf.end(), p, p + 4);
}

inline std::uint32_t get_u32(const std::vector<char>& buf, std::size_t off) {
  require(off + 4 <= buf.size(), ErrorKind::kData, "truncated header");
  std::uint32_t v;
  std::memcpy(&v, buf.data() + off, 4);
  return v;
}

inline void put_f32(std::vector<char>& buf, const float* v, std::size_t n) {
  const char* p = reinterpret_cast<const char*>(v);
  buf.insert(buf.end(), p, p + n * 4);
}

}  // namespace hdvp::io
