#include "caleido/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>

#include "caleido/error.hpp"

namespace caleido {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::atomic<std::uint64_t> g_temp_counter{0};

[[noreturn]] void io_fail(const std::string& what, const fs::path& p) {
  throw Error(Errc::IoFailure, what + " " + p.string() + ": " + std::strerror(errno));
}

void fsync_dir(const fs::path& dir) {
  const int fd = ::open(dir.empty() ? "." : dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd >= 0) {
    ::fsync(fd);
    ::close(fd);
  }
}

}  // namespace

void write_file_atomic(const fs::path& path, std::string_view content) {
  const fs::path dir = path.parent_path();
  if (!dir.empty()) {
    std::error_code ec;
    fs::create_directories(dir, ec);
  }
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(g_temp_counter++);
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) io_fail("cannot create", tmp);
  std::size_t written = 0;
  while (written < content.size()) {
    const ssize_t n = ::write(fd, content.data() + written, content.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      ::unlink(tmp.c_str());
      io_fail("cannot write", tmp);
    }
    written += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0 || ::close(fd) != 0) {
    ::unlink(tmp.c_str());
    io_fail("cannot flush", tmp);
  }
  if (::rename(tmp.c_str(), path.c_str()) != 0) {
    ::unlink(tmp.c_str());
    io_fail("cannot rename onto", path);
  }
  fsync_dir(dir);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RecordCollection::RecordCollection(fs::path file) : file_(std::move(file)) { load(); }

void RecordCollection::load() {
  if (!fs::exists(file_)) return;
  std::ifstream in(file_, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + file_.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      std::string key = j.at("key").get<std::string>();
      auto [it, inserted] = index_.emplace(key, records_.size());
      if (inserted) {
        records_.emplace_back(std::move(key), std::move(j.at("record")));
      } else {
        records_[it->second].second = std::move(j.at("record"));
      }
    } catch (const json::exception& e) {
      throw Error(Errc::IoFailure,
                  file_.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RecordCollection::persist_locked() const {
  std::string body;
  std::string idx;
  std::size_t line = 0;
  for (const auto& [key, record] : records_) {
    body += json{{"key", key}, {"record", record}}.dump();
    body += '\n';
    idx += key;
    idx += '\t';
    idx += std::to_string(++line);
    idx += '\n';
  }
  write_file_atomic(file_, body);
  fs::path idx_path = file_;
  idx_path += ".idx";
  write_file_atomic(idx_path, idx);
}

void RecordCollection::put(const std::string& key, const json& record) {
  std::unique_lock lock(mu_);
  auto previous = records_;
  auto previous_index = index_;
  if (auto it = index_.find(key); it != index_.end()) {
    records_[it->second].second = record;
  } else {
    index_.emplace(key, records_.size());
    records_.emplace_back(key, record);
  }
  try {
    persist_locked();
  } catch (...) {
    records_ = std::move(previous);
    index_ = std::move(previous_index);
    throw;
  }
}

std::pair<json, bool> RecordCollection::put_if_absent(const std::string& key,
                                                      const json& record) {
  std::unique_lock lock(mu_);
  if (auto it = index_.find(key); it != index_.end()) {
    return {records_[it->second].second, false};
  }
  index_.emplace(key, records_.size());
  records_.emplace_back(key, record);
  try {
    persist_locked();
  } catch (...) {
    records_.pop_back();
    index_.erase(key);
    throw;
  }
  return {record, true};
}

json RecordCollection::update(const std::string& key,
                              const std::function<json(const std::optional<json>&)>& fn) {
  std::unique_lock lock(mu_);
  const auto it = index_.find(key);
  std::optional<json> current;
  if (it != index_.end()) current = records_[it->second].second;
  json next = fn(current);
  if (it != index_.end()) {
    records_[it->second].second = next;
    try {
      persist_locked();
    } catch (...) {
      records_[it->second].second = std::move(*current);
      throw;
    }
    return next;
  }
  index_.emplace(key, records_.size());
  records_.emplace_back(key, next);
  try {
    persist_locked();
  } catch (...) {
    records_.pop_back();
    index_.erase(key);
    throw;
  }
  return next;
}

void RecordCollection::replace_all(const std::vector<std::pair<std::string, json>>& records) {
  std::unique_lock lock(mu_);
  std::vector<std::pair<std::string, json>> next;
  std::map<std::string, std::size_t> next_index;
  for (const auto& [key, record] : records) {
    auto [it, inserted] = next_index.emplace(key, next.size());
    if (inserted) {
      next.emplace_back(key, record);
    } else {
      next[it->second].second = record;
    }
  }
  std::swap(next, records_);
  std::swap(next_index, index_);
  try {
    persist_locked();
  } catch (...) {
    std::swap(next, records_);
    std::swap(next_index, index_);
    throw;
  }
}

std::optional<json> RecordCollection::get(const std::string& key) const {
  std::shared_lock lock(mu_);
  auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;
  return records_[it->second].second;
}

bool RecordCollection::contains(const std::string& key) const {
  std::shared_lock lock(mu_);
  return index_.count(key) != 0;
}

std::vector<json> RecordCollection::all() const {
  std::shared_lock lock(mu_);
  std::vector<json> out;
  out.reserve(records_.size());
  for (const auto& [_, record] : records_) out.push_back(record);
  return out;
}

std::vector<std::string> RecordCollection::keys() const {
  std::shared_lock lock(mu_);
  std::vector<std::string> out;
  for (const auto& [key, _] : records_) out.push_back(key);
  return out;
}

std::size_t RecordCollection::size() const {
  std::shared_lock lock(mu_);
  return records_.size();
}

}  // namespace caleido
