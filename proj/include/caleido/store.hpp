#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace caleido {

/// Writes `content` to a temp file beside `path`, fsyncs it and renames it
/// over `path`. Readers see either the old or the new file. Throws IoFailure.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

/// A keyed collection stored as one JSON record per line, with a sidecar
/// index (key, line) rewritten alongside. Every mutation rewrites the file
/// through write_file_atomic; a crash leaves the previous version intact.
/// Writers are serialized; reads run concurrently.
class RecordCollection {
 public:
  explicit RecordCollection(std::filesystem::path file);

  RecordCollection(const RecordCollection&) = delete;
  RecordCollection& operator=(const RecordCollection&) = delete;

  /// Insert or replace. Replacing keeps the record's original position.
  void put(const std::string& key, const nlohmann::json& record);
  /// Inserts only if absent; returns the stored record either way and
  /// whether it was inserted.
  std::pair<nlohmann::json, bool> put_if_absent(const std::string& key,
                                                const nlohmann::json& record);
  /// Read-modify-write under the writer lock. `fn` receives the current
  /// record (if any) and returns the one to store; an exception from `fn`
  /// leaves the collection untouched.
  nlohmann::json update(const std::string& key,
                        const std::function<nlohmann::json(const std::optional<nlohmann::json>&)>& fn);
  /// Replace the whole collection in one atomic write.
  void replace_all(const std::vector<std::pair<std::string, nlohmann::json>>& records);

  std::optional<nlohmann::json> get(const std::string& key) const;
  bool contains(const std::string& key) const;
  /// Records in insertion order.
  std::vector<nlohmann::json> all() const;
  std::vector<std::string> keys() const;
  std::size_t size() const;

  const std::filesystem::path& path() const { return file_; }

 private:
  void load();
  void persist_locked() const;

  std::filesystem::path file_;
  mutable std::shared_mutex mu_;
  std::vector<std::pair<std::string, nlohmann::json>> records_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace caleido
