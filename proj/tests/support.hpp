#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "caleido/store.hpp"
#include "caleido/workbench.hpp"

namespace testing {

inline std::filesystem::path data(const std::string& rel) {
  return std::filesystem::path(CALEIDO_TEST_DATA) / rel;
}

inline std::filesystem::path config(const std::string& rel) {
  return std::filesystem::path(CALEIDO_CONFIG_DIR) / rel;
}

inline std::string slurp(const std::string& rel) { return caleido::read_file(data(rel)); }

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("caleido-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

struct Provider {
  const char* id;
  const char* catalog;
};

inline constexpr Provider kProviders[] = {
    {"northwind", "fixtures/catalogs/northwind.json"},
    {"tabula", "fixtures/catalogs/tabula.tsv"},
    {"vista", "fixtures/catalogs/vista.html"},
};

/// Registers the three fixture providers and ingests their catalogs.
inline void ingest_fixtures(caleido::Workspace& ws) {
  for (const auto& p : kProviders) {
    ws.add_provider(caleido::descriptor_from_json(
        nlohmann::json::parse(caleido::read_file(config(std::string("providers/") + p.id + ".json")))));
    ws.ingest(p.id, slurp(p.catalog));
  }
}

}  // namespace testing
