#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

namespace mmsn {

/// Single-file container of named float64 arrays plus raw byte entries
/// (notably "meta.json"). Entries are written sorted by name, so identical
/// contents produce identical bytes.
class ArrayArchive {
 public:
  void put(const std::string& name, Eigen::MatrixXd value);
  void put_bytes(const std::string& name, std::string bytes);

  bool has(const std::string& name) const;
  const Eigen::MatrixXd& get(const std::string& name) const;
  const std::string& get_bytes(const std::string& name) const;

  const std::map<std::string, Eigen::MatrixXd>& arrays() const { return arrays_; }

  /// Atomic: writes to a temp file then renames.
  void save(const std::filesystem::path& path) const;
  static ArrayArchive load(const std::filesystem::path& path);

 private:
  std::map<std::string, Eigen::MatrixXd> arrays_;
  std::map<std::string, std::string> bytes_;
};

/// Shape/dtype descriptors for every array entry, for the archive meta.
nlohmann::json archive_descriptors(const ArrayArchive& a);

}  // namespace mmsn
