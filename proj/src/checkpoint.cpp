#include "mmsn/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "mmsn/common.hpp"

namespace mmsn {

namespace {

constexpr char kMagic[8] = {'M', 'M', 'S', 'N', 'A', 'R', 'C', '1'};

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  require(in.good(), "IoError", "truncated archive");
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto n = read_pod<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  require(in.good(), "IoError", "truncated archive");
  return s;
}

}  // namespace

void ArrayArchive::put(const std::string& name, Eigen::MatrixXd value) {
  arrays_[name] = std::move(value);
}

void ArrayArchive::put_bytes(const std::string& name, std::string bytes) {
  bytes_[name] = std::move(bytes);
}

bool ArrayArchive::has(const std::string& name) const {
  return arrays_.count(name) > 0 || bytes_.count(name) > 0;
}

const Eigen::MatrixXd& ArrayArchive::get(const std::string& name) const {
  auto it = arrays_.find(name);
  require(it != arrays_.end(), "CheckpointMismatch", "archive lacks array '" + name + "'");
  return it->second;
}

const std::string& ArrayArchive::get_bytes(const std::string& name) const {
  auto it = bytes_.find(name);
  require(it != bytes_.end(), "CheckpointMismatch", "archive lacks entry '" + name + "'");
  return it->second;
}

void ArrayArchive::save(const std::filesystem::path& path) const {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(out.good(), "IoError", "cannot write " + tmp.string());
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(arrays_.size() + bytes_.size()));
    for (const auto& [name, value] : arrays_) {
      write_pod<std::uint8_t>(out, 0);
      write_string(out, name);
      write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(value.rows()));
      write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(value.cols()));
      // Column-major raw doubles, Eigen's native layout.
      out.write(reinterpret_cast<const char*>(value.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(value.size())));
    }
    for (const auto& [name, data] : bytes_) {
      write_pod<std::uint8_t>(out, 1);
      write_string(out, name);
      write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(data.size()));
      out.write(data.data(), static_cast<std::streamsize>(data.size()));
    }
    require(out.good(), "IoError", "write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ArrayArchive ArrayArchive::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "IoError", "cannot open archive: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  require(in.good() && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0, "CheckpointMismatch",
          "not an archive file: " + path.string());

  ArrayArchive a;
  const auto count = read_pod<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto kind = read_pod<std::uint8_t>(in);
    const std::string name = read_string(in);
    if (kind == 0) {
      const auto rows = read_pod<std::uint64_t>(in);
      const auto cols = read_pod<std::uint64_t>(in);
      Eigen::MatrixXd m(static_cast<long>(rows), static_cast<long>(cols));
      in.read(reinterpret_cast<char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double) * rows * cols));
      require(in.good(), "IoError", "truncated archive: " + path.string());
      a.arrays_[name] = std::move(m);
    } else if (kind == 1) {
      const auto size = read_pod<std::uint64_t>(in);
      std::string data(size, '\0');
      in.read(data.data(), static_cast<std::streamsize>(size));
      require(in.good(), "IoError", "truncated archive: " + path.string());
      a.bytes_[name] = std::move(data);
    } else {
      fail("CheckpointMismatch", "unknown entry kind in archive");
    }
  }
  return a;
}

nlohmann::json archive_descriptors(const ArrayArchive& a) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [name, value] : a.arrays()) {
    out[name] = {{"dtype", "float64"},
                 {"shape", {value.rows(), value.cols()}},
                 {"layout", "column_major"}};
  }
  return out;
}

}  // namespace mmsn
