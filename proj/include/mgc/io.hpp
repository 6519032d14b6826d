#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mgc/matrix.hpp"

namespace mgc::io {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index by name; throws ValidationError listing the header if absent.
  std::size_t column(std::string_view name) const;
};

// Minimal RFC-4180 reader: quoted fields, doubled quotes, CRLF tolerated.
std::vector<std::string> split_csv_line(std::string_view line);
CsvTable read_csv(const std::filesystem::path& path);

// Shortest text that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view s, std::string_view what);

// Little-endian float64 blobs.
void write_f64(const std::filesystem::path& path, const std::vector<double>& values);
std::vector<double> read_f64(const std::filesystem::path& path, std::size_t expected,
                             std::string_view what);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

// Git blob-style SHA-1 ("blob <len>\0" + content), hex encoded. Directories
// hash the sorted list of "<relative path> <blob hash>" lines.
std::string content_hash(const std::filesystem::path& path);

// Directory of named matrices: manifest.json lists name/shape/file, each
// tensor stored as <name>.f64. `metadata` is merged into the manifest.
class TensorStore {
 public:
  void put(const std::string& name, const Matrix& m);
  const Matrix& get(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }
  const std::map<std::string, Matrix>& tensors() const { return tensors_; }

  void save(const std::filesystem::path& dir, const std::string& metadata_json) const;
  // Returns the manifest's extra metadata as JSON text.
  static TensorStore load(const std::filesystem::path& dir, std::string* metadata_json = nullptr);

 private:
  std::map<std::string, Matrix> tensors_;
};

}  // namespace mgc::io
