#include "mgc/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "json.hpp"
#include "mgc/errors.hpp"

namespace mgc::io {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "binary tensor files are little-endian; add byte swapping for this target");

std::size_t CsvTable::column(std::string_view name) const {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) {
    std::string cols;
    for (const auto& h : header) cols += (cols.empty() ? "" : ",") + h;
    throw ValidationError("CSV column '" + std::string(name) + "' not found; header is: " + cols);
  }
  return static_cast<std::size_t>(it - header.begin());
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (c != '\r' && c != '\n') {
      field.push_back(c);
    }
  }
  out.push_back(std::move(field));
  return out;
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open CSV file " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty CSV file " + path.string());
  t.header = split_csv_line(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    if (fields.size() != t.header.size())
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                            std::to_string(t.header.size()) + " fields, got " +
                            std::to_string(fields.size()));
    t.rows.push_back(std::move(fields));
  }
  return t;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s, std::string_view what) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ValidationError("cannot parse number '" + std::string(s) + "' for " + std::string(what));
  return v;
}

void write_f64(const fs::path& path, const std::vector<double>& values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!out) throw ValidationError("short write to " + path.string());
}

std::vector<double> read_f64(const fs::path& path, std::size_t expected, std::string_view what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open binary for '" + std::string(what) + "': " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != expected * sizeof(double))
    throw LoadError("binary for '" + std::string(what) + "' has " + std::to_string(bytes) +
                    " bytes, expected " + std::to_string(expected * sizeof(double)));
  in.seekg(0);
  std::vector<double> values(expected);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw LoadError("failed reading binary for '" + std::string(what) + "'");
  return values;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

namespace {

std::string sha1_hex(std::string_view prefix, std::string_view content) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, prefix.data(), prefix.size());
  EVP_DigestUpdate(ctx, content.data(), content.size());
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

std::string blob_hash(const std::string& content) {
  std::string prefix = "blob " + std::to_string(content.size());
  prefix.push_back('\0');
  return sha1_hex(prefix, content);
}

}  // namespace

std::string content_hash(const fs::path& path) {
  if (fs::is_directory(path)) {
    std::vector<std::string> lines;
    for (const auto& entry : fs::recursive_directory_iterator(path)) {
      if (!entry.is_regular_file()) continue;
      lines.push_back(fs::relative(entry.path(), path).generic_string() + " " +
                      blob_hash(read_text(entry.path())));
    }
    std::sort(lines.begin(), lines.end());
    std::string joined;
    for (const auto& l : lines) joined += l + "\n";
    return blob_hash(joined);
  }
  if (!fs::exists(path)) throw ValidationError("cannot hash missing input " + path.string());
  return blob_hash(read_text(path));
}

void TensorStore::put(const std::string& name, const Matrix& m) { tensors_[name] = m; }

const Matrix& TensorStore::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw LoadError("tensor '" + name + "' missing from store");
  return it->second;
}

void TensorStore::save(const fs::path& dir, const std::string& metadata_json) const {
  fs::create_directories(dir);
  json manifest = metadata_json.empty() ? json::object() : json::parse(metadata_json);
  json list = json::array();
  for (const auto& [name, m] : tensors_) {
    const std::string file = name + ".f64";
    write_f64(dir / file, m.values());
    list.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"file", file}});
  }
  manifest["tensors"] = list;
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

TensorStore TensorStore::load(const fs::path& dir, std::string* metadata_json) {
  json manifest;
  try {
    manifest = json::parse(read_text(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw LoadError("bad manifest in " + dir.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw LoadError(e.what());
  }
  if (!manifest.contains("tensors") || !manifest["tensors"].is_array())
    throw LoadError("manifest in " + dir.string() + " has no tensor list");
  TensorStore store;
  for (const auto& t : manifest["tensors"]) {
    const std::string name = t.at("name").get<std::string>();
    const std::size_t rows = t.at("rows").get<std::size_t>();
    const std::size_t cols = t.at("cols").get<std::size_t>();
    auto values = read_f64(dir / t.at("file").get<std::string>(), rows * cols, name);
    store.tensors_[name] = Matrix(rows, cols, std::move(values));
  }
  if (metadata_json) {
    manifest.erase("tensors");
    *metadata_json = manifest.dump();
  }
  return store;
}

}  // namespace mgc::io
