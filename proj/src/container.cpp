#include "nerd/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "nerd/error.hpp"
#include "nerd/io.hpp"

namespace nerd {
namespace {

constexpr char kMagic[8] = {'N', 'E', 'R', 'D', 'C', 'O', 'N', 'T'};

static_assert(std::endian::native == std::endian::little,
              "container encoding assumes a little-endian host");

template <class U>
void put(std::vector<char>& out, U v) {
  const auto* p = reinterpret_cast<const char*>(&v);
  out.insert(out.end(), p, p + sizeof(U));
}

template <class U>
U take(const std::vector<char>& in, std::size_t& pos, const std::string& origin) {
  if (pos + sizeof(U) > in.size()) throw IoError(origin + ": truncated container");
  U v;
  std::memcpy(&v, in.data() + pos, sizeof(U));
  pos += sizeof(U);
  return v;
}

}  // namespace

const NamedArray* Container::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

const NamedArray& Container::array(const std::string& name) const {
  if (const auto* a = find(name)) return *a;
  throw IoError("container '" + kind + "' has no array '" + name + "'");
}

void Container::add(std::string name, std::vector<int> shape, std::vector<double> values) {
  arrays.push_back({std::move(name), std::move(shape), std::move(values)});
}

std::vector<char> encode_container(const Container& c) {
  nlohmann::json header;
  header["version"] = Container::kVersion;
  header["kind"] = c.kind;
  header["meta"] = c.meta;
  header["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : c.arrays) {
    header["arrays"].push_back({{"name", a.name},
                                {"shape", a.shape},
                                {"dtype", "f64"},
                                {"offset", offset},
                                {"count", a.values.size()}});
    offset += a.values.size() * sizeof(double);
  }
  const std::string text = header.dump();
  std::vector<char> out;
  out.reserve(20 + text.size() + offset);
  out.insert(out.end(), kMagic, kMagic + 8);
  put<std::uint32_t>(out, Container::kVersion);
  put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& a : c.arrays) {
    const auto* p = reinterpret_cast<const char*>(a.values.data());
    out.insert(out.end(), p, p + a.values.size() * sizeof(double));
  }
  return out;
}

Container decode_container(const std::vector<char>& bytes, const std::string& origin) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw IoError(origin + ": not a container file");
  std::size_t pos = 8;
  const auto version = take<std::uint32_t>(bytes, pos, origin);
  if (version != Container::kVersion)
    throw IoError(origin + ": unsupported container version " + std::to_string(version));
  const auto header_len = take<std::uint64_t>(bytes, pos, origin);
  if (pos + header_len > bytes.size()) throw IoError(origin + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + pos, bytes.begin() + pos + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(origin + ": malformed header: " + e.what());
  }
  pos += header_len;
  if (!header.contains("version") || header["version"] != version)
    throw IoError(origin + ": header version missing or inconsistent");

  Container c;
  c.kind = header.value("kind", "");
  c.meta = header.value("meta", nlohmann::json::object());
  const std::size_t payload = pos;
  for (const auto& a : header.at("arrays")) {
    NamedArray arr;
    arr.name = a.at("name").get<std::string>();
    arr.shape = a.at("shape").get<std::vector<int>>();
    if (a.at("dtype") != "f64") throw IoError(origin + ": unsupported dtype for " + arr.name);
    const auto off = a.at("offset").get<std::uint64_t>();
    const auto count = a.at("count").get<std::uint64_t>();
    if (payload + off + count * sizeof(double) > bytes.size())
      throw IoError(origin + ": array '" + arr.name + "' exceeds file size");
    arr.values.resize(count);
    std::memcpy(arr.values.data(), bytes.data() + payload + off, count * sizeof(double));
    c.arrays.push_back(std::move(arr));
  }
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  write_file_atomic(path, encode_container(c));
}

Container read_container(const std::filesystem::path& path) {
  return decode_container(read_file(path), path.string());
}

}  // namespace nerd
