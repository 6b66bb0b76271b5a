#include "clvae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "clvae/errors.hpp"

namespace clvae {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes little endian");

namespace {

constexpr char kMagic[8] = {'C', 'L', 'V', 'A', 'E', 'A', 'R', 'C'};

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get_value(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw DataError("truncated archive " + path.string());
  return v;
}

}  // namespace

const NamedArray& Archive::get(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw DataError("archive has no array named " + name);
}

bool Archive::has(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  // Write to a sibling file first so an interrupted write never clobbers a good archive.
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write archive " + path.string());
    out.write(kMagic, sizeof kMagic);
    put(out, Archive::kVersion);
    const std::string meta = archive.metadata.dump();
    put(out, static_cast<std::uint64_t>(meta.size()));
    out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    put(out, static_cast<std::uint64_t>(archive.arrays.size()));
    for (const auto& a : archive.arrays) {
      std::int64_t count = 1;
      for (auto d : a.dims) count *= d;
      if (count != static_cast<std::int64_t>(a.data.size()))
        throw DataError("array " + a.name + " size does not match its dims");
      put(out, static_cast<std::uint32_t>(a.name.size()));
      out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
      put(out, static_cast<std::uint32_t>(a.dims.size()));
      for (auto d : a.dims) put(out, d);
      out.write(reinterpret_cast<const char*>(a.data.data()),
                static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    }
    if (!out) throw DataError("failed writing archive " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open archive " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw DataError(path.string() + " is not a model archive");
  const auto version = get_value<std::uint32_t>(in, path);
  if (version != Archive::kVersion)
    throw DataError("unsupported archive version " + std::to_string(version) + " in " +
                    path.string());
  Archive archive;
  const auto meta_len = get_value<std::uint64_t>(in, path);
  std::string meta(meta_len, '\0');
  if (!in.read(meta.data(), static_cast<std::streamsize>(meta_len)))
    throw DataError("truncated archive " + path.string());
  try {
    archive.metadata = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt archive metadata in " + path.string() + ": " + e.what());
  }
  const auto count = get_value<std::uint64_t>(in, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto name_len = get_value<std::uint32_t>(in, path);
    a.name.resize(name_len);
    if (!in.read(a.name.data(), name_len)) throw DataError("truncated archive " + path.string());
    const auto ndims = get_value<std::uint32_t>(in, path);
    std::int64_t total = 1;
    for (std::uint32_t d = 0; d < ndims; ++d) {
      a.dims.push_back(get_value<std::int64_t>(in, path));
      if (a.dims.back() < 0) throw DataError("negative dimension in " + path.string());
      total *= a.dims.back();
    }
    a.data.resize(static_cast<std::size_t>(total));
    if (!in.read(reinterpret_cast<char*>(a.data.data()),
                 static_cast<std::streamsize>(a.data.size() * sizeof(double))))
      throw DataError("truncated archive " + path.string());
    archive.arrays.push_back(std::move(a));
  }
  return archive;
}

}  // namespace clvae
