#include "ndoflow/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace ndoflow::ad {

namespace {

constexpr std::array<char, 8> kMagic = {'N', 'D', 'O', 'F', 'L', 'O', 'W', '\0'};

template <class T>
void put(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T> || std::is_same_v<T, double>);
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) {
    throw Error("truncated checkpoint: " + path.string());
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

void replace_file(const std::filesystem::path& tmp, const std::filesystem::path& path) {
  std::filesystem::rename(tmp, path);
}

}  // namespace

std::filesystem::path metadata_path(const std::filesystem::path& checkpoint) {
  return std::filesystem::path(checkpoint.string() + ".json");
}

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const nlohmann::json& metadata) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // Sidecar first: a complete binary implies complete metadata.
  const auto meta_tmp = std::filesystem::path(metadata_path(path).string() + ".tmp");
  {
    std::ofstream meta(meta_tmp, std::ios::trunc);
    if (!meta) throw Error("cannot write checkpoint metadata " + meta_tmp.string());
    meta << metadata.dump(2) << '\n';
  }
  replace_file(meta_tmp, metadata_path(path));
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + tmp.string());
    out.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, std::uint32_t(params.size()));
    for (const auto& p : params) {
      put<std::uint32_t>(out, std::uint32_t(p.name().size()));
      out.write(p.name().data(), std::streamsize(p.name().size()));
      const Shape& shape = p.value().shape();
      put<std::uint32_t>(out, std::uint32_t(shape.size()));
      for (auto e : shape) put<std::uint64_t>(out, e);
      for (double v : p.value().values()) put<double>(out, v);
    }
    if (!out) throw Error("failed writing checkpoint " + tmp.string());
  }
  replace_file(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw Error("not an ndoflow checkpoint: " + path.string());
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw Error("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  Checkpoint ck;
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = get<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw Error("truncated checkpoint: " + path.string());
    const auto rank = get<std::uint32_t>(in, path);
    Shape shape(rank);
    for (auto& e : shape) e = std::size_t(get<std::uint64_t>(in, path));
    Tensor value(shape, 0.0);
    for (double& v : value.values()) v = get<double>(in, path);
    ck.params.add(std::move(name), std::move(value));
  }

  std::ifstream meta(metadata_path(path));
  if (meta) ck.metadata = nlohmann::json::parse(meta);
  return ck;
}

}  // namespace ndoflow::ad
