#include "fovdet/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "fovdet/errors.hpp"

namespace fovdet {

namespace {
constexpr char kMagic[4] = {'F', 'D', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
}  // namespace

void save_checkpoint(const std::string& path, const ad::ParamStore& params,
                     std::uint64_t config_hash, std::uint64_t step) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint: " + path);
  os.write(kMagic, 4);
  put(os, kVersion);
  put(os, config_hash);
  put(os, step);
  put(os, static_cast<std::uint32_t>(params.all().size()));
  for (const auto& p : params.all()) {
    put(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put(os, static_cast<std::uint32_t>(p->value.shape.size()));
    for (int d : p->value.shape) put(os, static_cast<std::int64_t>(d));
    os.write(reinterpret_cast<const char*>(p->value.data.data()),
             static_cast<std::streamsize>(p->value.data.size() * sizeof(double)));
  }
  if (!os) throw IoError("checkpoint write failed: " + path);
}

namespace {
CheckpointInfo read_header(std::ifstream& is, const std::string& path) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("bad checkpoint magic in " + path);
  const auto version = get<std::uint32_t>(is);
  if (version != kVersion)
    throw IoError("unsupported checkpoint version in " + path);
  CheckpointInfo info;
  info.config_hash = get<std::uint64_t>(is);
  info.step = get<std::uint64_t>(is);
  return info;
}
}  // namespace

CheckpointInfo peek_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  return read_header(is, path);
}

CheckpointInfo load_checkpoint(const std::string& path, ad::ParamStore& params,
                               std::uint64_t expected_config_hash) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  const CheckpointInfo info = read_header(is, path);
  if (info.config_hash != expected_config_hash)
    throw ConfigError("checkpoint config hash mismatch for " + path);
  const auto count = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto ndim = get<std::uint32_t>(is);
    std::vector<int> shape;
    for (std::uint32_t d = 0; d < ndim; ++d)
      shape.push_back(static_cast<int>(get<std::int64_t>(is)));
    ad::Param* p = params.find(name);
    if (!p) throw IoError("checkpoint has unknown parameter: " + name);
    if (p->value.shape != shape)
      throw IoError("checkpoint shape mismatch for parameter: " + name);
    is.read(reinterpret_cast<char*>(p->value.data.data()),
            static_cast<std::streamsize>(p->value.data.size() * sizeof(double)));
  }
  if (!is) throw IoError("truncated checkpoint: " + path);
  return info;
}

}  // namespace fovdet
