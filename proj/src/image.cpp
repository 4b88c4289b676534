#include "fovdet/image.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "fovdet/errors.hpp"
#include "fovdet/rng.hpp"

namespace fovdet {

namespace {
constexpr char kMagic[4] = {'F', 'D', 'I', 'M'};

void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
}  // namespace

void write_image(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  os.write(kMagic, 4);
  put_u32(os, static_cast<std::uint32_t>(img.height));
  put_u32(os, static_cast<std::uint32_t>(img.width));
  put_u32(os, static_cast<std::uint32_t>(img.channels));
  put_u32(os, 0);  // element type: float32
  std::vector<float> buf(img.data.size());
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<float>(img.data[i]);
  os.write(reinterpret_cast<const char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!os) throw IoError("write failed: " + path);
}

Image read_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for read: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("bad image magic in " + path);
  const int h = static_cast<int>(get_u32(is));
  const int w = static_cast<int>(get_u32(is));
  const int c = static_cast<int>(get_u32(is));
  const std::uint32_t elem = get_u32(is);
  if (elem != 0) throw IoError("unsupported element type in " + path);
  Image img(h, w, c);
  std::vector<float> buf(img.data.size());
  is.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!is) throw IoError("truncated image file: " + path);
  for (std::size_t i = 0; i < buf.size(); ++i) img.data[i] = buf[i];
  return img;
}

std::uint64_t image_hash(const Image& img) {
  std::uint64_t h = fnv1a64(&img.height, sizeof(img.height));
  h = fnv1a64(&img.width, sizeof(img.width), h);
  for (double d : img.data) {
    const float f = static_cast<float>(d);
    h = fnv1a64(&f, sizeof(f), h);
  }
  return h;
}

double mean_abs_diff(const Image& a, const Image& b) {
  if (a.data.size() != b.data.size())
    throw InternalError("mean_abs_diff: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    acc += std::fabs(a.data[i] - b.data[i]);
  return a.data.empty() ? 0.0 : acc / static_cast<double>(a.data.size());
}

}  // namespace fovdet
