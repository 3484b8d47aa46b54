#include "minkgeo/raster_io.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <vector>

namespace minkgeo {

namespace {

constexpr std::array<unsigned char, 8> kMagic = {'M', 'G', 'F', '2',
                                                 'D', 0,   0,   1};
constexpr std::uint64_t kMaxPixels = 1ULL << 31;

// Host is little-endian on every supported target; raw memcpy is the layout.
template <typename T>
void put(std::vector<unsigned char>& buf, T v) {
  unsigned char tmp[sizeof(T)];
  std::memcpy(tmp, &v, sizeof(T));
  buf.insert(buf.end(), tmp, tmp + sizeof(T));
}

template <typename T>
T get(const unsigned char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

}  // namespace

Field2D read_raster(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError(IoError::Code::read_failure,
                  "read_raster: cannot open " + path.string());

  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 32)
    throw IoError(IoError::Code::truncated,
                  "read_raster: header truncated in " + path.string());
  if (std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
    throw IoError(IoError::Code::bad_magic,
                  "read_raster: bad magic in " + path.string());

  const std::uint32_t height = get<std::uint32_t>(bytes.data() + 8);
  const std::uint32_t width = get<std::uint32_t>(bytes.data() + 12);
  const double pixel_size = get<double>(bytes.data() + 16);
  const unsigned char tag = bytes[24];

  if (height == 0 || width == 0 ||
      static_cast<std::uint64_t>(height) * width > kMaxPixels)
    throw IoError(IoError::Code::dimension_overflow,
                  "read_raster: bad dimensions in " + path.string());
  if (tag > 1)
    throw IoError(IoError::Code::bad_units_tag,
                  "read_raster: unknown units tag in " + path.string());

  const std::uint64_t n = static_cast<std::uint64_t>(height) * width;
  if (bytes.size() != 32 + n * sizeof(float))
    throw IoError(IoError::Code::truncated,
                  "read_raster: payload truncated in " + path.string());

  std::vector<double> values(n);
  const unsigned char* p = bytes.data() + 32;
  for (std::uint64_t i = 0; i < n; ++i)
    values[i] = static_cast<double>(get<float>(p + i * sizeof(float)));

  return Field2D(static_cast<int>(height), static_cast<int>(width), pixel_size,
                 tag == 0 ? Units::physical : Units::normalized,
                 std::move(values));
}

void write_raster(const Field2D& field, const std::filesystem::path& path) {
  std::vector<unsigned char> bytes;
  bytes.reserve(32 + field.size() * sizeof(float));
  bytes.insert(bytes.end(), kMagic.begin(), kMagic.end());
  put<std::uint32_t>(bytes, static_cast<std::uint32_t>(field.height()));
  put<std::uint32_t>(bytes, static_cast<std::uint32_t>(field.width()));
  put<double>(bytes, field.pixel_size());
  bytes.push_back(field.units() == Units::physical ? 0 : 1);
  for (int i = 0; i < 7; ++i) bytes.push_back(0);
  for (double v : field.values()) put<float>(bytes, static_cast<float>(v));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IoError(IoError::Code::write_failure,
                  "write_raster: cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw IoError(IoError::Code::write_failure,
                  "write_raster: write failed for " + path.string());
}

std::uint64_t fnv1a64(const void* data, std::size_t size) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a64_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError(IoError::Code::read_failure,
                  "fnv1a64_file: cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace minkgeo
