#include "speechflow/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "speechflow/error.hpp"

namespace speechflow {

namespace {

constexpr char kMagic[4] = {'F', 'S', 'T', 'N'};

template <typename T>
void write_le(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T)))
    throw FormatError("unexpected end of tensor stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T v;
  std::memcpy(&v, bytes, sizeof(T));
  return v;
}

}  // namespace

void write_u32(std::ostream& out, std::uint32_t v) { write_le(out, v); }
void write_u64(std::ostream& out, std::uint64_t v) { write_le(out, v); }
void write_f64(std::ostream& out, double v) { write_le(out, v); }
std::uint32_t read_u32(std::istream& in) { return read_le<std::uint32_t>(in); }
std::uint64_t read_u64(std::istream& in) { return read_le<std::uint64_t>(in); }
double read_f64(std::istream& in) { return read_le<double>(in); }

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic, 4);
  write_u32(out, kTensorFormatVersion);
  write_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) write_u32(out, static_cast<std::uint32_t>(e));
  for (double v : t.data()) write_f64(out, v);
  if (!out) throw IoError("failed writing tensor");
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("missing tensor header");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad tensor magic");
  const auto version = read_u32(in);
  if (version != kTensorFormatVersion)
    throw FormatError("unsupported tensor format version " + std::to_string(version));
  const auto rank = read_u32(in);
  if (rank == 0 || rank > 8) throw FormatError("unsupported tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) {
    e = read_u32(in);
    if (e == 0) throw FormatError("zero tensor extent");
  }
  std::vector<double> data(shape_volume(shape));
  for (auto& v : data) v = read_f64(in);
  return Tensor(std::move(shape), std::move(data));
}

std::size_t tensor_record_bytes(const Tensor& t) { return 12 + 4 * t.rank() + 8 * t.size(); }

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_tensor(os, t);
  write_file_atomic(path, os.str());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_tensor(in);
}

std::vector<Tensor> load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Tensor> out;
  while (in.peek() != std::char_traits<char>::eof()) out.push_back(read_tensor(in));
  return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

}  // namespace speechflow
