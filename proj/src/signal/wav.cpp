#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "speechflow/error.hpp"
#include "speechflow/signal.hpp"
#include "speechflow/tensor_io.hpp"

namespace speechflow {

namespace {

std::uint32_t le32(const std::string& b, std::size_t pos) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(b[pos])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[pos + 1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[pos + 2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[pos + 3])) << 24;
}

std::uint16_t le16(const std::string& b, std::size_t pos) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[pos]) |
                                    static_cast<unsigned char>(b[pos + 1]) << 8);
}

void put16(std::string& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>(v >> 8));
}

void put32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

Waveform decode_wav(const std::string& bytes) {
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0)
    throw FormatError("not a RIFF/WAVE file");
  std::size_t pos = 12;
  bool have_fmt = false;
  int sample_rate = 0;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const std::uint32_t len = le32(bytes, pos + 4);
    const std::size_t body = pos + 8;
    if (body + len > bytes.size()) throw FormatError("truncated '" + id + "' chunk");
    if (id == "fmt ") {
      if (len < 16) throw FormatError("short fmt chunk");
      const auto format = le16(bytes, body);
      const auto channels = le16(bytes, body + 2);
      const auto bits = le16(bytes, body + 14);
      if (format != 1) throw FormatError("unsupported WAV encoding " + std::to_string(format) + " (need PCM)");
      if (channels != 1) throw FormatError("unsupported channel count " + std::to_string(channels));
      if (bits != 16) throw FormatError("unsupported bit depth " + std::to_string(bits));
      sample_rate = static_cast<int>(le32(bytes, body + 4));
      if (sample_rate <= 0) throw FormatError("invalid sample rate");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("data chunk before fmt chunk");
      Waveform w;
      w.sample_rate = sample_rate;
      w.samples.resize(len / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i)
        w.samples[i] = static_cast<std::int16_t>(le16(bytes, body + 2 * i)) / 32768.0;
      return w;
    }
    pos = body + len + (len & 1);
  }
  throw FormatError("missing data chunk");
}

std::string encode_wav(const Waveform& w) {
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  std::string b;
  b.reserve(44 + 2 * n);
  b += "RIFF";
  put32(b, 36 + 2 * n);
  b += "WAVEfmt ";
  put32(b, 16);
  put16(b, 1);
  put16(b, 1);
  put32(b, static_cast<std::uint32_t>(w.sample_rate));
  put32(b, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put16(b, 2);
  put16(b, 16);
  b += "data";
  put32(b, 2 * n);
  for (double s : w.samples) {
    const double q = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
    put16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  return b;
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_wav(ss.str());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  write_file_atomic(path, encode_wav(w));
}

}  // namespace speechflow
