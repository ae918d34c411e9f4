#include "vcm/waveform.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

namespace vcm {

void validate(const Waveform &w)
{
  if (w.sample_rate <= 0)
    throw DataError("waveform: sample rate must be positive");
  if (!w.samples.allFinite())
    throw DataError("waveform: non-finite sample");
}

double rms(const Eigen::Ref<const ArrayXd> &x)
{
  if (x.size() == 0)
    return 0.0;
  return std::sqrt(x.square().mean());
}

namespace {

std::uint32_t le32(const unsigned char *p)
{
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

std::uint16_t le16(const unsigned char *p)
{
  return std::uint16_t(p[0] | (p[1] << 8));
}

void put32(std::vector<unsigned char> &b, std::uint32_t v)
{
  for (int i = 0; i < 4; ++i)
    b.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put16(std::vector<unsigned char> &b, std::uint16_t v)
{
  b.push_back(static_cast<unsigned char>(v & 0xff));
  b.push_back(static_cast<unsigned char>(v >> 8));
}

} // namespace

Waveform read_wav(const std::filesystem::path &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw DataError("cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 ||
      std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw DataError(path.string() + ": not a RIFF/WAVE file");

  int           rate = 0;
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::size_t   pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::uint32_t len = le32(buf.data() + pos + 4);
    const unsigned char *body = buf.data() + pos + 8;
    if (pos + 8 + len > buf.size())
      throw DataError(path.string() + ": truncated chunk");
    if (std::memcmp(buf.data() + pos, "fmt ", 4) == 0) {
      if (len < 16)
        throw DataError(path.string() + ": short fmt chunk");
      format = le16(body);
      channels = le16(body + 2);
      rate = static_cast<int>(le32(body + 4));
      bits = le16(body + 14);
    } else if (std::memcmp(buf.data() + pos, "data", 4) == 0) {
      if (format != 1 || channels != 1 || bits != 16)
        throw DataError(path.string() + ": only 16-bit PCM mono is supported");
      Waveform w;
      w.sample_rate = rate;
      w.samples.resize(len / 2);
      for (std::uint32_t i = 0; i < len / 2; ++i) {
        const auto v = static_cast<std::int16_t>(le16(body + 2 * i));
        w.samples[i] = v / 32768.0;
      }
      validate(w);
      return w;
    }
    pos += 8 + len + (len & 1);
  }
  throw DataError(path.string() + ": no data chunk");
}

void write_wav(const std::filesystem::path &path, const Waveform &w)
{
  validate(w);
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  std::vector<unsigned char> b;
  b.reserve(44 + 2 * n);
  const char *riff = "RIFF", *wave = "WAVEfmt ", *data = "data";
  b.insert(b.end(), riff, riff + 4);
  put32(b, 36 + 2 * n);
  b.insert(b.end(), wave, wave + 8);
  put32(b, 16);
  put16(b, 1);
  put16(b, 1);
  put32(b, static_cast<std::uint32_t>(w.sample_rate));
  put32(b, static_cast<std::uint32_t>(w.sample_rate) * 2);
  put16(b, 2);
  put16(b, 16);
  b.insert(b.end(), data, data + 4);
  put32(b, 2 * n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const double c = std::clamp(w.samples[i], -1.0, 1.0);
    put16(b, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32767.0))));
  }
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char *>(b.data()), static_cast<std::streamsize>(b.size()));
}

} // namespace vcm
