#include "usev/audio_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "usev/binio.hpp"
#include "usev/error.hpp"

namespace usev {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Io, "cannot open " + path.string());
  return is;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorKind::Io, "cannot create " + path.string());
  return os;
}

std::string read_tag(std::istream& is) {
  char tag[4];
  is.read(tag, 4);
  if (!is) fail(ErrorKind::Format, "truncated RIFF chunk header");
  return {tag, 4};
}

}  // namespace

AudioClip read_wav(const std::filesystem::path& path) {
  auto is = open_in(path);
  const std::string where = " in " + path.string();
  if (read_tag(is) != "RIFF") fail(ErrorKind::Format, "missing RIFF tag" + where);
  binio::get<std::uint32_t>(is, "RIFF size");
  if (read_tag(is) != "WAVE") fail(ErrorKind::Format, "missing WAVE tag" + where);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (true) {
    const std::string tag = read_tag(is);
    const auto size = binio::get<std::uint32_t>(is, "chunk size");
    if (tag == "fmt ") {
      require(size >= 16, ErrorKind::Format, "fmt chunk too small" + where);
      format = binio::get<std::uint16_t>(is, "format");
      channels = binio::get<std::uint16_t>(is, "channels");
      rate = binio::get<std::uint32_t>(is, "sample rate");
      binio::get<std::uint32_t>(is, "byte rate");
      binio::get<std::uint16_t>(is, "block align");
      bits = binio::get<std::uint16_t>(is, "bits per sample");
      if (format == kFormatExtensible && size >= 40) {
        binio::get<std::uint16_t>(is, "cb size");
        binio::get<std::uint16_t>(is, "valid bits");
        binio::get<std::uint32_t>(is, "channel mask");
        format = binio::get<std::uint16_t>(is, "subformat");
        is.ignore(size - 26);
      } else {
        is.ignore(size - 16);
      }
      have_fmt = true;
    } else if (tag == "data") {
      require(have_fmt, ErrorKind::Format, "data chunk before fmt chunk" + where);
      require(channels == 1, ErrorKind::Format, "only mono WAV is supported" + where);
      AudioClip clip;
      clip.sample_rate = static_cast<int>(rate);
      if (format == kFormatPcm && bits == 16) {
        clip.samples.resize(size / 2);
        for (auto& s : clip.samples)
          s = binio::get<std::int16_t>(is, "pcm16 sample") / 32768.0;
      } else if (format == kFormatFloat && bits == 32) {
        clip.samples.resize(size / 4);
        for (auto& s : clip.samples) s = binio::get<float>(is, "float32 sample");
      } else {
        fail(ErrorKind::Format, "unsupported WAV encoding (format " +
                                    std::to_string(format) + ", " +
                                    std::to_string(bits) + " bits)" + where);
      }
      clip.validate();
      return clip;
    } else {
      is.ignore(size + (size & 1u));
    }
  }
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip,
               WavEncoding encoding) {
  clip.validate();
  const bool pcm = encoding == WavEncoding::Pcm16;
  const std::uint16_t bits = pcm ? 16 : 32;
  const std::uint32_t data_bytes =
      static_cast<std::uint32_t>(clip.samples.size() * (bits / 8));
  auto os = open_out(path);
  os.write("RIFF", 4);
  binio::put<std::uint32_t>(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  binio::put<std::uint32_t>(os, 16);
  binio::put<std::uint16_t>(os, pcm ? kFormatPcm : kFormatFloat);
  binio::put<std::uint16_t>(os, 1);
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(clip.sample_rate));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(clip.sample_rate) * (bits / 8));
  binio::put<std::uint16_t>(os, bits / 8);
  binio::put<std::uint16_t>(os, bits);
  os.write("data", 4);
  binio::put<std::uint32_t>(os, data_bytes);
  for (double s : clip.samples) {
    if (pcm) {
      const double c = std::clamp(s, -1.0, 1.0);
      binio::put<std::int16_t>(
          os, static_cast<std::int16_t>(std::clamp(std::lround(c * 32768.0), -32768L, 32767L)));
    } else {
      binio::put<float>(os, static_cast<float>(s));
    }
  }
  if (!os) fail(ErrorKind::Io, "write failed for " + path.string());
}

std::vector<double> read_raw_f32(const std::filesystem::path& path) {
  auto is = open_in(path);
  std::vector<double> out;
  float v;
  while (is.read(reinterpret_cast<char*>(&v), sizeof v)) out.push_back(v);
  if (is.gcount() != 0)
    fail(ErrorKind::Format, "raw float32 file size is not a multiple of 4: " + path.string());
  return out;
}

void write_raw_f32(const std::filesystem::path& path,
                   std::span<const double> samples) {
  auto os = open_out(path);
  for (double s : samples) binio::put<float>(os, static_cast<float>(s));
  if (!os) fail(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace usev
