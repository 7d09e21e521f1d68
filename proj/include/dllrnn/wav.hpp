#pragma once

// RIFF/WAVE reading (16-bit PCM, 32-bit float, and their EXTENSIBLE forms)
// and writing (32-bit float by default).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "dllrnn/errors.hpp"
#include "dllrnn/framing.hpp"

namespace dllrnn {

enum class WavEncoding { pcm16, float32 };

struct WavFile {
  Waveform<float> audio;
  std::uint32_t sample_rate = 16000;
  WavEncoding encoding = WavEncoding::float32;
};

namespace detail {

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& bytes, std::string source)
      : bytes_(bytes), source_(std::move(source)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(source_ + ": " + what + " at byte offset " + std::to_string(pos_));
  }

  void need(std::size_t n) const {
    if (remaining() < n) fail("unexpected end of file (need " + std::to_string(n) + " bytes)");
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 4;
    return v;
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::string tag() {
    need(4);
    std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_), bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + 4));
    pos_ += 4;
    return s;
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  const unsigned char* here() const { return bytes_.data() + pos_; }

 private:
  const std::vector<unsigned char>& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}
inline void put_u16(std::vector<unsigned char>& out, std::uint16_t v) {
  out.push_back(static_cast<unsigned char>(v & 0xff));
  out.push_back(static_cast<unsigned char>(v >> 8));
}
inline void put_tag(std::vector<unsigned char>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

inline std::vector<unsigned char> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("short write to '" + path + "'");
}

}  // namespace detail

inline WavFile parse_wav(const std::vector<unsigned char>& bytes, const std::string& source = "<memory>") {
  detail::ByteReader r(bytes, source);
  if (r.tag() != "RIFF") r.fail("missing RIFF tag");
  r.u32();
  if (r.tag() != "WAVE") r.fail("missing WAVE tag");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  while (r.remaining() >= 8) {
    const std::size_t chunk_at = r.offset();
    const std::string id = r.tag();
    const std::uint32_t size = r.u32();
    if (id == "fmt ") {
      if (size < 16) r.fail("fmt chunk too short");
      format = r.u16();
      channels = r.u16();
      rate = r.u32();
      r.u32();  // byte rate
      r.u16();  // block align
      bits = r.u16();
      std::size_t consumed = 16;
      if (format == 0xFFFE) {
        if (size < 40) r.fail("WAVE_FORMAT_EXTENSIBLE fmt chunk too short");
        r.u16();  // cbSize
        r.u16();  // valid bits
        r.u32();  // channel mask
        format = r.u16();  // first two bytes of the sub-format GUID
        consumed = 26;
      }
      r.skip(size - consumed + (size & 1));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) r.fail("data chunk before fmt chunk");
      if (channels == 0) r.fail("zero channels");
      WavFile wav;
      wav.sample_rate = rate;
      if (format == 1 && bits == 16) {
        wav.encoding = WavEncoding::pcm16;
      } else if (format == 3 && bits == 32) {
        wav.encoding = WavEncoding::float32;
      } else {
        throw ParseError(source + ": unsupported codec (format " + std::to_string(format) + ", " +
                         std::to_string(bits) + " bits) at byte offset " + std::to_string(chunk_at));
      }
      const std::size_t width = bits / 8;
      const std::size_t frames = size / (width * channels);
      r.need(frames * width * channels);
      wav.audio = Waveform<float>(channels, frames);
      const unsigned char* p = r.here();
      for (std::size_t n = 0; n < frames; ++n) {
        for (std::size_t c = 0; c < channels; ++c, p += width) {
          if (wav.encoding == WavEncoding::pcm16) {
            const auto s = static_cast<std::int16_t>(static_cast<std::uint16_t>(p[0] | (p[1] << 8)));
            wav.audio.at(c, n) = static_cast<float>(s) / 32768.0f;
          } else {
            std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                              (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
            float f;
            std::memcpy(&f, &u, 4);
            wav.audio.at(c, n) = f;
          }
        }
      }
      return wav;
    } else {
      r.skip(size + (size & 1));
    }
  }
  r.fail("no data chunk");
}

inline WavFile read_wav(const std::string& path) { return parse_wav(detail::read_bytes(path), path); }

inline std::vector<unsigned char> encode_wav(const Waveform<float>& audio, std::uint32_t sample_rate = 16000,
                                             WavEncoding encoding = WavEncoding::float32) {
  const std::uint16_t bits = encoding == WavEncoding::pcm16 ? 16 : 32;
  const std::uint16_t channels = static_cast<std::uint16_t>(audio.channels);
  const std::uint32_t data_size = static_cast<std::uint32_t>(audio.samples * audio.channels * (bits / 8));
  std::vector<unsigned char> out;
  out.reserve(44 + data_size);
  detail::put_tag(out, "RIFF");
  detail::put_u32(out, 36 + data_size);
  detail::put_tag(out, "WAVE");
  detail::put_tag(out, "fmt ");
  detail::put_u32(out, 16);
  detail::put_u16(out, encoding == WavEncoding::pcm16 ? 1 : 3);
  detail::put_u16(out, channels);
  detail::put_u32(out, sample_rate);
  detail::put_u32(out, sample_rate * channels * (bits / 8));
  detail::put_u16(out, static_cast<std::uint16_t>(channels * (bits / 8)));
  detail::put_u16(out, bits);
  detail::put_tag(out, "data");
  detail::put_u32(out, data_size);
  for (std::size_t n = 0; n < audio.samples; ++n) {
    for (std::size_t c = 0; c < audio.channels; ++c) {
      const float v = audio.at(c, n);
      if (encoding == WavEncoding::pcm16) {
        const float clipped = std::max(-1.0f, std::min(v, 32767.0f / 32768.0f));
        detail::put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(clipped * 32768.0f))));
      } else {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        detail::put_u32(out, u);
      }
    }
  }
  return out;
}

inline void write_wav(const std::string& path, const Waveform<float>& audio, std::uint32_t sample_rate = 16000,
                      WavEncoding encoding = WavEncoding::float32) {
  detail::write_bytes(path, encode_wav(audio, sample_rate, encoding));
}

}  // namespace dllrnn
