// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "exsep/wav.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace exsep {

static_assert(std::endian::native == std::endian::little,
              "audio I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

int16_t to_pcm16(double x) {
  const long v = std::lrint(std::clamp(x, -1.0, 1.0) * 32768.0);
  return static_cast<int16_t>(std::clamp<long>(v, -32768, 32767));
}

}  // namespace

Audio read_wav(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("wav: cannot open: " + path);
  char tag[4];
  is.read(tag, 4);
  if (!is || std::memcmp(tag, "RIFF", 4) != 0)
    throw DataError("wav: not a RIFF file: " + path);
  get<uint32_t>(is);  // riff size
  is.read(tag, 4);
  if (!is || std::memcmp(tag, "WAVE", 4) != 0)
    throw DataError("wav: not a WAVE file: " + path);

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  std::vector<char> data;
  bool have_fmt = false, have_data = false;
  while (is.read(tag, 4)) {
    const uint32_t chunk_size = get<uint32_t>(is);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      format = get<uint16_t>(is);
      channels = get<uint16_t>(is);
      sample_rate = get<uint32_t>(is);
      get<uint32_t>(is);  // byte rate
      get<uint16_t>(is);  // block align
      bits = get<uint16_t>(is);
      if (chunk_size > 16) is.ignore(chunk_size - 16);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      data.resize(chunk_size);
      is.read(data.data(), chunk_size);
      have_data = true;
    } else {
      is.ignore(chunk_size + (chunk_size & 1));
    }
  }
  if (!have_fmt || !have_data)
    throw DataError("wav: missing fmt or data chunk: " + path);
  if (channels == 0) throw DataError("wav: zero channels: " + path);

  const bool pcm16 = format == 1 && bits == 16;
  const bool f32 = format == 3 && bits == 32;
  if (!pcm16 && !f32)
    throw DataError("wav: unsupported encoding (format " +
                    std::to_string(format) + ", " + std::to_string(bits) +
                    " bits): " + path);

  const size_t bytes_per = bits / 8u;
  const size_t frames = data.size() / (bytes_per * channels);
  Audio audio;
  audio.sample_rate = static_cast<int>(sample_rate);
  audio.channels.assign(channels, std::vector<double>(frames));
  const char* p = data.data();
  for (size_t i = 0; i < frames; ++i)
    for (int c = 0; c < channels; ++c) {
      if (pcm16) {
        int16_t s;
        std::memcpy(&s, p, 2);
        p += 2;
        audio.channels[static_cast<size_t>(c)][i] = s / 32768.0;
      } else {
        float s;
        std::memcpy(&s, p, 4);
        p += 4;
        audio.channels[static_cast<size_t>(c)][i] = s;
      }
    }
  return audio;
}

void write_wav(const std::string& path, const Audio& audio, int bits) {
  if (bits != 16 && bits != 32)
    throw ContractError("wav: bits must be 16 or 32");
  if (audio.channels.empty()) throw ContractError("wav: no channels");
  const int ch = audio.num_channels();
  const long frames = audio.length();
  for (const auto& c : audio.channels)
    if (static_cast<long>(c.size()) != frames)
      throw ContractError("wav: channel lengths disagree");

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("wav: cannot open for writing: " + path);
  const uint32_t bytes_per = static_cast<uint32_t>(bits / 8);
  const uint32_t data_size =
      static_cast<uint32_t>(frames) * bytes_per * static_cast<uint32_t>(ch);
  os.write("RIFF", 4);
  put<uint32_t>(os, 36 + data_size);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  put<uint32_t>(os, 16);
  put<uint16_t>(os, bits == 16 ? 1 : 3);
  put<uint16_t>(os, static_cast<uint16_t>(ch));
  put<uint32_t>(os, static_cast<uint32_t>(audio.sample_rate));
  put<uint32_t>(os, static_cast<uint32_t>(audio.sample_rate) * bytes_per *
                        static_cast<uint32_t>(ch));
  put<uint16_t>(os, static_cast<uint16_t>(bytes_per * static_cast<uint32_t>(ch)));
  put<uint16_t>(os, static_cast<uint16_t>(bits));
  os.write("data", 4);
  put<uint32_t>(os, data_size);
  for (long i = 0; i < frames; ++i)
    for (int c = 0; c < ch; ++c) {
      const double x = audio.channels[static_cast<size_t>(c)][static_cast<size_t>(i)];
      if (bits == 16)
        put<int16_t>(os, to_pcm16(x));
      else
        put<float>(os, static_cast<float>(x));
    }
  if (!os) throw DataError("wav: write failed: " + path);
}

Audio read_raw_f64(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("raw: cannot open: " + path);
  const uint16_t channels = get<uint16_t>(is);
  const uint32_t sample_rate = get<uint32_t>(is);
  const uint64_t length = get<uint64_t>(is);
  if (!is || channels == 0) throw DataError("raw: bad header: " + path);
  Audio audio;
  audio.sample_rate = static_cast<int>(sample_rate);
  audio.channels.assign(channels, std::vector<double>(length));
  for (int c = 0; c < channels; ++c) {
    is.read(reinterpret_cast<char*>(audio.channels[static_cast<size_t>(c)].data()),
            static_cast<std::streamsize>(length * sizeof(double)));
  }
  if (!is) throw DataError("raw: truncated data: " + path);
  return audio;
}

void write_raw_f64(const std::string& path, const Audio& audio) {
  if (audio.channels.empty()) throw ContractError("raw: no channels");
  const long frames = audio.length();
  for (const auto& c : audio.channels)
    if (static_cast<long>(c.size()) != frames)
      throw ContractError("raw: channel lengths disagree");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("raw: cannot open for writing: " + path);
  put<uint16_t>(os, static_cast<uint16_t>(audio.num_channels()));
  put<uint32_t>(os, static_cast<uint32_t>(audio.sample_rate));
  put<uint64_t>(os, static_cast<uint64_t>(frames));
  for (const auto& c : audio.channels)
    os.write(reinterpret_cast<const char*>(c.data()),
             static_cast<std::streamsize>(c.size() * sizeof(double)));
  if (!os) throw DataError("raw: write failed: " + path);
}

Audio read_audio(const std::string& path) {
  if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".wav") == 0)
    return read_wav(path);
  return read_raw_f64(path);
}

}  // namespace exsep
