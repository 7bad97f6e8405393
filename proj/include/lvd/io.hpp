#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lvd/common.hpp"

namespace lvd {

// Mono waveform in [-1, 1].
struct Waveform {
    std::vector<float> samples;
    int sample_rate = 16000;
};

// 16-bit PCM mono writer.
void write_wav(const std::string& path, const Waveform& w);

// Reads mono PCM16 or float32 WAV. Rejects multi-channel files.
Waveform read_wav(const std::string& path);

// Binary P5/P6 images, values quantized from [0,1].
void write_pgm(const std::string& path, const std::vector<float>& gray,
               int64_t h, int64_t w);
void write_ppm(const std::string& path, const std::vector<float>& rgb_chw,
               int64_t h, int64_t w);

// binary P6 reader; returns CHW floats in [0,1]
std::vector<float> read_ppm(const std::string& path, int64_t& h, int64_t& w);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace lvd
