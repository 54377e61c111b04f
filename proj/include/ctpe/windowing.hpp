#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace ctpe::windowing {

// Radiological intensity window: linear map of the HU band
// [level - width/2, level + width/2] onto [0,1], clamped outside.
struct WindowSpec {
    double level = 0.0;
    double width = 1.0;  // must be > 0
};

// Channel order is fixed: 0 = lung, 1 = PE, 2 = mediastinal.
inline constexpr WindowSpec kLungWindow{-600.0, 1500.0};
inline constexpr WindowSpec kPeWindow{100.0, 700.0};
inline constexpr WindowSpec kMediastinalWindow{40.0, 400.0};

inline std::array<WindowSpec, 3> default_windows() {
    return {kLungWindow, kPeWindow, kMediastinalWindow};
}

struct WindowedSlice {
    int height = 0;
    int width = 0;
    // [3][H][W], values in [0,1]
    std::vector<float> channels;

    const float* channel(int c) const {
        return channels.data() + static_cast<size_t>(c) * height * width;
    }
    size_t plane_size() const { return static_cast<size_t>(height) * width; }
};

// Throws if spec.width <= 0.
void validate(const WindowSpec& spec);

std::vector<float> apply_window(const int16_t* hu, int height, int width, const WindowSpec& spec);

WindowedSlice to_three_channel(const int16_t* hu, int height, int width,
                               const std::array<WindowSpec, 3>& specs = default_windows());

// 8-bit quantization of a windowed plane, for visual inspection exports.
std::vector<uint8_t> to_u8(const std::vector<float>& plane);

} // namespace ctpe::windowing
