#include "ctpe/windowing.hpp"

#include <cmath>

#include "ctpe/error.hpp"
#include "ctpe/kernels.hpp"

namespace ctpe::windowing {

void validate(const WindowSpec& spec) {
    if (!(spec.width > 0.0))
        throw usage_error("window width must be > 0, got " + std::to_string(spec.width));
    if (!std::isfinite(spec.level))
        throw usage_error("window level must be finite");
}

std::vector<float> apply_window(const int16_t* hu, int height, int width, const WindowSpec& spec) {
    validate(spec);
    std::vector<float> out(static_cast<size_t>(height) * width);
    kernels::window_transform(hu, out.size(), spec.level, spec.width, out.data());
    return out;
}

WindowedSlice to_three_channel(const int16_t* hu, int height, int width,
                               const std::array<WindowSpec, 3>& specs) {
    WindowedSlice slice;
    slice.height = height;
    slice.width = width;
    slice.channels.resize(3 * slice.plane_size());
    for (int c = 0; c < 3; ++c) {
        validate(specs[c]);
        kernels::window_transform(hu, slice.plane_size(), specs[c].level, specs[c].width,
                                  slice.channels.data() + c * slice.plane_size());
    }
    return slice;
}

std::vector<uint8_t> to_u8(const std::vector<float>& plane) {
    std::vector<uint8_t> out(plane.size());
    for (size_t i = 0; i < plane.size(); ++i)
        out[i] = static_cast<uint8_t>(std::lround(plane[i] * 255.0f));
    return out;
}

} // namespace ctpe::windowing
