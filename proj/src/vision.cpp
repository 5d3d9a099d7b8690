#include "metmap/vision.hpp"

namespace metmap {

PatchGrid extract_patches(const Raster& image, int patch_size) {
    if (!image.valid()) throw DataError("extract_patches: invalid raster");
    if (patch_size < 1) throw DataError("extract_patches: patch size must be >= 1");
    if (image.h < patch_size || image.w < patch_size) {
        throw DataError("extract_patches: image " + std::to_string(image.w) + "x" +
                        std::to_string(image.h) + " smaller than one " +
                        std::to_string(patch_size) + "x" + std::to_string(patch_size) + " patch");
    }
    PatchGrid grid;
    grid.patch_size = patch_size;
    grid.grid_h = image.h / patch_size;
    grid.grid_w = image.w / patch_size;

    const int p = patch_size;
    const int c = image.c;
    grid.features.resize(grid.num_patches(), p * p * c);
    for (int gy = 0; gy < grid.grid_h; ++gy) {
        for (int gx = 0; gx < grid.grid_w; ++gx) {
            int row = gy * grid.grid_w + gx;
            int col = 0;
            for (int py = 0; py < p; ++py) {
                const std::uint8_t* src =
                    image.data.data() +
                    (static_cast<size_t>(gy * p + py) * image.w + static_cast<size_t>(gx) * p) * c;
                for (int k = 0; k < p * c; ++k) {
                    grid.features(row, col++) = static_cast<double>(src[k]) / 255.0;
                }
            }
        }
    }
    return grid;
}

Raster adapt_channels(const Raster& image, int channels) {
    if (image.c == channels) return image;
    Raster out;
    out.h = image.h;
    out.w = image.w;
    out.c = channels;
    out.data.resize(static_cast<size_t>(out.h) * out.w * out.c);
    size_t pixels = static_cast<size_t>(image.h) * image.w;
    if (image.c == 1) {
        for (size_t i = 0; i < pixels; ++i) {
            for (int k = 0; k < channels; ++k) out.data[i * channels + k] = image.data[i];
        }
        return out;
    }
    if (channels == 1) {
        for (size_t i = 0; i < pixels; ++i) {
            int sum = 0;
            for (int k = 0; k < image.c; ++k) sum += image.data[i * image.c + k];
            out.data[i] = static_cast<std::uint8_t>(sum / image.c);
        }
        return out;
    }
    throw DataError("adapt_channels: cannot convert " + std::to_string(image.c) + " channels to " +
                    std::to_string(channels));
}

Mat image_to_patch_features(const Raster& image, int patch_size, const Mat& w_h) {
    PatchGrid grid = extract_patches(image, patch_size);
    if (w_h.rows() != grid.features.cols()) {
        throw DataError("image_to_patch_features: projection expects " +
                        std::to_string(w_h.rows()) + " inputs, patches have " +
                        std::to_string(grid.features.cols()));
    }
    return grid.features * w_h;
}

}  // namespace metmap
