#pragma once

#include "metmap/corpus.hpp"
#include "metmap/tensor.hpp"

namespace metmap {

// Raw pixel patches: m×(p·p·c) rows, one per patch, row-major over the patch
// grid. Values are channel bytes scaled to [0,1]. Within a patch the layout
// is (y, x, channel), matching the raster's interleaved order. Rows/columns
// past the last full patch are dropped.
struct PatchGrid {
    Mat features;     // m × (p*p*c)
    int patch_size = 0;
    int grid_h = 0;   // ⌊H/p⌋
    int grid_w = 0;   // ⌊W/p⌋

    int num_patches() const { return grid_h * grid_w; }
};

PatchGrid extract_patches(const Raster& image, int patch_size);

// Adapts a raster's channel count to what the projection expects:
// 1→n replicates, 3→1 averages. Anything else is a dimension error.
Raster adapt_channels(const Raster& image, int channels);

// F_image = PatchGrid · W_h, shape m×d. W_h must be (p·p·c)×d.
Mat image_to_patch_features(const Raster& image, int patch_size, const Mat& w_h);

}  // namespace metmap
