#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "litedet/error.hpp"
#include "litedet/rng.hpp"

namespace litedet {

/// Dense NCHW feature map. Flat row-major (n, c, h, w) float32 storage.
/// Values are immutable by convention once an op has produced them; all
/// tensor ops are pure functions and safe to call concurrently.
struct Tensor4 {
    int n = 1, c = 1, h = 1, w = 1;
    std::vector<float> data = std::vector<float>(1, 0.0f);

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_);

    static Tensor4 filled(int n, int c, int h, int w, float value);

    std::size_t size() const { return data.size(); }

    std::size_t index(int in, int ic, int iy, int ix) const {
        return ((std::size_t(in) * std::size_t(c) + std::size_t(ic)) * std::size_t(h) +
                std::size_t(iy)) *
                   std::size_t(w) +
               std::size_t(ix);
    }
    float at(int in, int ic, int iy, int ix) const { return data[index(in, ic, iy, ix)]; }
    float& at(int in, int ic, int iy, int ix) { return data[index(in, ic, iy, ix)]; }

    bool same_shape(const Tensor4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    std::string shape_str() const;
};

/// Convolution weights plus geometry. Weight layout is
/// (c_out, c_in/groups, k_h, k_w) row-major; bias is empty or c_out long.
struct ConvParams {
    int c_in = 1, c_out = 1;
    int k_h = 1, k_w = 1;
    int stride_h = 1, stride_w = 1;
    int pad_h = 0, pad_w = 0;
    int groups = 1;
    std::vector<float> weight;
    std::vector<float> bias;

    ConvParams() = default;
    // Square-kernel convenience; weights zero-filled, bias present and zero.
    ConvParams(int c_in, int c_out, int k, int stride = 1, int pad = 0, int groups = 1);

    void validate() const;

    bool depthwise() const { return groups == c_in && groups == c_out; }
    int fan_in() const { return (c_in / groups) * k_h * k_w; }
    long long weight_count() const {
        return (long long)c_out * (c_in / groups) * k_h * k_w;
    }
    long long param_count() const { return weight_count() + (long long)bias.size(); }
    int out_h(int h) const { return (h + 2 * pad_h - k_h) / stride_h + 1; }
    int out_w(int w) const { return (w + 2 * pad_w - k_w) / stride_w + 1; }
};

// Direct convolution. Accumulation is float32 in fixed order (input channel,
// kernel row, kernel column) per output cell, so results are bit-reproducible
// across runs and thread counts.
Tensor4 conv2d(const Tensor4& x, const ConvParams& p);

// Max pooling; padding cells act as -inf. Requires padding < k so every
// window covers at least one real cell.
Tensor4 maxpool2d(const Tensor4& x, int k, int stride, int padding);

// Elementwise x * sigmoid(x).
Tensor4 silu(const Tensor4& x);

Tensor4 concat_channels(const std::vector<const Tensor4*>& parts);
Tensor4 concat_channels(const std::vector<Tensor4>& parts);

std::vector<Tensor4> split_channels(const Tensor4& x, const std::vector<int>& sizes);

Tensor4 add(const Tensor4& a, const Tensor4& b);

// Each source cell replicated into a 2x2 block.
Tensor4 upsample_nearest2x(const Tensor4& x);

// Raw tensor dump: magic "T4F0", four little-endian u32 dims, then
// n*c*h*w little-endian IEEE-754 float32 values.
void save_tensor(const Tensor4& t, const std::string& path);
Tensor4 load_tensor(const std::string& path);
std::vector<unsigned char> tensor_bytes(const Tensor4& t);

void fill_uniform(Tensor4& t, Rng& rng, float lo, float hi);

}  // namespace litedet
