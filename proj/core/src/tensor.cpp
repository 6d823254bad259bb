#include "litedet/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

namespace litedet {

namespace {

std::string dim_str(int n, int c, int h, int w) {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
}

void append_le32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back((unsigned char)(v & 0xFF));
    out.push_back((unsigned char)((v >> 8) & 0xFF));
    out.push_back((unsigned char)((v >> 16) & 0xFF));
    out.push_back((unsigned char)((v >> 24) & 0xFF));
}

std::uint32_t read_le32(const unsigned char* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

}  // namespace

Tensor4::Tensor4(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {
    if (n < 1 || c < 1 || h < 1 || w < 1)
        throw ShapeError("Tensor4: all dims must be >= 1, got " + dim_str(n, c, h, w));
    data.assign(std::size_t(n) * c * h * w, 0.0f);
}

Tensor4 Tensor4::filled(int n, int c, int h, int w, float value) {
    Tensor4 t(n, c, h, w);
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
}

std::string Tensor4::shape_str() const { return dim_str(n, c, h, w); }

ConvParams::ConvParams(int c_in_, int c_out_, int k, int stride, int pad, int groups_)
    : c_in(c_in_),
      c_out(c_out_),
      k_h(k),
      k_w(k),
      stride_h(stride),
      stride_w(stride),
      pad_h(pad),
      pad_w(pad),
      groups(groups_) {
    validate();
    weight.assign(std::size_t(weight_count()), 0.0f);
    bias.assign(std::size_t(c_out), 0.0f);
}

void ConvParams::validate() const {
    if (c_in < 1 || c_out < 1)
        throw ShapeError("conv: channel counts must be >= 1, got c_in=" + std::to_string(c_in) +
                         " c_out=" + std::to_string(c_out));
    if (k_h < 1 || k_w < 1)
        throw ShapeError("conv: kernel dims must be >= 1");
    if (stride_h < 1 || stride_w < 1)
        throw ConfigError("conv: stride must be positive");
    if (pad_h < 0 || pad_w < 0)
        throw ConfigError("conv: padding must be non-negative");
    if (groups < 1 || c_in % groups != 0)
        throw ShapeError("conv: groups " + std::to_string(groups) + " do not divide c_in " +
                         std::to_string(c_in));
    if (c_out % groups != 0)
        throw ShapeError("conv: groups " + std::to_string(groups) + " do not divide c_out " +
                         std::to_string(c_out));
    if (!weight.empty() && (long long)weight.size() != weight_count())
        throw ShapeError("conv: weight length " + std::to_string(weight.size()) +
                         " != c_out*(c_in/groups)*k_h*k_w = " + std::to_string(weight_count()));
    if (!bias.empty() && (int)bias.size() != c_out)
        throw ShapeError("conv: bias length " + std::to_string(bias.size()) + " != c_out " +
                         std::to_string(c_out));
}

Tensor4 conv2d(const Tensor4& x, const ConvParams& p) {
    p.validate();
    if ((long long)p.weight.size() != p.weight_count())
        throw ShapeError("conv2d: weights not bound (have " + std::to_string(p.weight.size()) +
                         " values, need " + std::to_string(p.weight_count()) + ")");
    if (x.c != p.c_in)
        throw ShapeError("conv2d: input has " + std::to_string(x.c) +
                         " channels, kernel declares c_in=" + std::to_string(p.c_in));
    const int ph = x.h + 2 * p.pad_h, pw = x.w + 2 * p.pad_w;
    if (ph < p.k_h || pw < p.k_w)
        throw ShapeError("conv2d: padded input " + std::to_string(ph) + "x" + std::to_string(pw) +
                         " smaller than kernel " + std::to_string(p.k_h) + "x" +
                         std::to_string(p.k_w));

    const int oh = p.out_h(x.h), ow = p.out_w(x.w);
    const int cin_g = p.c_in / p.groups;
    const int cout_g = p.c_out / p.groups;
    const std::size_t wrow = std::size_t(cin_g) * p.k_h * p.k_w;

    Tensor4 y(x.n, p.c_out, oh, ow);
    for (int in = 0; in < x.n; ++in) {
        for (int oc = 0; oc < p.c_out; ++oc) {
            const int g = oc / cout_g;
            const float* wt = p.weight.data() + std::size_t(oc) * wrow;
            const float b = p.bias.empty() ? 0.0f : p.bias[std::size_t(oc)];
            float* yrow = y.data.data() + y.index(in, oc, 0, 0);
            for (int oy = 0; oy < oh; ++oy) {
                const int iy0 = oy * p.stride_h - p.pad_h;
                for (int ox = 0; ox < ow; ++ox) {
                    const int ix0 = ox * p.stride_w - p.pad_w;
                    float acc = 0.0f;  // fixed ic -> ky -> kx order
                    std::size_t k = 0;
                    for (int ic = 0; ic < cin_g; ++ic) {
                        const float* xc =
                            x.data.data() + x.index(in, g * cin_g + ic, 0, 0);
                        for (int ky = 0; ky < p.k_h; ++ky) {
                            const int iy = iy0 + ky;
                            if (iy < 0 || iy >= x.h) {
                                k += std::size_t(p.k_w);
                                continue;
                            }
                            const float* xr = xc + std::size_t(iy) * x.w;
                            for (int kx = 0; kx < p.k_w; ++kx, ++k) {
                                const int ix = ix0 + kx;
                                if (ix < 0 || ix >= x.w) continue;
                                acc += wt[k] * xr[ix];
                            }
                        }
                    }
                    yrow[std::size_t(oy) * ow + ox] = acc + b;
                }
            }
        }
    }
    return y;
}

Tensor4 maxpool2d(const Tensor4& x, int k, int stride, int padding) {
    if (k < 1) throw ConfigError("maxpool2d: window must be >= 1");
    if (stride < 1) throw ConfigError("maxpool2d: stride must be positive");
    if (padding < 0) throw ConfigError("maxpool2d: padding must be non-negative");
    if (padding >= k)
        throw ConfigError("maxpool2d: padding " + std::to_string(padding) +
                          " must be smaller than window " + std::to_string(k));
    const int ph = x.h + 2 * padding, pw = x.w + 2 * padding;
    if (k > ph || k > pw)
        throw ShapeError("maxpool2d: window " + std::to_string(k) + " larger than padded input " +
                         std::to_string(ph) + "x" + std::to_string(pw));

    const int oh = (ph - k) / stride + 1;
    const int ow = (pw - k) / stride + 1;
    Tensor4 y(x.n, x.c, oh, ow);
    for (int in = 0; in < x.n; ++in) {
        for (int ic = 0; ic < x.c; ++ic) {
            for (int oy = 0; oy < oh; ++oy) {
                const int iy0 = oy * stride - padding;
                for (int ox = 0; ox < ow; ++ox) {
                    const int ix0 = ox * stride - padding;
                    float m = -std::numeric_limits<float>::infinity();
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= x.h) continue;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= x.w) continue;
                            const float v = x.at(in, ic, iy, ix);
                            if (v > m) m = v;
                        }
                    }
                    y.at(in, ic, oy, ox) = m;
                }
            }
        }
    }
    return y;
}

Tensor4 silu(const Tensor4& x) {
    Tensor4 y = x;
    for (float& v : y.data) v = v / (1.0f + std::exp(-v));
    return y;
}

Tensor4 concat_channels(const std::vector<const Tensor4*>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    const Tensor4& first = *parts[0];
    int total_c = 0;
    for (const Tensor4* p : parts) {
        if (p->n != first.n || p->h != first.h || p->w != first.w)
            throw ShapeError("concat_channels: part " + p->shape_str() +
                             " does not match leading part " + first.shape_str() +
                             " in batch/spatial dims");
        total_c += p->c;
    }
    Tensor4 y(first.n, total_c, first.h, first.w);
    const std::size_t plane = std::size_t(first.h) * first.w;
    for (int in = 0; in < first.n; ++in) {
        std::size_t dst = y.index(in, 0, 0, 0);
        for (const Tensor4* p : parts) {
            const std::size_t len = std::size_t(p->c) * plane;
            std::memcpy(y.data.data() + dst, p->data.data() + p->index(in, 0, 0, 0),
                        len * sizeof(float));
            dst += len;
        }
    }
    return y;
}

Tensor4 concat_channels(const std::vector<Tensor4>& parts) {
    std::vector<const Tensor4*> ptrs;
    ptrs.reserve(parts.size());
    for (const Tensor4& p : parts) ptrs.push_back(&p);
    return concat_channels(ptrs);
}

std::vector<Tensor4> split_channels(const Tensor4& x, const std::vector<int>& sizes) {
    int total = 0;
    for (int s : sizes) {
        if (s < 1) throw ShapeError("split_channels: sizes must be >= 1");
        total += s;
    }
    if (total != x.c)
        throw ShapeError("split_channels: sizes sum to " + std::to_string(total) +
                         " but input has " + std::to_string(x.c) + " channels");
    std::vector<Tensor4> out;
    out.reserve(sizes.size());
    const std::size_t plane = std::size_t(x.h) * x.w;
    int c0 = 0;
    for (int s : sizes) {
        Tensor4 part(x.n, s, x.h, x.w);
        for (int in = 0; in < x.n; ++in) {
            std::memcpy(part.data.data() + part.index(in, 0, 0, 0),
                        x.data.data() + x.index(in, c0, 0, 0),
                        std::size_t(s) * plane * sizeof(float));
        }
        out.push_back(std::move(part));
        c0 += s;
    }
    return out;
}

Tensor4 add(const Tensor4& a, const Tensor4& b) {
    if (!a.same_shape(b))
        throw ShapeError("add: shape " + a.shape_str() + " != " + b.shape_str());
    Tensor4 y = a;
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += b.data[i];
    return y;
}

Tensor4 upsample_nearest2x(const Tensor4& x) {
    Tensor4 y(x.n, x.c, x.h * 2, x.w * 2);
    for (int in = 0; in < x.n; ++in)
        for (int ic = 0; ic < x.c; ++ic)
            for (int iy = 0; iy < x.h; ++iy)
                for (int ix = 0; ix < x.w; ++ix) {
                    const float v = x.at(in, ic, iy, ix);
                    y.at(in, ic, 2 * iy, 2 * ix) = v;
                    y.at(in, ic, 2 * iy, 2 * ix + 1) = v;
                    y.at(in, ic, 2 * iy + 1, 2 * ix) = v;
                    y.at(in, ic, 2 * iy + 1, 2 * ix + 1) = v;
                }
    return y;
}

std::vector<unsigned char> tensor_bytes(const Tensor4& t) {
    std::vector<unsigned char> out;
    out.reserve(20 + t.data.size() * 4);
    out.push_back('T');
    out.push_back('4');
    out.push_back('F');
    out.push_back('0');
    append_le32(out, (std::uint32_t)t.n);
    append_le32(out, (std::uint32_t)t.c);
    append_le32(out, (std::uint32_t)t.h);
    append_le32(out, (std::uint32_t)t.w);
    for (float v : t.data) append_le32(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

void save_tensor(const Tensor4& t, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("save_tensor: cannot open '" + path + "' for writing");
    const std::vector<unsigned char> bytes = tensor_bytes(t);
    f.write(reinterpret_cast<const char*>(bytes.data()), (std::streamsize)bytes.size());
    if (!f) throw IoError("save_tensor: write failed for '" + path + "'");
}

Tensor4 load_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("load_tensor: cannot open '" + path + "'");
    unsigned char header[20];
    f.read(reinterpret_cast<char*>(header), 20);
    if (f.gcount() != 20 || header[0] != 'T' || header[1] != '4' || header[2] != 'F' ||
        header[3] != '0')
        throw IoError("load_tensor: '" + path + "' is not a T4F0 file");
    const std::uint32_t n = read_le32(header + 4), c = read_le32(header + 8),
                        h = read_le32(header + 12), w = read_le32(header + 16);
    if (n < 1 || c < 1 || h < 1 || w < 1 || (std::uint64_t)n * c * h * w > (1u << 30))
        throw IoError("load_tensor: '" + path + "' has implausible dims");
    Tensor4 t((int)n, (int)c, (int)h, (int)w);
    std::vector<unsigned char> payload(t.size() * 4);
    f.read(reinterpret_cast<char*>(payload.data()), (std::streamsize)payload.size());
    if ((std::size_t)f.gcount() != payload.size())
        throw IoError("load_tensor: '" + path + "' truncated");
    for (std::size_t i = 0; i < t.size(); ++i)
        t.data[i] = std::bit_cast<float>(read_le32(payload.data() + 4 * i));
    return t;
}

void fill_uniform(Tensor4& t, Rng& rng, float lo, float hi) {
    for (float& v : t.data) v = (float)rng.uniform(lo, hi);
}

}  // namespace litedet
