#pragma once

// Shared test utilities: an independent direct-convolution reference (double
// accumulation, different loop structure from the library path), random
// tensor construction, fixture paths and a small subprocess runner.

#include <array>
#include <cstdio>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "litedet/rng.hpp"
#include "litedet/tensor.hpp"

namespace testutil {

inline std::string fixture(const std::string& name) {
    return std::string(LITEDET_FIXTURE_DIR) + "/" + name;
}

inline litedet::Tensor4 random_tensor(litedet::Rng& rng, int n, int c, int h, int w,
                                      float lo = -1.0f, float hi = 1.0f) {
    litedet::Tensor4 t(n, c, h, w);
    litedet::fill_uniform(t, rng, lo, hi);
    return t;
}

inline void randomize(litedet::ConvParams& p, litedet::Rng& rng, float scale = 0.5f) {
    for (float& v : p.weight) v = (float)rng.uniform(-scale, scale);
    for (float& v : p.bias) v = (float)rng.uniform(-scale, scale);
}

// Output-centric gather with double accumulation; no shared code with
// litedet::conv2d beyond the Tensor4 layout.
inline litedet::Tensor4 conv2d_reference(const litedet::Tensor4& x, const litedet::ConvParams& p) {
    const int oh = p.out_h(x.h), ow = p.out_w(x.w);
    const int cin_g = p.c_in / p.groups, cout_g = p.c_out / p.groups;
    litedet::Tensor4 y(x.n, p.c_out, oh, ow);
    for (int in = 0; in < x.n; ++in)
        for (int oc = 0; oc < p.c_out; ++oc)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = p.bias.empty() ? 0.0 : p.bias[std::size_t(oc)];
                    const int g = oc / cout_g;
                    for (int ky = 0; ky < p.k_h; ++ky)
                        for (int kx = 0; kx < p.k_w; ++kx) {
                            const int iy = oy * p.stride_h - p.pad_h + ky;
                            const int ix = ox * p.stride_w - p.pad_w + kx;
                            if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                            for (int ic = 0; ic < cin_g; ++ic) {
                                const std::size_t widx =
                                    ((std::size_t(oc) * cin_g + ic) * p.k_h + ky) * p.k_w + kx;
                                acc += double(p.weight[widx]) *
                                       double(x.at(in, g * cin_g + ic, iy, ix));
                            }
                        }
                    y.at(in, oc, oy, ox) = float(acc);
                }
    return y;
}

inline float max_abs_diff(const litedet::Tensor4& a, const litedet::Tensor4& b) {
    if (!a.same_shape(b)) return 1e30f;
    float m = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const float d = std::abs(a.data[i] - b.data[i]);
        if (d > m) m = d;
    }
    return m;
}

struct CmdResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

inline CmdResult run_cmd(const std::string& cmd) {
    CmdResult r;
    FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
    if (!pipe) return r;
    char buf[4096];
    while (std::size_t n = fread(buf, 1, sizeof(buf), pipe)) r.output.append(buf, n);
    const int status = pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

inline std::string cli_path() {
#ifdef LITEDET_CLI_PATH
    return LITEDET_CLI_PATH;
#else
    return "litedet";
#endif
}

inline std::vector<unsigned char> read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::vector<unsigned char>((std::istreambuf_iterator<char>(f)),
                                      std::istreambuf_iterator<char>());
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    f << text;
}

}  // namespace testutil
