#include "kernels.hpp"

#include <algorithm>
#include <vector>

#include "nesr/common.hpp"

namespace nesr::kern {

namespace {

constexpr std::size_t kReduceSlabs = 8;  // fixed regardless of worker count

template <class T>
inline T apply_act(T v, Act act, T slope) {
    switch (act) {
        case Act::None:
            return v;
        case Act::Relu:
            return v > T(0) ? v : T(0);
        case Act::LeakyRelu:
            return v > T(0) ? v : slope * v;
    }
    return v;
}

// Register-tiled microkernel: MR rows x NR columns of C held in registers
// across the whole k loop. a_stride is the distance between consecutive k
// entries of one logical row of A (1 for transposed-A layouts, lda for
// row-major A).
template <class T, int MR, int NR>
inline void micro_nn(const T* __restrict a0, std::size_t a_stride, std::size_t a_row_stride,
                     const T* __restrict b, std::size_t ldb, const T* __restrict bias,
                     T* __restrict c, std::size_t ldc, std::size_t k, Act act, T slope,
                     bool accumulate) {
    T acc[MR][NR];
    for (int m = 0; m < MR; ++m) {
        if (accumulate) {
            for (int j = 0; j < NR; ++j) acc[m][j] = c[m * ldc + j];
        } else if (bias) {
            for (int j = 0; j < NR; ++j) acc[m][j] = bias[j];
        } else {
            for (int j = 0; j < NR; ++j) acc[m][j] = T(0);
        }
    }
    for (std::size_t kk = 0; kk < k; ++kk) {
        const T* brow = b + kk * ldb;
        for (int m = 0; m < MR; ++m) {
            const T av = a0[m * a_row_stride + kk * a_stride];
            for (int j = 0; j < NR; ++j) acc[m][j] += av * brow[j];
        }
    }
    for (int m = 0; m < MR; ++m) {
        for (int j = 0; j < NR; ++j) c[m * ldc + j] = apply_act(acc[m][j], act, slope);
    }
}

// Narrow-column tail with runtime width (< NR2 elements).
template <class T, int MR>
inline void micro_nn_tail(const T* __restrict a0, std::size_t a_stride,
                          std::size_t a_row_stride, const T* __restrict b, std::size_t ldb,
                          const T* __restrict bias, T* __restrict c, std::size_t ldc,
                          std::size_t k, std::size_t width, Act act, T slope, bool accumulate) {
    constexpr int kMaxTail = 64;
    T acc[MR][kMaxTail];
    for (int m = 0; m < MR; ++m) {
        if (accumulate) {
            for (std::size_t j = 0; j < width; ++j) acc[m][j] = c[m * ldc + j];
        } else if (bias) {
            for (std::size_t j = 0; j < width; ++j) acc[m][j] = bias[j];
        } else {
            for (std::size_t j = 0; j < width; ++j) acc[m][j] = T(0);
        }
    }
    for (std::size_t kk = 0; kk < k; ++kk) {
        const T* brow = b + kk * ldb;
        for (int m = 0; m < MR; ++m) {
            const T av = a0[m * a_row_stride + kk * a_stride];
            for (std::size_t j = 0; j < width; ++j) acc[m][j] += av * brow[j];
        }
    }
    for (int m = 0; m < MR; ++m) {
        for (std::size_t j = 0; j < width; ++j) {
            c[m * ldc + j] = apply_act(acc[m][j], act, slope);
        }
    }
}

// Shared row-block driver over the column dimension for both A layouts.
template <class T, int MR>
inline void row_block(const T* a0, std::size_t a_stride, std::size_t a_row_stride, const T* b,
                      std::size_t ldb, const T* bias, T* c, std::size_t ldc, std::size_t k,
                      std::size_t n, Act act, T slope, bool accumulate) {
    constexpr int NR1 = 256 / sizeof(T);  // 64 floats / 32 doubles
    constexpr int NR2 = 128 / sizeof(T);
    constexpr int NR3 = 64 / sizeof(T);
    std::size_t j = 0;
    for (; j + NR1 <= n; j += NR1) {
        micro_nn<T, MR, NR1>(a0, a_stride, a_row_stride, b + j, ldb, bias ? bias + j : nullptr,
                             c + j, ldc, k, act, slope, accumulate);
    }
    for (; j + NR2 <= n; j += NR2) {
        micro_nn<T, MR, NR2>(a0, a_stride, a_row_stride, b + j, ldb, bias ? bias + j : nullptr,
                             c + j, ldc, k, act, slope, accumulate);
    }
    for (; j + NR3 <= n; j += NR3) {
        micro_nn<T, MR, NR3>(a0, a_stride, a_row_stride, b + j, ldb, bias ? bias + j : nullptr,
                             c + j, ldc, k, act, slope, accumulate);
    }
    if (j < n) {
        micro_nn_tail<T, MR>(a0, a_stride, a_row_stride, b + j, ldb, bias ? bias + j : nullptr,
                             c + j, ldc, k, n - j, act, slope, accumulate);
    }
}

// Very narrow outputs (n below one vector) run as row dots against a
// transposed copy of B so the k loop stays contiguous.
template <class T>
void gemm_nn_narrow(const T* a, std::size_t lda, const T* b, std::size_t ldb, const T* bias,
                    T* c, std::size_t ldc, std::size_t /*m*/, std::size_t k, std::size_t n, Act act,
                    T slope, std::size_t i_begin, std::size_t i_end) {
    std::vector<T> bt(n * k);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t kk = 0; kk < k; ++kk) bt[j * k + kk] = b[kk * ldb + j];
    }
    for (std::size_t i = i_begin; i < i_end; ++i) {
        const T* arow = a + i * lda;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = bt.data() + j * k;
            T s = 0;
            for (std::size_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
            c[i * ldc + j] = apply_act(s + (bias ? bias[j] : T(0)), act, slope);
        }
    }
}

template <class T>
void gemm_nn_range(const T* a, const T* b, const T* bias, T* c, std::size_t m, std::size_t k,
                   std::size_t n, Act act, T slope, std::size_t i_begin, std::size_t i_end) {
    constexpr std::size_t kMinWide = 64 / sizeof(T);
    if (n < kMinWide) {
        gemm_nn_narrow(a, k, b, n, bias, c, n, m, k, n, act, slope, i_begin, i_end);
        return;
    }
    std::size_t i = i_begin;
    for (; i + 8 <= i_end; i += 8) {
        row_block<T, 8>(a + i * k, 1, k, b, n, bias, c + i * n, n, k, n, act, slope, false);
    }
    for (; i + 4 <= i_end; i += 4) {
        row_block<T, 4>(a + i * k, 1, k, b, n, bias, c + i * n, n, k, n, act, slope, false);
    }
    for (; i < i_end; ++i) {
        row_block<T, 1>(a + i * k, 1, k, b, n, bias, c + i * n, n, k, n, act, slope, false);
    }
}

}  // namespace

template <class T>
void gemm_nn(const T* a, const T* b, const T* bias, T* c, std::size_t m, std::size_t k,
             std::size_t n, Act act, T slope) {
    parallel_for(m, [&](std::size_t i_begin, std::size_t i_end) {
        gemm_nn_range(a, b, bias, c, m, k, n, act, slope, i_begin, i_end);
    });
}

namespace {

template <class T, int MR, int JR>
inline void micro_nt(const T* __restrict a, std::size_t lda, const T* __restrict b,
                     std::size_t ldb, T* __restrict c, std::size_t ldc, std::size_t k) {
    T acc[MR][JR] = {};
    for (std::size_t kk = 0; kk < k; ++kk) {
        for (int m = 0; m < MR; ++m) {
            const T av = a[m * lda + kk];
            for (int j = 0; j < JR; ++j) acc[m][j] += av * b[j * ldb + kk];
        }
    }
    for (int m = 0; m < MR; ++m) {
        for (int j = 0; j < JR; ++j) c[m * ldc + j] = acc[m][j];
    }
}

template <class T>
void gemm_nt_range(const T* a, const T* b, T* c, std::size_t /*m*/, std::size_t k, std::size_t n,
                   std::size_t i_begin, std::size_t i_end) {
    constexpr int JR = 4;
    std::size_t i = i_begin;
    for (; i + 2 <= i_end; i += 2) {
        std::size_t j = 0;
        for (; j + JR <= n; j += JR) {
            micro_nt<T, 2, JR>(a + i * k, k, b + j * k, k, c + i * n + j, n, k);
        }
        for (; j < n; ++j) {
            micro_nt<T, 2, 1>(a + i * k, k, b + j * k, k, c + i * n + j, n, k);
        }
    }
    for (; i < i_end; ++i) {
        std::size_t j = 0;
        for (; j + JR <= n; j += JR) {
            micro_nt<T, 1, JR>(a + i * k, k, b + j * k, k, c + i * n + j, n, k);
        }
        for (; j < n; ++j) {
            micro_nt<T, 1, 1>(a + i * k, k, b + j * k, k, c + i * n + j, n, k);
        }
    }
}

}  // namespace

template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    // When B is small enough to keep a transposed copy cache-resident, the
    // nn microkernel is much faster than the dot form.
    if (n * k * sizeof(T) <= (1u << 21)) {
        std::vector<T> bt(k * n);
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t kk = 0; kk < k; ++kk) bt[kk * n + j] = b[j * k + kk];
        }
        gemm_nn(a, bt.data(), static_cast<const T*>(nullptr), c, m, k, n, Act::None, T(0));
        return;
    }
    parallel_for(m, [&](std::size_t i_begin, std::size_t i_end) {
        gemm_nt_range(a, b, c, m, k, n, i_begin, i_end);
    });
}

namespace {

// A^T * B over one k range, accumulated into part [m x n]. Blocks k so the
// active B panel stays cache-resident while the output tile is revisited.
template <class T>
void gemm_tn_slab(const T* a, const T* b, T* part, std::size_t m, std::size_t k0, std::size_t k1,
                  std::size_t n) {
    constexpr std::size_t kBlock = 512;
    bool first = true;
    for (std::size_t kb = k0; kb < k1; kb += kBlock) {
        const std::size_t ke = std::min(kb + kBlock, k1);
        const std::size_t klen = ke - kb;
        std::size_t i = 0;
        for (; i + 8 <= m; i += 8) {
            // A column block: element (row kk, col i+mm) at a[kk*m + i+mm]
            row_block<T, 8>(a + kb * m + i, m, 1, b + kb * n, n, nullptr, part + i * n, n, klen,
                            n, Act::None, T(0), !first);
        }
        for (; i + 4 <= m; i += 4) {
            row_block<T, 4>(a + kb * m + i, m, 1, b + kb * n, n, nullptr, part + i * n, n, klen,
                            n, Act::None, T(0), !first);
        }
        for (; i < m; ++i) {
            row_block<T, 1>(a + kb * m + i, m, 1, b + kb * n, n, nullptr, part + i * n, n, klen,
                            n, Act::None, T(0), !first);
        }
        first = false;
    }
}

}  // namespace

template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    // Reduction over k crosses the output tile, so slab partials keep a fixed
    // summation order for any worker count.
    const std::size_t slabs = std::min(kReduceSlabs, std::max<std::size_t>(k, 1));
    std::vector<T> partials(slabs * m * n);
    parallel_for(slabs, [&](std::size_t s_begin, std::size_t s_end) {
        for (std::size_t s = s_begin; s < s_end; ++s) {
            gemm_tn_slab(a, b, partials.data() + s * m * n, m, s * k / slabs,
                         (s + 1) * k / slabs, n);
        }
    });
    std::fill(c, c + m * n, T(0));
    for (std::size_t s = 0; s < slabs; ++s) {
        const T* part = partials.data() + s * m * n;
        for (std::size_t i = 0; i < m * n; ++i) c[i] += part[i];
    }
}

template <class T>
void gemm_nn_serial(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    gemm_nn_range(a, b, static_cast<const T*>(nullptr), c, m, k, n, Act::None, T(0), 0, m);
}

template <class T>
void gemm_nt_serial(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    gemm_nt_range(a, b, c, m, k, n, 0, m);
}

template <class T>
void gemm_tn_serial(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    gemm_tn_slab(a, b, c, m, 0, k, n);
}

template <class T>
void col_sum(const T* a, T* out, std::size_t rows, std::size_t n) {
    const std::size_t slabs = std::min(kReduceSlabs, std::max<std::size_t>(rows, 1));
    std::vector<T> partials(slabs * n);
    parallel_for(slabs, [&](std::size_t s_begin, std::size_t s_end) {
        for (std::size_t s = s_begin; s < s_end; ++s) {
            T* part = partials.data() + s * n;
            std::fill(part, part + n, T(0));
            const std::size_t r0 = s * rows / slabs;
            const std::size_t r1 = (s + 1) * rows / slabs;
            for (std::size_t r = r0; r < r1; ++r) {
                const T* arow = a + r * n;
                for (std::size_t j = 0; j < n; ++j) part[j] += arow[j];
            }
        }
    });
    std::fill(out, out + n, T(0));
    for (std::size_t s = 0; s < slabs; ++s) {
        const T* part = partials.data() + s * n;
        for (std::size_t j = 0; j < n; ++j) out[j] += part[j];
    }
}

template <class T>
void act_forward(const T* x, T* y, std::size_t n, Act act, T slope) {
    parallel_for(n, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) y[i] = apply_act(x[i], act, slope);
    });
}

template <class T>
void act_backward(const T* g, const T* post, T* gpre, std::size_t n, Act act, T slope) {
    parallel_for(n, [&](std::size_t b, std::size_t e) {
        switch (act) {
            case Act::None:
                for (std::size_t i = b; i < e; ++i) gpre[i] = g[i];
                break;
            case Act::Relu:
                for (std::size_t i = b; i < e; ++i) gpre[i] = post[i] > T(0) ? g[i] : T(0);
                break;
            case Act::LeakyRelu:
                // post > 0 iff pre > 0 (strictly monotone); at 0 use the
                // negative-side slope.
                for (std::size_t i = b; i < e; ++i) gpre[i] = post[i] > T(0) ? g[i] : slope * g[i];
                break;
        }
    });
}

namespace {

// Copies [c x d x h x w] into a zero-padded [c x (d+2pd) x (h+2ph) x (w+2pw)]
// buffer so the convolution inner loops need no bounds checks.
template <class T>
std::vector<T> pad_volume(const T* in, std::size_t c, std::size_t d, std::size_t h, std::size_t w,
                          std::size_t pd, std::size_t ph, std::size_t pw) {
    const std::size_t dp = d + 2 * pd, hp = h + 2 * ph, wp = w + 2 * pw;
    std::vector<T> out(c * dp * hp * wp, T(0));
    for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t z = 0; z < d; ++z) {
            for (std::size_t y = 0; y < h; ++y) {
                const T* src = in + ((ci * d + z) * h + y) * w;
                T* dst = out.data() + ((ci * dp + z + pd) * hp + y + ph) * wp + pw;
                std::copy(src, src + w, dst);
            }
        }
    }
    return out;
}

// Output row segment accumulated in registers across all kernel taps. KW is
// the compile-time tap count of the innermost spatial axis; the per-tap
// weights are hoisted so each j step is KW shifted fused multiply-adds.
template <class T, int KW, int XB>
inline void conv_row_block(const T* __restrict pin, const T* __restrict kb, T* __restrict out,
                           std::size_t x0, std::size_t ci, std::size_t kd, std::size_t kh,
                           std::size_t dp, std::size_t hp, std::size_t wp, std::size_t z,
                           std::size_t y, T bias_v) {
    T acc[XB];
    for (int j = 0; j < XB; ++j) acc[j] = bias_v;
    for (std::size_t ic = 0; ic < ci; ++ic) {
        for (std::size_t a = 0; a < kd; ++a) {
            for (std::size_t b = 0; b < kh; ++b) {
                const T* prow = pin + ((ic * dp + z + a) * hp + y + b) * wp + x0;
                const T* krow = kb + ((ic * kd + a) * kh + b) * KW;
                if constexpr (KW == 3) {
                    const T k0 = krow[0], k1 = krow[1], k2 = krow[2];
                    for (int j = 0; j < XB; ++j) {
                        acc[j] += k0 * prow[j] + k1 * prow[j + 1] + k2 * prow[j + 2];
                    }
                } else {
                    const T k0 = krow[0];
                    for (int j = 0; j < XB; ++j) acc[j] += k0 * prow[j];
                }
            }
        }
    }
    for (int j = 0; j < XB; ++j) out[x0 + j] = acc[j];
}

template <class T, int KW>
void conv_forward_fixed(const T* pin, const T* ker, const T* bias, T* out, std::size_t ci,
                        std::size_t co, std::size_t d, std::size_t h, std::size_t w,
                        std::size_t kd, std::size_t dp, std::size_t hp, std::size_t wp) {
    parallel_for(co * d, [&](std::size_t u_begin, std::size_t u_end) {
        for (std::size_t u = u_begin; u < u_end; ++u) {
            const std::size_t oc = u / d;
            const std::size_t z = u % d;
            const std::size_t kh = KW == 1 ? 1 : 3;
            const T* kb = ker + oc * ci * kd * kh * KW;
            const T bv = bias ? bias[oc] : T(0);
            for (std::size_t y = 0; y < h; ++y) {
                T* orow = out + ((oc * d + z) * h + y) * w;
                std::size_t x = 0;
                for (; x + 32 <= w; x += 32) {
                    conv_row_block<T, KW, 32>(pin, kb, orow, x, ci, kd, kh, dp, hp, wp, z, y, bv);
                }
                for (; x + 8 <= w; x += 8) {
                    conv_row_block<T, KW, 8>(pin, kb, orow, x, ci, kd, kh, dp, hp, wp, z, y, bv);
                }
                for (; x < w; ++x) {
                    conv_row_block<T, KW, 1>(pin, kb, orow, x, ci, kd, kh, dp, hp, wp, z, y, bv);
                }
            }
        }
    });
}

template <class T>
void conv_forward_generic(const T* pin, const T* ker, const T* bias, T* out, std::size_t ci,
                          std::size_t co, std::size_t d, std::size_t h, std::size_t w,
                          std::size_t kd, std::size_t kh, std::size_t kw, std::size_t dp,
                          std::size_t hp, std::size_t wp) {
    parallel_for(co * d, [&](std::size_t u_begin, std::size_t u_end) {
        for (std::size_t u = u_begin; u < u_end; ++u) {
            const std::size_t oc = u / d;
            const std::size_t z = u % d;
            const T* kbase = ker + oc * ci * kd * kh * kw;
            for (std::size_t y = 0; y < h; ++y) {
                T* orow = out + ((oc * d + z) * h + y) * w;
                const T bv = bias ? bias[oc] : T(0);
                for (std::size_t x = 0; x < w; ++x) orow[x] = bv;
                for (std::size_t ic = 0; ic < ci; ++ic) {
                    for (std::size_t a = 0; a < kd; ++a) {
                        for (std::size_t b = 0; b < kh; ++b) {
                            const T* prow = pin + ((ic * dp + z + a) * hp + y + b) * wp;
                            const T* krow = kbase + ((ic * kd + a) * kh + b) * kw;
                            for (std::size_t cc = 0; cc < kw; ++cc) {
                                const T kv = krow[cc];
                                const T* psrc = prow + cc;
                                for (std::size_t x = 0; x < w; ++x) orow[x] += kv * psrc[x];
                            }
                        }
                    }
                }
            }
        }
    });
}

}  // namespace

template <class T>
void conv_forward(const T* in, const T* ker, const T* bias, T* out, std::size_t ci,
                  std::size_t co, std::size_t d, std::size_t h, std::size_t w, std::size_t kd,
                  std::size_t kh, std::size_t kw) {
    const std::size_t pd = (kd - 1) / 2, ph = (kh - 1) / 2, pw = (kw - 1) / 2;
    const std::size_t dp = d + 2 * pd, hp = h + 2 * ph, wp = w + 2 * pw;
    const std::vector<T> padded = pad_volume(in, ci, d, h, w, pd, ph, pw);
    const T* pin = padded.data();
    if (kh == 3 && kw == 3) {
        conv_forward_fixed<T, 3>(pin, ker, bias, out, ci, co, d, h, w, kd, dp, hp, wp);
    } else if (kh == 1 && kw == 1) {
        conv_forward_fixed<T, 1>(pin, ker, bias, out, ci, co, d, h, w, kd, dp, hp, wp);
    } else {
        conv_forward_generic(pin, ker, bias, out, ci, co, d, h, w, kd, kh, kw, dp, hp, wp);
    }
}

namespace {

// Flipped-kernel correlation for the input gradient, same register tiling.
template <class T, int KW, int XB>
inline void convb_row_block(const T* __restrict pg, const T* __restrict ker, T* __restrict out,
                            std::size_t x0, std::size_t ic, std::size_t ci, std::size_t co,
                            std::size_t kd, std::size_t kh, std::size_t dp, std::size_t hp,
                            std::size_t wp, std::size_t z, std::size_t y) {
    T acc[XB] = {};
    for (std::size_t oc = 0; oc < co; ++oc) {
        const T* kbase = ker + (oc * ci + ic) * kd * kh * KW;
        for (std::size_t a = 0; a < kd; ++a) {
            for (std::size_t b = 0; b < kh; ++b) {
                const T* prow = pg + ((oc * dp + z + a) * hp + y + b) * wp + x0;
                const T* krow = kbase + ((kd - 1 - a) * kh + (kh - 1 - b)) * KW;
                if constexpr (KW == 3) {
                    const T k0 = krow[2], k1 = krow[1], k2 = krow[0];
                    for (int j = 0; j < XB; ++j) {
                        acc[j] += k0 * prow[j] + k1 * prow[j + 1] + k2 * prow[j + 2];
                    }
                } else {
                    const T k0 = krow[0];
                    for (int j = 0; j < XB; ++j) acc[j] += k0 * prow[j];
                }
            }
        }
    }
    for (int j = 0; j < XB; ++j) out[x0 + j] = acc[j];
}

template <class T, int KW>
void conv_backward_input_fixed(const T* pg, const T* ker, T* gin, std::size_t ci, std::size_t co,
                               std::size_t d, std::size_t h, std::size_t w, std::size_t kd,
                               std::size_t dp, std::size_t hp, std::size_t wp) {
    const std::size_t kh = KW == 1 ? 1 : 3;
    parallel_for(ci * d, [&](std::size_t u_begin, std::size_t u_end) {
        for (std::size_t u = u_begin; u < u_end; ++u) {
            const std::size_t ic = u / d;
            const std::size_t z = u % d;
            for (std::size_t y = 0; y < h; ++y) {
                T* grow = gin + ((ic * d + z) * h + y) * w;
                std::size_t x = 0;
                for (; x + 32 <= w; x += 32) {
                    convb_row_block<T, KW, 32>(pg, ker, grow, x, ic, ci, co, kd, kh, dp, hp, wp,
                                               z, y);
                }
                for (; x + 8 <= w; x += 8) {
                    convb_row_block<T, KW, 8>(pg, ker, grow, x, ic, ci, co, kd, kh, dp, hp, wp,
                                              z, y);
                }
                for (; x < w; ++x) {
                    convb_row_block<T, KW, 1>(pg, ker, grow, x, ic, ci, co, kd, kh, dp, hp, wp,
                                              z, y);
                }
            }
        }
    });
}

}  // namespace

template <class T>
void conv_backward_input(const T* gout, const T* ker, T* gin, std::size_t ci, std::size_t co,
                         std::size_t d, std::size_t h, std::size_t w, std::size_t kd,
                         std::size_t kh, std::size_t kw) {
    // gin = gout (zero-padded) correlated with the kernel flipped on every
    // spatial axis and transposed in (co, ci).
    const std::size_t pd = (kd - 1) / 2, ph = (kh - 1) / 2, pw = (kw - 1) / 2;
    const std::size_t dp = d + 2 * pd, hp = h + 2 * ph, wp = w + 2 * pw;
    const std::vector<T> padded = pad_volume(gout, co, d, h, w, pd, ph, pw);
    const T* pg = padded.data();
    if (kh == 3 && kw == 3) {
        conv_backward_input_fixed<T, 3>(pg, ker, gin, ci, co, d, h, w, kd, dp, hp, wp);
        return;
    }
    if (kh == 1 && kw == 1) {
        conv_backward_input_fixed<T, 1>(pg, ker, gin, ci, co, d, h, w, kd, dp, hp, wp);
        return;
    }
    parallel_for(ci * d, [&](std::size_t u_begin, std::size_t u_end) {
        for (std::size_t u = u_begin; u < u_end; ++u) {
            const std::size_t ic = u / d;
            const std::size_t z = u % d;
            for (std::size_t y = 0; y < h; ++y) {
                T* grow = gin + ((ic * d + z) * h + y) * w;
                for (std::size_t x = 0; x < w; ++x) grow[x] = T(0);
                for (std::size_t oc = 0; oc < co; ++oc) {
                    const T* kbase = ker + (oc * ci + ic) * kd * kh * kw;
                    for (std::size_t a = 0; a < kd; ++a) {
                        for (std::size_t b = 0; b < kh; ++b) {
                            const T* prow = pg + ((oc * dp + z + a) * hp + y + b) * wp;
                            const T* krow = kbase + ((kd - 1 - a) * kh + (kh - 1 - b)) * kw;
                            for (std::size_t cc = 0; cc < kw; ++cc) {
                                const T kv = krow[kw - 1 - cc];
                                const T* psrc = prow + cc;
                                for (std::size_t x = 0; x < w; ++x) grow[x] += kv * psrc[x];
                            }
                        }
                    }
                }
            }
        }
    });
}

template <class T>
void conv_backward_kernel(const T* in, const T* gout, T* gker, T* gbias, std::size_t ci,
                          std::size_t co, std::size_t d, std::size_t h, std::size_t w,
                          std::size_t kd, std::size_t kh, std::size_t kw) {
    const std::size_t pd = (kd - 1) / 2, ph = (kh - 1) / 2, pw = (kw - 1) / 2;
    const std::size_t dp = d + 2 * pd, hp = h + 2 * ph, wp = w + 2 * pw;
    const std::vector<T> padded = pad_volume(in, ci, d, h, w, pd, ph, pw);
    const T* pin = padded.data();
    parallel_for(co * ci, [&](std::size_t u_begin, std::size_t u_end) {
        for (std::size_t u = u_begin; u < u_end; ++u) {
            const std::size_t oc = u / ci;
            const std::size_t ic = u % ci;
            T* kslot = gker + u * kd * kh * kw;
            for (std::size_t a = 0; a < kd; ++a) {
                for (std::size_t b = 0; b < kh; ++b) {
                    if (kw == 3) {
                        // three sliding dots sharing the row loads
                        T s0 = 0, s1 = 0, s2 = 0;
                        for (std::size_t z = 0; z < d; ++z) {
                            for (std::size_t y = 0; y < h; ++y) {
                                const T* __restrict grow = gout + ((oc * d + z) * h + y) * w;
                                const T* __restrict prow =
                                    pin + ((ic * dp + z + a) * hp + y + b) * wp;
                                for (std::size_t x = 0; x < w; ++x) {
                                    const T gv = grow[x];
                                    s0 += gv * prow[x];
                                    s1 += gv * prow[x + 1];
                                    s2 += gv * prow[x + 2];
                                }
                            }
                        }
                        kslot[(a * kh + b) * 3 + 0] = s0;
                        kslot[(a * kh + b) * 3 + 1] = s1;
                        kslot[(a * kh + b) * 3 + 2] = s2;
                        continue;
                    }
                    for (std::size_t cc = 0; cc < kw; ++cc) {
                        T s = 0;
                        for (std::size_t z = 0; z < d; ++z) {
                            for (std::size_t y = 0; y < h; ++y) {
                                const T* grow = gout + ((oc * d + z) * h + y) * w;
                                const T* prow =
                                    pin + ((ic * dp + z + a) * hp + y + b) * wp + cc;
                                for (std::size_t x = 0; x < w; ++x) s += grow[x] * prow[x];
                            }
                        }
                        kslot[(a * kh + b) * kw + cc] = s;
                    }
                }
            }
        }
    });
    if (gbias) {
        parallel_for(co, [&](std::size_t b, std::size_t e) {
            for (std::size_t oc = b; oc < e; ++oc) {
                T s = 0;
                const T* g = gout + oc * d * h * w;
                for (std::size_t i = 0; i < d * h * w; ++i) s += g[i];
                gbias[oc] = s;
            }
        });
    }
}

#define NESR_INSTANTIATE_KERN(T)                                                                  \
    template void gemm_nn<T>(const T*, const T*, const T*, T*, std::size_t, std::size_t,         \
                             std::size_t, Act, T);                                               \
    template void gemm_nt<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t);     \
    template void gemm_tn<T>(const T*, const T*, T*, std::size_t, std::size_t, std::size_t);     \
    template void gemm_nn_serial<T>(const T*, const T*, T*, std::size_t, std::size_t,            \
                                    std::size_t);                                                \
    template void gemm_nt_serial<T>(const T*, const T*, T*, std::size_t, std::size_t,            \
                                    std::size_t);                                                \
    template void gemm_tn_serial<T>(const T*, const T*, T*, std::size_t, std::size_t,            \
                                    std::size_t);                                                \
    template void col_sum<T>(const T*, T*, std::size_t, std::size_t);                            \
    template void act_forward<T>(const T*, T*, std::size_t, Act, T);                             \
    template void act_backward<T>(const T*, const T*, T*, std::size_t, Act, T);                  \
    template void conv_forward<T>(const T*, const T*, const T*, T*, std::size_t, std::size_t,    \
                                  std::size_t, std::size_t, std::size_t, std::size_t,            \
                                  std::size_t, std::size_t);                                     \
    template void conv_backward_input<T>(const T*, const T*, T*, std::size_t, std::size_t,       \
                                         std::size_t, std::size_t, std::size_t, std::size_t,     \
                                         std::size_t, std::size_t);                              \
    template void conv_backward_kernel<T>(const T*, const T*, T*, T*, std::size_t, std::size_t,  \
                                          std::size_t, std::size_t, std::size_t, std::size_t,    \
                                          std::size_t, std::size_t);

NESR_INSTANTIATE_KERN(float)
NESR_INSTANTIATE_KERN(double)

}  // namespace nesr::kern
