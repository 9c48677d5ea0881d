#include "nesr/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "kernels.hpp"

namespace nesr {

namespace {

std::atomic<bool> g_check_finite{false};

kern::Act to_kern(Act a) {
    switch (a) {
        case Act::None:
            return kern::Act::None;
        case Act::Relu:
            return kern::Act::Relu;
        case Act::LeakyRelu:
            return kern::Act::LeakyRelu;
    }
    return kern::Act::None;
}

template <class T>
Tape<T>* merge_tape(std::initializer_list<const Tensor<T>*> inputs) {
    Tape<T>* tape = nullptr;
    for (const Tensor<T>* t : inputs) {
        if (!t->on_tape()) continue;
        if (tape && tape != t->tape()) {
            throw UsageError("operation inputs are tracked on different tapes");
        }
        tape = t->tape();
    }
    return tape;
}

template <class T>
int parent_of(const Tensor<T>& t) {
    return t.on_tape() ? t.node() : -1;
}

template <class T>
Tensor<T> finish(Tape<T>* tape, Tensor<T> out, std::vector<int> parents,
                 typename Tape<T>::BackFn back) {
    if (g_check_finite.load(std::memory_order_relaxed) && !out.all_finite()) {
        throw DomainError("operation produced a non-finite value");
    }
    if (!tape) return out;
    std::vector<int> kept;
    for (int p : parents) {
        if (p >= 0) kept.push_back(p);
    }
    return tape->emit(std::move(out), std::move(kept), std::move(back));
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

template <class T, class F>
Tensor<T> elementwise_binary(const Tensor<T>& a, const Tensor<T>& b, F&& f) {
    Tensor<T> out = Tensor<T>::uninit(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    parallel_for(a.size(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) po[i] = f(pa[i], pb[i]);
    });
    return out;
}

}  // namespace

void set_check_finite(bool on) { g_check_finite.store(on, std::memory_order_relaxed); }
bool check_finite_enabled() { return g_check_finite.load(std::memory_order_relaxed); }

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "add");
    Tape<T>* tape = merge_tape<T>({&a, &b});
    Tensor<T> out = elementwise_binary(a, b, [](T x, T y) { return x + y; });
    const int na = parent_of(a), nb = parent_of(b);
    return finish(tape, std::move(out), {na, nb}, [na, nb](Tape<T>& tp, const Tensor<T>& g) {
        if (na >= 0) tp.accumulate(na, g);
        if (nb >= 0) tp.accumulate(nb, g);
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "sub");
    Tape<T>* tape = merge_tape<T>({&a, &b});
    Tensor<T> out = elementwise_binary(a, b, [](T x, T y) { return x - y; });
    const int na = parent_of(a), nb = parent_of(b);
    return finish(tape, std::move(out), {na, nb}, [na, nb](Tape<T>& tp, const Tensor<T>& g) {
        if (na >= 0) tp.accumulate(na, g);
        if (nb >= 0) {
            Tensor<T> neg = Tensor<T>::uninit(g.shape());
            for (std::size_t i = 0; i < g.size(); ++i) neg[i] = -g[i];
            tp.accumulate(nb, neg);
        }
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "mul");
    Tape<T>* tape = merge_tape<T>({&a, &b});
    Tensor<T> out = elementwise_binary(a, b, [](T x, T y) { return x * y; });
    const int na = parent_of(a), nb = parent_of(b);
    Tensor<T> ad = a.detached(), bd = b.detached();
    return finish(tape, std::move(out), {na, nb},
                  [na, nb, ad, bd](Tape<T>& tp, const Tensor<T>& g) {
                      if (na >= 0) {
                          Tensor<T> da = Tensor<T>::uninit(g.shape());
                          for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * bd[i];
                          tp.accumulate(na, da);
                      }
                      if (nb >= 0) {
                          Tensor<T> db = Tensor<T>::uninit(g.shape());
                          for (std::size_t i = 0; i < g.size(); ++i) db[i] = g[i] * ad[i];
                          tp.accumulate(nb, db);
                      }
                  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
    Tape<T>* tape = merge_tape<T>({&a});
    Tensor<T> out = Tensor<T>::uninit(a.shape());
    const T* pa = a.data();
    T* po = out.data();
    parallel_for(a.size(), [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) po[i] = pa[i] * factor;
    });
    const int na = parent_of(a);
    return finish(tape, std::move(out), {na}, [na, factor](Tape<T>& tp, const Tensor<T>& g) {
        if (na < 0) return;
        Tensor<T> da = Tensor<T>::uninit(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * factor;
        tp.accumulate(na, da);
    });
}

namespace {

// 2-d core so the batched case can reuse it. a [M x K], b [K x N].
template <class T>
void matmul2d_backward(Tape<T>& tp, const Tensor<T>& g, int na, int nb, const Tensor<T>& ad,
                       const Tensor<T>& bd, std::size_t off_a, std::size_t off_b,
                       std::size_t off_g, std::size_t m, std::size_t k, std::size_t n, T* da,
                       T* db) {
    (void)tp;
    if (na >= 0) {
        kern::gemm_nt(g.data() + off_g, bd.data() + off_b, da, m, n, k);
    }
    if (nb >= 0) {
        kern::gemm_tn(ad.data() + off_a, g.data() + off_g, db, k, m, n);
    }
}

}  // namespace

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const bool batched = a.rank() == 3;
    if (!((a.rank() == 2 && b.rank() == 2) || (a.rank() == 3 && b.rank() == 3))) {
        throw DimensionError("matmul: expected rank 2x2 or 3x3, got " + shape_str(a.shape()) +
                             " x " + shape_str(b.shape()));
    }
    if (batched && a.extent(0) != b.extent(0)) {
        throw DimensionError("matmul: batch extents disagree " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    const std::size_t nb_batch = batched ? a.extent(0) : 1;
    const std::size_t m = a.extent(batched ? 1 : 0);
    const std::size_t k = a.extent(batched ? 2 : 1);
    const std::size_t kb = b.extent(batched ? 1 : 0);
    const std::size_t n = b.extent(batched ? 2 : 1);
    if (k != kb) {
        throw DimensionError("matmul: inner extents disagree " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    Tape<T>* tape = merge_tape<T>({&a, &b});
    Tensor<T> out = batched ? Tensor<T>::uninit({nb_batch, m, n}) : Tensor<T>::uninit({m, n});
    if (!batched) {
        kern::gemm_nn(a.data(), b.data(), static_cast<const T*>(nullptr), out.data(), m, k, n,
                      kern::Act::None, T(0));
    } else {
        const T* pa = a.data();
        const T* pb = b.data();
        T* po = out.data();
        parallel_for(nb_batch, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) {
                kern::gemm_nn_serial(pa + i * m * k, pb + i * k * n, po + i * m * n, m, k, n);
            }
        });
    }
    const int na = parent_of(a), nbn = parent_of(b);
    Tensor<T> ad = a.detached(), bd = b.detached();
    return finish(tape, std::move(out), {na, nbn},
                  [na, nbn, ad, bd, nb_batch, m, k, n, batched](Tape<T>& tp, const Tensor<T>& g) {
                      Tensor<T> da = na >= 0 ? Tensor<T>::uninit(ad.shape()) : Tensor<T>();
                      Tensor<T> db = nbn >= 0 ? Tensor<T>::uninit(bd.shape()) : Tensor<T>();
                      if (!batched) {
                          matmul2d_backward(tp, g, na, nbn, ad, bd, 0, 0, 0, m, k, n,
                                            na >= 0 ? da.data() : nullptr,
                                            nbn >= 0 ? db.data() : nullptr);
                      } else {
                          const T* pg = g.data();
                          parallel_for(nb_batch, [&](std::size_t lo, std::size_t hi) {
                              for (std::size_t i = lo; i < hi; ++i) {
                                  if (na >= 0) {
                                      kern::gemm_nt_serial(pg + i * m * n, bd.data() + i * k * n,
                                                           da.data() + i * m * k, m, n, k);
                                  }
                                  if (nbn >= 0) {
                                      kern::gemm_tn_serial(ad.data() + i * m * k, pg + i * m * n,
                                                           db.data() + i * k * n, k, m, n);
                                  }
                              }
                          });
                      }
                      if (na >= 0) tp.accumulate(na, da);
                      if (nbn >= 0) tp.accumulate(nbn, db);
                  });
}

template <class T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(0) != b.extent(0)) {
        throw DimensionError("matmul_tn: expected [K x M] x [K x N], got " +
                             shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t k = a.extent(0), m = a.extent(1), n = b.extent(1);
    Tape<T>* tape = merge_tape<T>({&a, &b});
    Tensor<T> out = Tensor<T>::uninit({m, n});
    kern::gemm_tn(a.data(), b.data(), out.data(), m, k, n);
    const int na = parent_of(a), nbn = parent_of(b);
    Tensor<T> ad = a.detached(), bd = b.detached();
    return finish(tape, std::move(out), {na, nbn},
                  [na, nbn, ad, bd, k, m, n](Tape<T>& tp, const Tensor<T>& g) {
                      if (na >= 0) {
                          Tensor<T> da = Tensor<T>::uninit({k, m});
                          kern::gemm_nt(bd.data(), g.data(), da.data(), k, n, m);
                          tp.accumulate(na, da);
                      }
                      if (nbn >= 0) {
                          Tensor<T> db = Tensor<T>::uninit({k, n});
                          kern::gemm_nn(ad.data(), g.data(), static_cast<const T*>(nullptr),
                                        db.data(), k, m, n, kern::Act::None, T(0));
                          tp.accumulate(nbn, db);
                      }
                  });
}

template <class T>
Tensor<T> bmm_nt(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.extent(0) != b.extent(0) ||
        a.extent(2) != b.extent(2)) {
        throw DimensionError("bmm_nt: expected [B x M x K] x [B x N x K], got " +
                             shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t nb_batch = a.extent(0), m = a.extent(1), k = a.extent(2), n = b.extent(1);
    Tape<T>* tape = merge_tape<T>({&a, &b});
    Tensor<T> out = Tensor<T>::uninit({nb_batch, m, n});
    {
        const T* pa = a.data();
        const T* pb = b.data();
        T* po = out.data();
        parallel_for(nb_batch, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) {
                kern::gemm_nt_serial(pa + i * m * k, pb + i * n * k, po + i * m * n, m, k, n);
            }
        });
    }
    const int na = parent_of(a), nbn = parent_of(b);
    Tensor<T> ad = a.detached(), bd = b.detached();
    return finish(tape, std::move(out), {na, nbn},
                  [na, nbn, ad, bd, nb_batch, m, k, n](Tape<T>& tp, const Tensor<T>& g) {
                      Tensor<T> da = na >= 0 ? Tensor<T>::uninit(ad.shape()) : Tensor<T>();
                      Tensor<T> db = nbn >= 0 ? Tensor<T>::uninit(bd.shape()) : Tensor<T>();
                      const T* pg = g.data();
                      parallel_for(nb_batch, [&](std::size_t lo, std::size_t hi) {
                          for (std::size_t i = lo; i < hi; ++i) {
                              if (na >= 0) {
                                  kern::gemm_nn_serial(pg + i * m * n, bd.data() + i * n * k,
                                                       da.data() + i * m * k, m, n, k);
                              }
                              if (nbn >= 0) {
                                  kern::gemm_tn_serial(pg + i * m * n, ad.data() + i * m * k,
                                                       db.data() + i * n * k, n, m, k);
                              }
                          }
                      });
                      if (na >= 0) tp.accumulate(na, da);
                      if (nbn >= 0) tp.accumulate(nbn, db);
                  });
}

template <class T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, Act act,
                 T slope) {
    if (x.rank() != 2 || w.rank() != 2 || bias.rank() != 1) {
        throw DimensionError("affine: expected x [N x In], w [In x Out], bias [Out]");
    }
    if (x.extent(1) != w.extent(0) || w.extent(1) != bias.extent(0)) {
        throw DimensionError("affine: shape mismatch " + shape_str(x.shape()) + " x " +
                             shape_str(w.shape()) + " + " + shape_str(bias.shape()));
    }
    const std::size_t n_rows = x.extent(0), in = x.extent(1), out_dim = w.extent(1);
    Tape<T>* tape = merge_tape<T>({&x, &w, &bias});
    Tensor<T> out = Tensor<T>::uninit({n_rows, out_dim});
    kern::gemm_nn(x.data(), w.data(), bias.data(), out.data(), n_rows, in, out_dim, to_kern(act),
                  slope);
    const int nx = parent_of(x), nw = parent_of(w), nbias = parent_of(bias);
    Tensor<T> xd = x.detached(), wd = w.detached(), post = out.detached();
    return finish(
        tape, std::move(out), {nx, nw, nbias},
        [nx, nw, nbias, xd, wd, post, n_rows, in, out_dim, act, slope](Tape<T>& tp,
                                                                       const Tensor<T>& g) {
            Tensor<T> gpre = g.detached();
            if (act != Act::None) {
                gpre = Tensor<T>::uninit(g.shape());
                kern::act_backward(g.data(), post.data(), gpre.data(), g.size(), to_kern(act),
                                   slope);
            }
            if (nx >= 0) {
                Tensor<T> dx = Tensor<T>::uninit({n_rows, in});
                kern::gemm_nt(gpre.data(), wd.data(), dx.data(), n_rows, out_dim, in);
                tp.accumulate(nx, dx);
            }
            if (nw >= 0) {
                Tensor<T> dw = Tensor<T>::uninit({in, out_dim});
                kern::gemm_tn(xd.data(), gpre.data(), dw.data(), in, n_rows, out_dim);
                tp.accumulate(nw, dw);
            }
            if (nbias >= 0) {
                Tensor<T> db = Tensor<T>::uninit({out_dim});
                kern::col_sum(gpre.data(), db.data(), n_rows, out_dim);
                tp.accumulate(nbias, db);
            }
        });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
    if (a.rank() != 2) {
        throw DimensionError("transpose: expected rank 2, got " + shape_str(a.shape()));
    }
    const std::size_t m = a.extent(0), n = a.extent(1);
    Tape<T>* tape = merge_tape<T>({&a});
    Tensor<T> out = Tensor<T>::uninit({n, m});
    const T* pa = a.data();
    T* po = out.data();
    parallel_for(n, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
            for (std::size_t j = 0; j < m; ++j) po[i * m + j] = pa[j * n + i];
        }
    });
    const int na = parent_of(a);
    return finish(tape, std::move(out), {na}, [na, m, n](Tape<T>& tp, const Tensor<T>& g) {
        if (na < 0) return;
        Tensor<T> da = Tensor<T>::uninit({m, n});
        const T* pg = g.data();
        T* pd = da.data();
        parallel_for(m, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) {
                for (std::size_t j = 0; j < n; ++j) pd[i * n + j] = pg[j * m + i];
            }
        });
        tp.accumulate(na, da);
    });
}

template <class T>
Tensor<T> reshape(const Tensor<T>& a, std::vector<std::size_t> shape) {
    Tensor<T> out = a.viewed_as(std::move(shape));  // validates element count
    Tape<T>* tape = merge_tape<T>({&a});
    const int na = parent_of(a);
    std::vector<std::size_t> in_shape = a.shape();
    return finish(tape, std::move(out), {na},
                  [na, in_shape](Tape<T>& tp, const Tensor<T>& g) {
                      if (na >= 0) tp.accumulate(na, g.viewed_as(in_shape));
                  });
}

template <class T>
Tensor<T> permute_102(const Tensor<T>& a) {
    if (a.rank() != 3) {
        throw DimensionError("permute_102: expected rank 3, got " + shape_str(a.shape()));
    }
    const std::size_t da = a.extent(0), db = a.extent(1), dc = a.extent(2);
    Tape<T>* tape = merge_tape<T>({&a});
    Tensor<T> out = Tensor<T>::uninit({db, da, dc});
    const T* pa = a.data();
    T* po = out.data();
    parallel_for(db, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t b = lo; b < hi; ++b) {
            for (std::size_t x = 0; x < da; ++x) {
                const T* src = pa + (x * db + b) * dc;
                T* dst = po + (b * da + x) * dc;
                std::copy(src, src + dc, dst);
            }
        }
    });
    const int na = parent_of(a);
    return finish(tape, std::move(out), {na}, [na, da, db, dc](Tape<T>& tp, const Tensor<T>& g) {
        if (na < 0) return;
        Tensor<T> inv = Tensor<T>::uninit({da, db, dc});
        const T* pg = g.data();
        T* pd = inv.data();
        parallel_for(da, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t x = lo; x < hi; ++x) {
                for (std::size_t b = 0; b < db; ++b) {
                    const T* src = pg + (b * da + x) * dc;
                    T* dst = pd + (x * db + b) * dc;
                    std::copy(src, src + dc, dst);
                }
            }
        });
        tp.accumulate(na, inv);
    });
}

template <class T>
Tensor<T> concat_cols(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(0) != b.extent(0)) {
        throw DimensionError("concat_cols: expected matching row counts, got " +
                             shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const std::size_t rows = a.extent(0), ca = a.extent(1), cb = b.extent(1);
    Tape<T>* tape = merge_tape<T>({&a, &b});
    Tensor<T> out = Tensor<T>::uninit({rows, ca + cb});
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    parallel_for(rows, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t r = lo; r < hi; ++r) {
            std::copy(pa + r * ca, pa + (r + 1) * ca, po + r * (ca + cb));
            std::copy(pb + r * cb, pb + (r + 1) * cb, po + r * (ca + cb) + ca);
        }
    });
    const int na = parent_of(a), nbn = parent_of(b);
    return finish(tape, std::move(out), {na, nbn},
                  [na, nbn, rows, ca, cb](Tape<T>& tp, const Tensor<T>& g) {
                      const T* pg = g.data();
                      if (na >= 0) {
                          Tensor<T> da = Tensor<T>::uninit({rows, ca});
                          for (std::size_t r = 0; r < rows; ++r) {
                              std::copy(pg + r * (ca + cb), pg + r * (ca + cb) + ca,
                                        da.data() + r * ca);
                          }
                          tp.accumulate(na, da);
                      }
                      if (nbn >= 0) {
                          Tensor<T> db = Tensor<T>::uninit({rows, cb});
                          for (std::size_t r = 0; r < rows; ++r) {
                              std::copy(pg + r * (ca + cb) + ca, pg + (r + 1) * (ca + cb),
                                        db.data() + r * cb);
                          }
                          tp.accumulate(nbn, db);
                      }
                  });
}

template <class T>
Tensor<T> stack_pair(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "stack_pair");
    Tape<T>* tape = merge_tape<T>({&a, &b});
    std::vector<std::size_t> shape = a.shape();
    shape.insert(shape.begin(), 2);
    Tensor<T> out = Tensor<T>::uninit(shape);
    const std::size_t block = a.size();
    std::copy(a.data(), a.data() + block, out.data());
    std::copy(b.data(), b.data() + block, out.data() + block);
    const int na = parent_of(a), nbn = parent_of(b);
    std::vector<std::size_t> in_shape = a.shape();
    return finish(tape, std::move(out), {na, nbn},
                  [na, nbn, block, in_shape](Tape<T>& tp, const Tensor<T>& g) {
                      const T* pg = g.data();
                      if (na >= 0) {
                          Tensor<T> da(in_shape,
                                       typename Tensor<T>::Buffer(pg, pg + block));
                          tp.accumulate(na, da);
                      }
                      if (nbn >= 0) {
                          Tensor<T> db(in_shape,
                                       typename Tensor<T>::Buffer(pg + block, pg + 2 * block));
                          tp.accumulate(nbn, db);
                      }
                  });
}

template <class T>
Tensor<T> repeat_leading(const Tensor<T>& a, std::size_t n) {
    if (n < 1) throw DomainError("repeat_leading: count must be >= 1");
    Tape<T>* tape = merge_tape<T>({&a});
    std::vector<std::size_t> shape = a.shape();
    shape.insert(shape.begin(), n);
    Tensor<T> out = Tensor<T>::uninit(shape);
    const std::size_t block = a.size();
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(a.data(), a.data() + block, out.data() + i * block);
    }
    const int na = parent_of(a);
    std::vector<std::size_t> in_shape = a.shape();
    return finish(tape, std::move(out), {na},
                  [na, n, block, in_shape](Tape<T>& tp, const Tensor<T>& g) {
                      if (na < 0) return;
                      Tensor<T> da = Tensor<T>::zeros(in_shape);
                      const T* pg = g.data();
                      T* pd = da.data();
                      for (std::size_t i = 0; i < n; ++i) {
                          const T* src = pg + i * block;
                          for (std::size_t j = 0; j < block; ++j) pd[j] += src[j];
                      }
                      tp.accumulate(na, da);
                  });
}

template <class T>
Tensor<T> convolve(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                   int rank, std::size_t padding) {
    if (rank != 2 && rank != 3) throw ConfigError("convolve: rank must be 2 or 3");
    const std::size_t spatial = static_cast<std::size_t>(rank);
    if (input.rank() != spatial + 1 || kernels.rank() != spatial + 2) {
        throw ConfigError("convolve: input " + shape_str(input.shape()) + " and kernels " +
                          shape_str(kernels.shape()) + " do not match rank " +
                          std::to_string(rank));
    }
    const std::size_t co = kernels.extent(0);
    const std::size_t ci = kernels.extent(1);
    const std::size_t k = kernels.extent(2);
    for (std::size_t axis = 2; axis < kernels.rank(); ++axis) {
        if (kernels.extent(axis) != k) {
            throw ConfigError("convolve: kernel must be square/cubic, got " +
                              shape_str(kernels.shape()));
        }
    }
    if (k % 2 == 0) {
        throw ConfigError("convolve: kernel extent must be odd, got " + std::to_string(k));
    }
    if (padding != (k - 1) / 2) {
        throw ConfigError("convolve: padding must be (k-1)/2 = " + std::to_string((k - 1) / 2) +
                          ", got " + std::to_string(padding));
    }
    if (input.extent(0) != ci) {
        throw ConfigError("convolve: input channels " + std::to_string(input.extent(0)) +
                          " != kernel channels " + std::to_string(ci));
    }
    if (bias.rank() != 1 || bias.extent(0) != co) {
        throw ConfigError("convolve: bias must have extent " + std::to_string(co));
    }
    const std::size_t d = rank == 3 ? input.extent(1) : 1;
    const std::size_t h = input.extent(rank == 3 ? 2 : 1);
    const std::size_t w = input.extent(rank == 3 ? 3 : 2);
    const std::size_t kd = rank == 3 ? k : 1;

    Tape<T>* tape = merge_tape<T>({&input, &kernels, &bias});
    std::vector<std::size_t> out_shape = input.shape();
    out_shape[0] = co;
    Tensor<T> out = Tensor<T>::uninit(out_shape);
    kern::conv_forward(input.data(), kernels.data(), bias.data(), out.data(), ci, co, d, h, w,
                       kd, k, k);
    const int nin = parent_of(input), nker = parent_of(kernels), nbias = parent_of(bias);
    Tensor<T> ind = input.detached(), kerd = kernels.detached();
    return finish(tape, std::move(out), {nin, nker, nbias},
                  [nin, nker, nbias, ind, kerd, ci, co, d, h, w, kd, k](Tape<T>& tp,
                                                                        const Tensor<T>& g) {
                      if (nin >= 0) {
                          Tensor<T> din = Tensor<T>::uninit(ind.shape());
                          kern::conv_backward_input(g.data(), kerd.data(), din.data(), ci, co, d,
                                                    h, w, kd, k, k);
                          tp.accumulate(nin, din);
                      }
                      if (nker >= 0 || nbias >= 0) {
                          Tensor<T> dker = Tensor<T>::uninit(kerd.shape());
                          Tensor<T> dbias = Tensor<T>::uninit({co});
                          kern::conv_backward_kernel(ind.data(), g.data(), dker.data(),
                                                     dbias.data(), ci, co, d, h, w, kd, k, k);
                          if (nker >= 0) tp.accumulate(nker, dker);
                          if (nbias >= 0) tp.accumulate(nbias, dbias);
                      }
                  });
}

std::vector<double> uniform_positions(std::size_t source_len, std::size_t target_len) {
    std::vector<double> pos(target_len);
    if (target_len == 1) {
        pos[0] = 0.0;
        return pos;
    }
    for (std::size_t j = 0; j < target_len; ++j) {
        pos[j] = static_cast<double>(j) * static_cast<double>(source_len - 1) /
                 static_cast<double>(target_len - 1);
    }
    return pos;
}

namespace {

struct LerpTap {
    std::size_t i0;
    double w;
};

std::vector<LerpTap> lerp_taps(std::size_t source_len, const std::vector<double>& positions,
                               const char* op) {
    std::vector<LerpTap> taps(positions.size());
    for (std::size_t j = 0; j < positions.size(); ++j) {
        const double p = positions[j];
        if (!(p >= 0.0) || p > static_cast<double>(source_len - 1)) {
            throw DomainError(std::string(op) + ": position " + std::to_string(p) +
                              " outside [0, " + std::to_string(source_len - 1) + "]");
        }
        std::size_t i0 = source_len >= 2
                             ? std::min(static_cast<std::size_t>(p), source_len - 2)
                             : 0;
        taps[j] = {i0, source_len >= 2 ? p - static_cast<double>(i0) : 0.0};
    }
    return taps;
}

}  // namespace

template <class T>
Tensor<T> profile_sample(const Tensor<T>& profile, const std::vector<double>& positions) {
    if (profile.rank() != 2) {
        throw DimensionError("profile_sample: expected [S x L], got " +
                             shape_str(profile.shape()));
    }
    if (positions.empty()) throw DomainError("profile_sample: need at least one position");
    const std::size_t rows = profile.extent(0), lin = profile.extent(1);
    const std::size_t lout = positions.size();
    const std::vector<LerpTap> taps = lerp_taps(lin, positions, "profile_sample");
    Tape<T>* tape = merge_tape<T>({&profile});
    Tensor<T> out = Tensor<T>::uninit({rows, lout});
    const T* pp = profile.data();
    T* po = out.data();
    parallel_for(rows, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t r = lo; r < hi; ++r) {
            const T* row = pp + r * lin;
            T* orow = po + r * lout;
            for (std::size_t j = 0; j < lout; ++j) {
                const LerpTap& t = taps[j];
                const T w = static_cast<T>(t.w);
                orow[j] = lin >= 2 ? (T(1) - w) * row[t.i0] + w * row[t.i0 + 1] : row[0];
            }
        }
    });
    const int np = parent_of(profile);
    return finish(tape, std::move(out), {np},
                  [np, rows, lin, lout, taps](Tape<T>& tp, const Tensor<T>& g) {
                      if (np < 0) return;
                      Tensor<T> dp = Tensor<T>::zeros({rows, lin});
                      const T* pg = g.data();
                      T* pd = dp.data();
                      parallel_for(rows, [&](std::size_t lo, std::size_t hi) {
                          for (std::size_t r = lo; r < hi; ++r) {
                              const T* grow = pg + r * lout;
                              T* drow = pd + r * lin;
                              for (std::size_t j = 0; j < lout; ++j) {
                                  const LerpTap& t = taps[j];
                                  const T w = static_cast<T>(t.w);
                                  if (lin >= 2) {
                                      drow[t.i0] += (T(1) - w) * grow[j];
                                      drow[t.i0 + 1] += w * grow[j];
                                  } else {
                                      drow[0] += grow[j];
                                  }
                              }
                          }
                      });
                      tp.accumulate(np, dp);
                  });
}

template <class T>
Tensor<T> resize_linear(const Tensor<T>& profile, std::size_t target_len) {
    if (target_len < 1) throw DomainError("resize_linear: target length must be >= 1");
    if (profile.rank() != 2 || profile.extent(1) < 1) {
        throw DimensionError("resize_linear: expected [S x L], L >= 1, got " +
                             shape_str(profile.shape()));
    }
    return profile_sample(profile, uniform_positions(profile.extent(1), target_len));
}

template <class T>
Tensor<T> spi_branch(const Tensor<T>& m_in, const std::vector<double>& positions,
                     SpiOrientation orientation) {
    if (m_in.rank() != 3) {
        throw DimensionError("spi_branch: expected [F x H x W], got " + shape_str(m_in.shape()));
    }
    if (positions.empty()) throw DomainError("spi_branch: need at least one output band");
    const std::size_t f = m_in.extent(0), h = m_in.extent(1), w = m_in.extent(2);
    const std::size_t lout = positions.size();
    const std::vector<LerpTap> taps = lerp_taps(f, positions, "spi_branch");
    Tape<T>* tape = merge_tape<T>({&m_in});
    Tensor<T> out = Tensor<T>::uninit({lout, h, w});
    const T* pm = m_in.data();
    T* po = out.data();
    const std::size_t plane = h * w;
    // Vertical walks fixed-column slices P_{w*}(h, f); horizontal walks
    // fixed-row slices P_{h*}(w, f). Per pixel both reduce to the same
    // 1-d resample of the F-profile.
    if (orientation == SpiOrientation::Vertical) {
        parallel_for(w, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t x = lo; x < hi; ++x) {
                for (std::size_t y = 0; y < h; ++y) {
                    const T* prof = pm + y * w + x;  // stride plane over f
                    for (std::size_t j = 0; j < lout; ++j) {
                        const LerpTap& t = taps[j];
                        const T wj = static_cast<T>(t.w);
                        const T v0 = prof[t.i0 * plane];
                        const T v1 = f >= 2 ? prof[(t.i0 + 1) * plane] : v0;
                        po[j * plane + y * w + x] =
                            f >= 2 ? (T(1) - wj) * v0 + wj * v1 : v0;
                    }
                }
            }
        });
    } else {
        parallel_for(h, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t y = lo; y < hi; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    const T* prof = pm + y * w + x;
                    for (std::size_t j = 0; j < lout; ++j) {
                        const LerpTap& t = taps[j];
                        const T wj = static_cast<T>(t.w);
                        const T v0 = prof[t.i0 * plane];
                        const T v1 = f >= 2 ? prof[(t.i0 + 1) * plane] : v0;
                        po[j * plane + y * w + x] =
                            f >= 2 ? (T(1) - wj) * v0 + wj * v1 : v0;
                    }
                }
            }
        });
    }
    const int nm = parent_of(m_in);
    return finish(tape, std::move(out), {nm},
                  [nm, f, h, w, lout, taps](Tape<T>& tp, const Tensor<T>& g) {
                      if (nm < 0) return;
                      const std::size_t plane = h * w;
                      Tensor<T> dm = Tensor<T>::zeros({f, h, w});
                      const T* pg = g.data();
                      T* pd = dm.data();
                      parallel_for(plane, [&](std::size_t lo, std::size_t hi) {
                          for (std::size_t px = lo; px < hi; ++px) {
                              for (std::size_t j = 0; j < lout; ++j) {
                                  const LerpTap& t = taps[j];
                                  const T wj = static_cast<T>(t.w);
                                  const T gv = pg[j * plane + px];
                                  if (f >= 2) {
                                      pd[t.i0 * plane + px] += (T(1) - wj) * gv;
                                      pd[(t.i0 + 1) * plane + px] += wj * gv;
                                  } else {
                                      pd[px] += gv;
                                  }
                              }
                          }
                      });
                      tp.accumulate(nm, dm);
                  });
}

template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
    if (logits.rank() < 1) throw DimensionError("softmax: need at least rank 1");
    if (!logits.all_finite()) throw DomainError("softmax: non-finite logits");
    const std::size_t cols = logits.extent(logits.rank() - 1);
    const std::size_t rows = logits.size() / cols;
    Tape<T>* tape = merge_tape<T>({&logits});
    Tensor<T> out = Tensor<T>::uninit(logits.shape());
    const T* px = logits.data();
    T* po = out.data();
    parallel_for(rows, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t r = lo; r < hi; ++r) {
            const T* row = px + r * cols;
            T* orow = po + r * cols;
            double mx = static_cast<double>(row[0]);
            for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, static_cast<double>(row[j]));
            double denom = 0.0;
            for (std::size_t j = 0; j < cols; ++j) {
                const double e = std::exp(static_cast<double>(row[j]) - mx);
                orow[j] = static_cast<T>(e);
                denom += e;
            }
            const double inv = 1.0 / denom;
            for (std::size_t j = 0; j < cols; ++j) {
                orow[j] = static_cast<T>(static_cast<double>(orow[j]) * inv);
            }
        }
    });
    const int nl = parent_of(logits);
    Tensor<T> y = out.detached();
    return finish(tape, std::move(out), {nl},
                  [nl, y, rows, cols](Tape<T>& tp, const Tensor<T>& g) {
                      if (nl < 0) return;
                      Tensor<T> dx = Tensor<T>::uninit(y.shape());
                      const T* pg = g.data();
                      const T* py = y.data();
                      T* pd = dx.data();
                      parallel_for(rows, [&](std::size_t lo, std::size_t hi) {
                          for (std::size_t r = lo; r < hi; ++r) {
                              const T* grow = pg + r * cols;
                              const T* yrow = py + r * cols;
                              T* drow = pd + r * cols;
                              double dot = 0.0;
                              for (std::size_t j = 0; j < cols; ++j) {
                                  dot += static_cast<double>(grow[j]) *
                                         static_cast<double>(yrow[j]);
                              }
                              for (std::size_t j = 0; j < cols; ++j) {
                                  drow[j] = static_cast<T>(
                                      static_cast<double>(yrow[j]) *
                                      (static_cast<double>(grow[j]) - dot));
                              }
                          }
                      });
                      tp.accumulate(nl, dx);
                  });
}

template <class T>
Tensor<T> activate(const Tensor<T>& x, Act act, T slope) {
    Tape<T>* tape = merge_tape<T>({&x});
    Tensor<T> out = Tensor<T>::uninit(x.shape());
    kern::act_forward(x.data(), out.data(), x.size(), to_kern(act), slope);
    const int nx = parent_of(x);
    Tensor<T> post = out.detached();
    return finish(tape, std::move(out), {nx},
                  [nx, post, act, slope](Tape<T>& tp, const Tensor<T>& g) {
                      if (nx < 0) return;
                      Tensor<T> dx = Tensor<T>::uninit(g.shape());
                      kern::act_backward(g.data(), post.data(), dx.data(), g.size(),
                                         to_kern(act), slope);
                      tp.accumulate(nx, dx);
                  });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    Tape<T>* tape = merge_tape<T>({&x});
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]);
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
    const int nx = parent_of(x);
    std::vector<std::size_t> in_shape = x.shape();
    return finish(tape, std::move(out), {nx},
                  [nx, in_shape](Tape<T>& tp, const Tensor<T>& g) {
                      if (nx >= 0) tp.accumulate(nx, Tensor<T>::full(in_shape, g[0]));
                  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    Tape<T>* tape = merge_tape<T>({&x});
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(x[i]);
    const double inv = 1.0 / static_cast<double>(x.size());
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc * inv));
    const int nx = parent_of(x);
    std::vector<std::size_t> in_shape = x.shape();
    return finish(tape, std::move(out), {nx},
                  [nx, in_shape, inv](Tape<T>& tp, const Tensor<T>& g) {
                      if (nx >= 0) {
                          tp.accumulate(nx, Tensor<T>::full(in_shape,
                                                            static_cast<T>(g[0] * inv)));
                      }
                  });
}

template <class T>
Tensor<T> mrae(const Tensor<T>& pred, const Tensor<T>& target, T eps) {
    require_same_shape(pred, target, "mrae");
    if (!(eps > T(0))) throw DomainError("mrae: eps must be positive");
    for (std::size_t i = 0; i < target.size(); ++i) {
        if (target[i] < T(0)) throw DomainError("mrae: ground truth must be nonnegative");
    }
    Tape<T>* tape = merge_tape<T>({&pred});
    const std::size_t n = pred.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += std::abs(static_cast<double>(pred[i]) - static_cast<double>(target[i])) /
               (static_cast<double>(target[i]) + static_cast<double>(eps));
    }
    Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n)));
    const int np = parent_of(pred);
    Tensor<T> pd = pred.detached(), td = target.detached();
    return finish(tape, std::move(out), {np},
                  [np, pd, td, eps, n](Tape<T>& tp, const Tensor<T>& g) {
                      if (np < 0) return;
                      Tensor<T> dp = Tensor<T>::uninit(pd.shape());
                      const T gv = g[0];
                      const T invn = static_cast<T>(1.0 / static_cast<double>(n));
                      for (std::size_t i = 0; i < n; ++i) {
                          const T diff = pd[i] - td[i];
                          const T s = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
                          dp[i] = gv * invn * s / (td[i] + eps);
                      }
                      tp.accumulate(np, dp);
                  });
}

#define NESR_INSTANTIATE_OPS(T)                                                                   \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                               \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                            \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> matmul_tn<T>(const Tensor<T>&, const Tensor<T>&);                         \
    template Tensor<T> bmm_nt<T>(const Tensor<T>&, const Tensor<T>&);                            \
    template Tensor<T> affine<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Act, T); \
    template Tensor<T> transpose<T>(const Tensor<T>&);                                           \
    template Tensor<T> reshape<T>(const Tensor<T>&, std::vector<std::size_t>);                   \
    template Tensor<T> permute_102<T>(const Tensor<T>&);                                         \
    template Tensor<T> concat_cols<T>(const Tensor<T>&, const Tensor<T>&);                       \
    template Tensor<T> stack_pair<T>(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> repeat_leading<T>(const Tensor<T>&, std::size_t);                         \
    template Tensor<T> convolve<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int,   \
                                   std::size_t);                                                 \
    template Tensor<T> resize_linear<T>(const Tensor<T>&, std::size_t);                          \
    template Tensor<T> profile_sample<T>(const Tensor<T>&, const std::vector<double>&);          \
    template Tensor<T> spi_branch<T>(const Tensor<T>&, const std::vector<double>&,               \
                                     SpiOrientation);                                            \
    template Tensor<T> softmax<T>(const Tensor<T>&);                                             \
    template Tensor<T> activate<T>(const Tensor<T>&, Act, T);                                    \
    template Tensor<T> sum<T>(const Tensor<T>&);                                                 \
    template Tensor<T> mean<T>(const Tensor<T>&);                                                \
    template Tensor<T> mrae<T>(const Tensor<T>&, const Tensor<T>&, T);

NESR_INSTANTIATE_OPS(float)
NESR_INSTANTIATE_OPS(double)

}  // namespace nesr
