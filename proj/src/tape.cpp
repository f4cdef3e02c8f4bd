#include "kgprefix/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace kgprefix {

namespace testing {
namespace {
double g_backward_corruption = 0.0;
}
void set_backward_corruption(double magnitude) { g_backward_corruption = magnitude; }
double backward_corruption() { return g_backward_corruption; }
}  // namespace testing

// ----------------------------- tape core -----------------------------

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Var v) const {
    if (v.tape != this) throw Error("var does not belong to this tape");
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) throw IndexError("var id out of range");
    return nodes_[static_cast<size_t>(v.id)];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Var Tape::push(Tensor value, std::vector<int> parents, BackwardFn fn, const char* what) {
    value.check_finite(what);
    value.enforce_dtype();
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.backward = std::move(fn);
    for (int p : n.parents) {
        if (nodes_[static_cast<size_t>(p)].requires_grad) {
            n.requires_grad = true;
            break;
        }
    }
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::accumulate(int id, const Tensor& g) {
    auto& node = nodes_[static_cast<size_t>(id)];
    if (!node.requires_grad) return;
    auto& slot = grads_[static_cast<size_t>(id)];
    if (!slot.has_value()) {
        slot = g;
        slot->enforce_dtype();
        return;
    }
    if (!slot->same_shape(g)) throw DimensionError("gradient accumulation shape mismatch");
    double* dst = slot->data();
    const double* src = g.data();
    for (long i = 0; i < g.size(); ++i) dst[i] += src[i];
    slot->enforce_dtype();
}

void Tape::backward(Var loss) {
    if (backward_done_) throw Error("Tape::backward may be called only once");
    backward_done_ = true;
    const Node& ln = node(loss);
    if (ln.value.size() != 1) throw DimensionError("backward requires a scalar loss");
    grads_.assign(nodes_.size(), std::nullopt);
    Tensor seed = Tensor::full(ln.value.shape(), 1.0, ln.value.dtype());
    grads_[static_cast<size_t>(loss.id)] = std::move(seed);
    for (int id = loss.id; id >= 0; --id) {
        auto& n = nodes_[static_cast<size_t>(id)];
        if (!n.requires_grad || !grads_[static_cast<size_t>(id)].has_value()) continue;
        if (n.backward) n.backward(*this, id);
    }
}

bool Tape::has_grad(Var v) const {
    node(v);
    return static_cast<size_t>(v.id) < grads_.size() && grads_[static_cast<size_t>(v.id)].has_value();
}

const Tensor& Tape::grad(Var v) const {
    if (!has_grad(v)) throw Error("no gradient recorded for var");
    return *grads_[static_cast<size_t>(v.id)];
}

Tensor Tape::grad_or_zero(Var v) const {
    if (has_grad(v)) return grad(v);
    const Tensor& val = value(v);
    return Tensor(val.shape(), val.dtype());
}

// ----------------------------- helpers -----------------------------

namespace {

Tape& same_tape(Var a, Var b) {
    if (a.tape == nullptr || a.tape != b.tape) throw Error("vars must share one tape");
    return *a.tape;
}

DType common_dtype(const Tensor& a, const Tensor& b) {
    if (a.dtype() != b.dtype()) throw DimensionError("mixed tensor dtypes in one operation");
    return a.dtype();
}

// raw matmul kernels; C is accumulated into
void mm_nn(const double* a, const double* b, double* c, long m, long k, long n) {
    for (long i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (long p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * n;
            for (long j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m×n] += A[m×k] · B[n×k]^T
void mm_nt(const double* a, const double* b, double* c, long m, long k, long n) {
    for (long i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (long j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (long p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C[m×n] += A[k×m]^T · B[k×n]
void mm_tn(const double* a, const double* b, double* c, long m, long k, long n) {
    for (long p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (long i = 0; i < m; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* crow = c + i * n;
            for (long j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// numpy-style broadcast result shape
std::vector<long> broadcast_shape(const std::vector<long>& a, const std::vector<long>& b) {
    const size_t r = std::max(a.size(), b.size());
    std::vector<long> out(r, 1);
    for (size_t i = 0; i < r; ++i) {
        const long da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const long db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw DimensionError("shapes not broadcast-compatible: " + shape_to_string(a) +
                                 " vs " + shape_to_string(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// strides for iterating `shape` positions over a tensor of shape `src`
// (stride 0 along broadcast axes)
std::vector<long> broadcast_strides(const std::vector<long>& src, const std::vector<long>& out) {
    std::vector<long> strides(out.size(), 0);
    long s = 1;
    const size_t off = out.size() - src.size();
    for (size_t i = src.size(); i-- > 0;) {
        strides[i + off] = (src[i] == 1) ? 0 : s;
        s *= src[i];
    }
    return strides;
}

// Sums `g` (shaped like `out_shape`) down to `target_shape`.
Tensor reduce_to_shape(const Tensor& g, const std::vector<long>& target_shape, DType dtype) {
    if (g.shape() == target_shape) return g;
    Tensor out(target_shape, dtype);
    const auto& os = g.shape();
    const std::vector<long> tstr = broadcast_strides(target_shape, os);
    std::vector<long> idx(os.size(), 0);
    const double* src = g.data();
    double* dst = out.data();
    for (long flat = 0; flat < g.size(); ++flat) {
        long t = 0;
        for (size_t i = 0; i < os.size(); ++i) t += idx[i] * tstr[i];
        dst[t] += src[flat];
        for (size_t i = os.size(); i-- > 0;) {
            if (++idx[i] < os[i]) break;
            idx[i] = 0;
        }
    }
    out.enforce_dtype();
    return out;
}

enum class BinaryKind { add, mul };

Var binary_op(Var a, Var b, BinaryKind kind) {
    Tape& t = same_tape(a, b);
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    const DType dt = common_dtype(av, bv);
    const std::vector<long> oshape = broadcast_shape(av.shape(), bv.shape());
    Tensor out(oshape, dt);
    const std::vector<long> astr = broadcast_strides(av.shape(), oshape);
    const std::vector<long> bstr = broadcast_strides(bv.shape(), oshape);
    std::vector<long> idx(oshape.size(), 0);
    const double* ap = av.data();
    const double* bp = bv.data();
    double* op = out.data();
    for (long flat = 0; flat < out.size(); ++flat) {
        long ia = 0, ib = 0;
        for (size_t i = 0; i < oshape.size(); ++i) {
            ia += idx[i] * astr[i];
            ib += idx[i] * bstr[i];
        }
        op[flat] = kind == BinaryKind::add ? ap[ia] + bp[ib] : ap[ia] * bp[ib];
        for (size_t i = oshape.size(); i-- > 0;) {
            if (++idx[i] < oshape[i]) break;
            idx[i] = 0;
        }
    }
    const int pa = a.id, pb = b.id;
    auto bw = [pa, pb, kind](Tape& tp, int self) {
        const Tensor& g = tp.grad(Var{&tp, self});
        const Tensor& av2 = tp.value(Var{&tp, pa});
        const Tensor& bv2 = tp.value(Var{&tp, pb});
        const DType dt2 = av2.dtype();
        if (kind == BinaryKind::add) {
            tp.accumulate(pa, reduce_to_shape(g, av2.shape(), dt2));
            tp.accumulate(pb, reduce_to_shape(g, bv2.shape(), dt2));
            return;
        }
        // mul: d/da = g * b, d/db = g * a (broadcast-expanded then reduced)
        const std::vector<long>& oshape2 = g.shape();
        const std::vector<long> astr2 = broadcast_strides(av2.shape(), oshape2);
        const std::vector<long> bstr2 = broadcast_strides(bv2.shape(), oshape2);
        Tensor ga(oshape2, dt2), gb(oshape2, dt2);
        std::vector<long> idx2(oshape2.size(), 0);
        for (long flat = 0; flat < g.size(); ++flat) {
            long ia = 0, ib = 0;
            for (size_t i = 0; i < oshape2.size(); ++i) {
                ia += idx2[i] * astr2[i];
                ib += idx2[i] * bstr2[i];
            }
            ga.data()[flat] = g.data()[flat] * bv2.data()[ib];
            gb.data()[flat] = g.data()[flat] * av2.data()[ia];
            for (size_t i = oshape2.size(); i-- > 0;) {
                if (++idx2[i] < oshape2[i]) break;
                idx2[i] = 0;
            }
        }
        tp.accumulate(pa, reduce_to_shape(ga, av2.shape(), dt2));
        tp.accumulate(pb, reduce_to_shape(gb, bv2.shape(), dt2));
    };
    return t.push(std::move(out), {pa, pb}, bw, kind == BinaryKind::add ? "add" : "mul");
}

}  // namespace

// ----------------------------- ops -----------------------------

Var matmul(Var a, Var b) {
    Tape& t = same_tape(a, b);
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    const DType dt = common_dtype(av, bv);
    if (av.rank() != 2 || bv.rank() != 2)
        throw DimensionError("matmul requires rank-2 tensors, got " + av.shape_str() + " and " +
                             bv.shape_str());
    const long m = av.dim(0), k = av.dim(1), k2 = bv.dim(0), n = bv.dim(1);
    if (k != k2)
        throw DimensionError("matmul inner dimensions disagree: " + av.shape_str() + " vs " +
                             bv.shape_str());
    Tensor out({m, n}, dt);
    mm_nn(av.data(), bv.data(), out.data(), m, k, n);
    const int pa = a.id, pb = b.id;
    auto bw = [pa, pb, m, k, n](Tape& tp, int self) {
        const Tensor& g = tp.grad(Var{&tp, self});
        const Tensor& av2 = tp.value(Var{&tp, pa});
        const Tensor& bv2 = tp.value(Var{&tp, pb});
        if (tp.requires_grad(Var{&tp, pa})) {
            Tensor ga({m, k}, av2.dtype());
            mm_nt(g.data(), bv2.data(), ga.data(), m, n, k);
            if (testing::backward_corruption() != 0.0 && ga.size() > 0)
                ga.data()[0] += testing::backward_corruption();
            tp.accumulate(pa, ga);
        }
        if (tp.requires_grad(Var{&tp, pb})) {
            Tensor gb({k, n}, bv2.dtype());
            mm_tn(av2.data(), g.data(), gb.data(), k, m, n);
            tp.accumulate(pb, gb);
        }
    };
    return t.push(std::move(out), {pa, pb}, bw, "matmul");
}

Var transpose(Var a) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    if (av.rank() != 2) throw DimensionError("transpose requires rank 2, got " + av.shape_str());
    const long m = av.dim(0), n = av.dim(1);
    Tensor out({n, m}, av.dtype());
    for (long i = 0; i < m; ++i)
        for (long j = 0; j < n; ++j) out.data()[j * m + i] = av.data()[i * n + j];
    const int pa = a.id;
    auto bw = [pa, m, n](Tape& tp, int self) {
        const Tensor& g = tp.grad(Var{&tp, self});  // n×m
        Tensor ga({m, n}, g.dtype());
        for (long j = 0; j < n; ++j)
            for (long i = 0; i < m; ++i) ga.data()[i * n + j] = g.data()[j * m + i];
        tp.accumulate(pa, ga);
    };
    return t.push(std::move(out), {pa}, bw, "transpose");
}

Var softmax(Var x, int axis) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    const int r = xv.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw DimensionError("softmax axis out of range");
    long outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= xv.dim(i);
    const long n = xv.dim(axis);
    for (int i = axis + 1; i < r; ++i) inner *= xv.dim(i);
    Tensor out(xv.shape(), xv.dtype());
    const double* src = xv.data();
    double* dst = out.data();
    for (long o = 0; o < outer; ++o) {
        for (long in = 0; in < inner; ++in) {
            const long base = o * n * inner + in;
            double mx = src[base];
            for (long i = 1; i < n; ++i) mx = std::max(mx, src[base + i * inner]);
            double sum = 0.0;
            for (long i = 0; i < n; ++i) {
                const double e = std::exp(src[base + i * inner] - mx);
                dst[base + i * inner] = e;
                sum += e;
            }
            for (long i = 0; i < n; ++i) dst[base + i * inner] /= sum;
        }
    }
    const int px = x.id;
    auto bw = [px, outer, n, inner](Tape& tp, int self) {
        const Tensor& g = tp.grad(Var{&tp, self});
        const Tensor& y = tp.value(Var{&tp, self});
        Tensor gx(y.shape(), y.dtype());
        for (long o = 0; o < outer; ++o) {
            for (long in = 0; in < inner; ++in) {
                const long base = o * n * inner + in;
                double dot = 0.0;
                for (long i = 0; i < n; ++i)
                    dot += g.data()[base + i * inner] * y.data()[base + i * inner];
                for (long i = 0; i < n; ++i) {
                    const long k = base + i * inner;
                    gx.data()[k] = (g.data()[k] - dot) * y.data()[k];
                }
            }
        }
        tp.accumulate(px, gx);
    };
    return t.push(std::move(out), {px}, bw, "softmax");
}

Var tanh_op(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    Tensor out(xv.shape(), xv.dtype());
    for (long i = 0; i < xv.size(); ++i) out.data()[i] = std::tanh(xv.data()[i]);
    const int px = x.id;
    auto bw = [px](Tape& tp, int self) {
        const Tensor& g = tp.grad(Var{&tp, self});
        const Tensor& y = tp.value(Var{&tp, self});
        Tensor gx(y.shape(), y.dtype());
        for (long i = 0; i < y.size(); ++i)
            gx.data()[i] = g.data()[i] * (1.0 - y.data()[i] * y.data()[i]);
        tp.accumulate(px, gx);
    };
    return t.push(std::move(out), {px}, bw, "tanh");
}

Var relu(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    Tensor out(xv.shape(), xv.dtype());
    for (long i = 0; i < xv.size(); ++i) out.data()[i] = xv.data()[i] > 0.0 ? xv.data()[i] : 0.0;
    const int px = x.id;
    auto bw = [px](Tape& tp, int self) {
        const Tensor& g = tp.grad(Var{&tp, self});
        const Tensor& xv2 = tp.value(Var{&tp, px});
        Tensor gx(xv2.shape(), xv2.dtype());
        for (long i = 0; i < xv2.size(); ++i)
            gx.data()[i] = xv2.data()[i] > 0.0 ? g.data()[i] : 0.0;
        tp.accumulate(px, gx);
    };
    return t.push(std::move(out), {px}, bw, "relu");
}

Var add(Var a, Var b) { return binary_op(a, b, BinaryKind::add); }
Var mul(Var a, Var b) { return binary_op(a, b, BinaryKind::mul); }

Var scale(Var a, double c) {
    Tape& t = *a.tape;
    const Tensor& av = t.value(a);
    Tensor out(av.shape(), av.dtype());
    for (long i = 0; i < av.size(); ++i) out.data()[i] = av.data()[i] * c;
    const int pa = a.id;
    auto bw = [pa, c](Tape& tp, int self) {
        const Tensor& g = tp.grad(Var{&tp, self});
        Tensor ga(g.shape(), g.dtype());
        for (long i = 0; i < g.size(); ++i) ga.data()[i] = g.data()[i] * c;
        tp.accumulate(pa, ga);
    };
    return t.push(std::move(out), {pa}, bw, "scale");
}

Var gather_rows(Var table, const std::vector<long>& indices) {
    Tape& t = *table.tape;
    const Tensor& tv = t.value(table);
    if (tv.rank() != 2) throw DimensionError("gather_rows requires a rank-2 table");
    const long v = tv.dim(0), d = tv.dim(1);
    for (long ix : indices) {
        if (ix < 0 || ix >= v)
            throw IndexError("gather_rows index " + std::to_string(ix) + " out of range [0," +
                             std::to_string(v) + ")");
    }
    const long n = static_cast<long>(indices.size());
    Tensor out({n, d}, tv.dtype());
    for (long i = 0; i < n; ++i)
        std::memcpy(out.data() + i * d, tv.data() + indices[static_cast<size_t>(i)] * d,
                    static_cast<size_t>(d) * sizeof(double));
    const int pt = table.id;
    auto bw = [pt, indices, v, d, n](Tape& tp, int self) {
        const Tensor& g = tp.grad(Var{&tp, self});
        Tensor gt({v, d}, g.dtype());
        for (long i = 0; i < n; ++i) {
            double* dst = gt.data() + indices[static_cast<size_t>(i)] * d;
            const double* src = g.data() + i * d;
            for (long j = 0; j < d; ++j) dst[j] += src[j];
        }
        tp.accumulate(pt, gt);
    };
    return t.push(std::move(out), {pt}, bw, "gather_rows");
}

Var concat(const std::vector<Var>& xs, int axis) {
    if (xs.empty()) throw DimensionError("concat of zero tensors");
    Tape& t = *xs[0].tape;
    if (xs.size() == 1) {
        // single-input concat is the identity
        const int p = xs[0].id;
        Tensor out = t.value(xs[0]);
        auto bw = [p](Tape& tp, int self) { tp.accumulate(p, tp.grad(Var{&tp, self})); };
        return t.push(std::move(out), {p}, bw, "concat");
    }
    if (axis != 0 && axis != 1) throw DimensionError("concat supports axis 0 or 1");
    const Tensor& first = t.value(xs[0]);
    if (first.rank() != 2) throw DimensionError("concat requires rank-2 tensors");
    const int other = 1 - axis;
    long total = 0;
    std::vector<int> parents;
    std::vector<long> sizes;
    for (Var x : xs) {
        same_tape(xs[0], x);
        const Tensor& xv = t.value(x);
        if (xv.rank() != 2 || xv.dim(other) != first.dim(other))
            throw DimensionError("concat: ragged shapes " + first.shape_str() + " vs " +
                                 xv.shape_str());
        common_dtype(first, xv);
        total += xv.dim(axis);
        parents.push_back(x.id);
        sizes.push_back(xv.dim(axis));
    }
    std::vector<long> oshape = first.shape();
    oshape[static_cast<size_t>(axis)] = total;
    Tensor out(oshape, first.dtype());
    const long rows = oshape[0], cols = oshape[1];
    long offset = 0;
    for (size_t xi = 0; xi < xs.size(); ++xi) {
        const Tensor& xv = t.value(xs[xi]);
        if (axis == 0) {
            std::memcpy(out.data() + offset * cols, xv.data(),
                        static_cast<size_t>(xv.size()) * sizeof(double));
        } else {
            for (long r = 0; r < rows; ++r)
                std::memcpy(out.data() + r * cols + offset, xv.data() + r * sizes[xi],
                            static_cast<size_t>(sizes[xi]) * sizeof(double));
        }
        offset += sizes[xi];
    }
    auto bw = [parents, sizes, axis, rows, cols](Tape& tp, int self) {
        const Tensor& g = tp.grad(Var{&tp, self});
        long off = 0;
        for (size_t xi = 0; xi < parents.size(); ++xi) {
            const long sz = sizes[xi];
            if (tp.requires_grad(Var{&tp, parents[xi]})) {
                std::vector<long> pshape = axis == 0 ? std::vector<long>{sz, cols}
                                                     : std::vector<long>{rows, sz};
                Tensor gp(pshape, g.dtype());
                if (axis == 0) {
                    std::memcpy(gp.data(), g.data() + off * cols,
                                static_cast<size_t>(gp.size()) * sizeof(double));
                } else {
                    for (long r = 0; r < rows; ++r)
                        std::memcpy(gp.data() + r * sz, g.data() + r * cols + off,
                                    static_cast<size_t>(sz) * sizeof(double));
                }
                tp.accumulate(parents[xi], gp);
            }
            off += sz;
        }
    };
    return t.push(std::move(out), parents, bw, "concat");
}

namespace {
Var slice_2d(Var x, long start, long len, int axis, const char* what) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    if (xv.rank() != 2) throw DimensionError(std::string(what) + " requires rank 2");
    const long limit = xv.dim(axis);
    if (start < 0 || len < 0 || start + len > limit)
        throw IndexError(std::string(what) + " range out of bounds");
    const long rows = xv.dim(0), cols = xv.dim(1);
    Tensor out(axis == 0 ? std::vector<long>{len, cols} : std::vector<long>{rows, len},
               xv.dtype());
    if (axis == 0) {
        std::memcpy(out.data(), xv.data() + start * cols,
                    static_cast<size_t>(out.size()) * sizeof(double));
    } else {
        for (long r = 0; r < rows; ++r)
            std::memcpy(out.data() + r * len, xv.data() + r * cols + start,
                        static_cast<size_t>(len) * sizeof(double));
    }
    const int px = x.id;
    auto bw = [px, start, len, axis, rows, cols](Tape& tp, int self) {
        const Tensor& g = tp.grad(Var{&tp, self});
        Tensor gx({rows, cols}, g.dtype());
        if (axis == 0) {
            std::memcpy(gx.data() + start * cols, g.data(),
                        static_cast<size_t>(g.size()) * sizeof(double));
        } else {
            for (long r = 0; r < rows; ++r)
                std::memcpy(gx.data() + r * cols + start, g.data() + r * len,
                            static_cast<size_t>(len) * sizeof(double));
        }
        tp.accumulate(px, gx);
    };
    return t.push(std::move(out), {px}, bw, what);
}
}  // namespace

Var slice_rows(Var x, long row0, long n_rows) { return slice_2d(x, row0, n_rows, 0, "slice_rows"); }
Var slice_cols(Var x, long col0, long n_cols) { return slice_2d(x, col0, n_cols, 1, "slice_cols"); }

Var sum_all(Var x) {
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    double s = 0.0;
    for (long i = 0; i < xv.size(); ++i) s += xv.data()[i];
    const int px = x.id;
    auto bw = [px](Tape& tp, int self) {
        const Tensor& g = tp.grad(Var{&tp, self});
        const Tensor& xv2 = tp.value(Var{&tp, px});
        tp.accumulate(px, Tensor::full(xv2.shape(), g.item(), xv2.dtype()));
    };
    return t.push(Tensor::scalar(s, xv.dtype()), {px}, bw, "sum_all");
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
    Tape& t = same_tape(x, gain);
    same_tape(x, bias);
    const Tensor& xv = t.value(x);
    const Tensor& gv = t.value(gain);
    const Tensor& bv = t.value(bias);
    if (xv.rank() != 2) throw DimensionError("layer_norm requires rank-2 input");
    const long n = xv.dim(0), d = xv.dim(1);
    if (gv.size() != d || bv.size() != d)
        throw DimensionError("layer_norm gain/bias must have width " + std::to_string(d));
    Tensor out({n, d}, xv.dtype());
    for (long r = 0; r < n; ++r) {
        const double* row = xv.data() + r * d;
        double mean = 0.0;
        for (long j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (long j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (long j = 0; j < d; ++j)
            out.data()[r * d + j] = gv.data()[j] * (row[j] - mean) * inv + bv.data()[j];
    }
    const int px = x.id, pg = gain.id, pb = bias.id;
    auto bw = [px, pg, pb, n, d, eps](Tape& tp, int self) {
        const Tensor& g = tp.grad(Var{&tp, self});
        const Tensor& xv2 = tp.value(Var{&tp, px});
        const Tensor& gv2 = tp.value(Var{&tp, pg});
        Tensor gx({n, d}, xv2.dtype());
        Tensor gg({d}, xv2.dtype());
        Tensor gb({d}, xv2.dtype());
        for (long r = 0; r < n; ++r) {
            const double* row = xv2.data() + r * d;
            const double* grow = g.data() + r * d;
            double mean = 0.0;
            for (long j = 0; j < d; ++j) mean += row[j];
            mean /= static_cast<double>(d);
            double var = 0.0;
            for (long j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
            var /= static_cast<double>(d);
            const double inv = 1.0 / std::sqrt(var + eps);
            // xhat_j = (x_j - mean) * inv;  dxhat_j = g_j * gain_j
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (long j = 0; j < d; ++j) {
                const double xhat = (row[j] - mean) * inv;
                const double dxhat = grow[j] * gv2.data()[j];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
                gg.data()[j] += grow[j] * xhat;
                gb.data()[j] += grow[j];
            }
            for (long j = 0; j < d; ++j) {
                const double xhat = (row[j] - mean) * inv;
                const double dxhat = grow[j] * gv2.data()[j];
                gx.data()[r * d + j] =
                    inv * (dxhat - sum_dxhat / static_cast<double>(d) -
                           xhat * sum_dxhat_xhat / static_cast<double>(d));
            }
        }
        tp.accumulate(px, gx);
        tp.accumulate(pg, gg);
        tp.accumulate(pb, gb);
    };
    return t.push(std::move(out), {px, pg, pb}, bw, "layer_norm");
}

Var cross_entropy(Var logits, const std::vector<long>& targets, const std::vector<uint8_t>& mask) {
    Tape& t = *logits.tape;
    const Tensor& lv = t.value(logits);
    if (lv.rank() != 2) throw DimensionError("cross_entropy requires rank-2 logits");
    const long n = lv.dim(0), v = lv.dim(1);
    if (static_cast<long>(targets.size()) != n || static_cast<long>(mask.size()) != n)
        throw DimensionError("cross_entropy targets/mask length must match logits rows");
    long active = 0;
    for (uint8_t m : mask) active += m ? 1 : 0;
    if (active == 0) throw NumericError("cross_entropy: all positions masked (empty loss)");
    double total = 0.0;
    for (long r = 0; r < n; ++r) {
        if (!mask[static_cast<size_t>(r)]) continue;
        const long tgt = targets[static_cast<size_t>(r)];
        if (tgt < 0 || tgt >= v) throw IndexError("cross_entropy target id out of vocabulary");
        const double* row = lv.data() + r * v;
        double mx = row[0];
        for (long j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double lse = 0.0;
        for (long j = 0; j < v; ++j) lse += std::exp(row[j] - mx);
        lse = mx + std::log(lse);
        total += lse - row[tgt];
    }
    total /= static_cast<double>(active);
    const int pl = logits.id;
    auto bw = [pl, targets, mask, n, v, active](Tape& tp, int self) {
        const Tensor& g = tp.grad(Var{&tp, self});
        const Tensor& lv2 = tp.value(Var{&tp, pl});
        const double gs = g.item() / static_cast<double>(active);
        Tensor gl({n, v}, lv2.dtype());
        for (long r = 0; r < n; ++r) {
            if (!mask[static_cast<size_t>(r)]) continue;
            const double* row = lv2.data() + r * v;
            double* grow = gl.data() + r * v;
            double mx = row[0];
            for (long j = 1; j < v; ++j) mx = std::max(mx, row[j]);
            double denom = 0.0;
            for (long j = 0; j < v; ++j) denom += std::exp(row[j] - mx);
            for (long j = 0; j < v; ++j) grow[j] = gs * std::exp(row[j] - mx) / denom;
            grow[targets[static_cast<size_t>(r)]] -= gs;
        }
        tp.accumulate(pl, gl);
    };
    return t.push(Tensor::scalar(total, lv.dtype()), {pl}, bw, "cross_entropy");
}

Var bow_loss(Var distribution, const std::vector<long>& bag) {
    Tape& t = *distribution.tape;
    const Tensor& dv = t.value(distribution);
    if (dv.rank() != 2) throw DimensionError("bow_loss requires a rank-2 distribution");
    if (bag.empty()) throw NumericError("bow_loss: empty bag");
    const long rows = dv.dim(0), v = dv.dim(1);
    std::vector<double> pooled(static_cast<size_t>(v), 0.0);
    for (long r = 0; r < rows; ++r)
        for (long j = 0; j < v; ++j) pooled[static_cast<size_t>(j)] += dv.data()[r * v + j];
    for (double& p : pooled) p /= static_cast<double>(rows);
    double total = 0.0;
    for (long w : bag) {
        if (w < 0 || w >= v) throw IndexError("bow_loss word id out of vocabulary");
        const double p = pooled[static_cast<size_t>(w)];
        if (p <= 0.0) throw NumericError("bow_loss: zero probability mass for bag word");
        total -= std::log(p);
    }
    total /= static_cast<double>(bag.size());
    const int pd = distribution.id;
    auto bw = [pd, bag, rows, v, pooled](Tape& tp, int self) {
        const Tensor& g = tp.grad(Var{&tp, self});
        const double gs = g.item() / static_cast<double>(bag.size());
        Tensor gd({rows, v}, tp.value(Var{&tp, pd}).dtype());
        for (long w : bag) {
            const double coeff = -gs / (pooled[static_cast<size_t>(w)] * static_cast<double>(rows));
            for (long r = 0; r < rows; ++r) gd.data()[r * v + w] += coeff;
        }
        tp.accumulate(pd, gd);
    };
    return t.push(Tensor::scalar(total, dv.dtype()), {pd}, bw, "bow_loss");
}

}  // namespace kgprefix
