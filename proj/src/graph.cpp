#include "lcmae/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace lcmae {

const char* op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Param: return "param";
        case Op::Const: return "const";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::AddScalar: return "add_scalar";
        case Op::MulScalar: return "mul_scalar";
        case Op::PowScalar: return "pow_scalar";
        case Op::Exp: return "exp";
        case Op::Sqrt: return "sqrt";
        case Op::Abs: return "abs";
        case Op::Gelu: return "gelu";
        case Op::Matmul: return "matmul";
        case Op::MatmulNT: return "matmul_nt";
        case Op::MatmulTN: return "matmul_tn";
        case Op::Transpose: return "transpose";
        case Op::Reshape: return "reshape";
        case Op::ConcatRows: return "concat_rows";
        case Op::ConcatCols: return "concat_cols";
        case Op::SliceRows: return "slice_rows";
        case Op::SliceCols: return "slice_cols";
        case Op::GatherRows: return "gather_rows";
        case Op::ScatterRows: return "scatter_rows";
        case Op::TileRows: return "tile_rows";
        case Op::SumAll: return "sum_all";
        case Op::MeanAll: return "mean_all";
        case Op::SumAxis: return "sum_axis";
        case Op::MeanAxis: return "mean_axis";
        case Op::SoftmaxRows: return "softmax_rows";
        case Op::LayerNormRows: return "layernorm_rows";
        case Op::L2NormRows: return "l2norm_rows";
        case Op::CosineRows: return "cosine_rows";
        case Op::NormalizeRows: return "normalize_rows";
        case Op::Conv2D: return "conv2d";
        case Op::AddChannelBias: return "add_channel_bias";
        case Op::Detach: return "detach";
    }
    return "?";
}

namespace {

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void mm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void mm_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (int64_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = T(0);
            for (int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C[K,N] += A[M,K]^T * B[M,N]
template <typename T>
void mm_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const T av = arow[p];
            T* crow = c + p * n;
            for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

Shape broadcast_shape(const Shape& a, const Shape& b, bool& ok) {
    const size_t r = std::max(a.size(), b.size());
    Shape out(r);
    ok = true;
    for (size_t i = 0; i < r; ++i) {
        const int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da == db || da == 1 || db == 1) {
            out[i] = std::max(da, db);
        } else {
            ok = false;
            return out;
        }
    }
    return out;
}

// Strides of `in` aligned against the broadcast output shape; 0 marks a
// broadcast dimension.
std::vector<int64_t> bcast_strides(const Shape& in, const Shape& out) {
    std::vector<int64_t> st(out.size(), 0);
    int64_t run = 1;
    for (size_t i = 0; i < in.size(); ++i) {
        const size_t d = out.size() - 1 - i;
        const int64_t dim = in[in.size() - 1 - i];
        st[d] = dim == 1 ? 0 : run;
        run *= dim;
    }
    return st;
}

// Walks output coords while tracking offsets into two broadcast inputs.
template <typename T, typename F>
void bcast_walk(const Shape& out, const std::vector<int64_t>& sa, const std::vector<int64_t>& sb, F&& f) {
    const int r = static_cast<int>(out.size());
    const int64_t total = numel(out);
    if (r == 0) {
        f(int64_t(0), int64_t(0), int64_t(0));
        return;
    }
    std::vector<int64_t> ctr(static_cast<size_t>(r), 0);
    int64_t oa = 0, ob = 0;
    for (int64_t i = 0; i < total; ++i) {
        f(i, oa, ob);
        for (int d = r - 1; d >= 0; --d) {
            ++ctr[static_cast<size_t>(d)];
            oa += sa[static_cast<size_t>(d)];
            ob += sb[static_cast<size_t>(d)];
            if (ctr[static_cast<size_t>(d)] < out[static_cast<size_t>(d)]) break;
            oa -= sa[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
            ob -= sb[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
            ctr[static_cast<size_t>(d)] = 0;
        }
    }
}

template <typename T>
void reduce_axis_extents(const Shape& s, int axis, int64_t& outer, int64_t& mid, int64_t& inner) {
    outer = 1;
    for (int i = 0; i < axis; ++i) outer *= s[static_cast<size_t>(i)];
    mid = s[static_cast<size_t>(axis)];
    inner = 1;
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) inner *= s[i];
}

inline double gelu_val(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)); }
inline double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
    const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014326779;
    return cdf + x * pdf;
}

}  // namespace

template <typename T>
std::string Graph<T>::label(const Node& n) const {
    std::string s = n.name.empty() ? "" : ("'" + n.name + "' ");
    return s + "(" + op_name(n.op) + ")";
}

template <typename T>
void Graph<T>::fail(const Node& n, const std::string& msg) const {
    throw GraphError("node " + label(n) + ": " + msg);
}

template <typename T>
Var Graph<T>::push(Node n) {
    if (numel(n.shape) < 0) fail(n, "negative shape");
    bool ng = false;
    for (int32_t i : n.in) ng = ng || nd(i).needs_grad;
    if (n.op == Op::Param) ng = true;
    if (n.op == Op::Detach || n.op == Op::Const) ng = false;
    if (n.op == Op::Input) ng = n.trainable;  // reused flag: differentiable input
    n.needs_grad = ng;
    if (!n.name.empty()) {
        if (named_.count(n.name)) throw GraphError("duplicate node name '" + n.name + "'");
        named_[n.name] = static_cast<int32_t>(nodes_.size());
    }
    if (n.op == Op::Param) params_.push_back(static_cast<int32_t>(nodes_.size()));
    if (n.op != Op::Param && n.op != Op::Const) n.val = Array<T>(n.shape);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::input(const std::string& name, Shape shape, bool differentiable) {
    Node n;
    n.op = Op::Input;
    n.name = name;
    n.shape = std::move(shape);
    n.trainable = differentiable;
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::param(const std::string& name, Array<T> init) {
    Node n;
    n.op = Op::Param;
    n.name = name;
    n.shape = init.shape;
    n.val = std::move(init);
    n.trainable = true;
    n.bound = true;
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::constant(Array<T> value, const std::string& name) {
    Node n;
    n.op = Op::Const;
    n.name = name;
    n.shape = value.shape;
    n.val = std::move(value);
    n.bound = true;
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::add(Var a, Var b) {
    Node n;
    n.op = Op::Add;
    n.in = {a.id, b.id};
    bool ok = false;
    n.shape = broadcast_shape(nd(a.id).shape, nd(b.id).shape, ok);
    if (!ok)
        fail(n, "cannot broadcast " + shape_str(nd(a.id).shape) + " with " + shape_str(nd(b.id).shape));
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::sub(Var a, Var b) {
    Var v = add(a, b);
    node(v).op = Op::Sub;
    return v;
}

template <typename T>
Var Graph<T>::mul(Var a, Var b) {
    Var v = add(a, b);
    node(v).op = Op::Mul;
    return v;
}

template <typename T>
Var Graph<T>::add_scalar(Var a, double c) {
    Node n;
    n.op = Op::AddScalar;
    n.in = {a.id};
    n.shape = nd(a.id).shape;
    n.s0 = c;
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::mul_scalar(Var a, double c) {
    Var v = add_scalar(a, c);
    node(v).op = Op::MulScalar;
    return v;
}

template <typename T>
Var Graph<T>::pow_scalar(Var a, double c) {
    Var v = add_scalar(a, c);
    node(v).op = Op::PowScalar;
    return v;
}

template <typename T>
Var Graph<T>::exp(Var a) {
    Node n;
    n.op = Op::Exp;
    n.in = {a.id};
    n.shape = nd(a.id).shape;
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::sqrt(Var a) {
    Var v = exp(a);
    node(v).op = Op::Sqrt;
    return v;
}

template <typename T>
Var Graph<T>::abs(Var a) {
    Var v = exp(a);
    node(v).op = Op::Abs;
    return v;
}

template <typename T>
Var Graph<T>::gelu(Var a) {
    Var v = exp(a);
    node(v).op = Op::Gelu;
    return v;
}

template <typename T>
Var Graph<T>::matmul(Var a, Var b) {
    Node n;
    n.op = Op::Matmul;
    n.in = {a.id, b.id};
    const Shape& sa = nd(a.id).shape;
    const Shape& sb = nd(b.id).shape;
    if (sa.size() != 2 || sb.size() != 2) fail(n, "matmul needs rank-2 operands");
    if (sa[1] != sb[0])
        fail(n, "inner dims disagree: " + shape_str(sa) + " x " + shape_str(sb));
    n.shape = {sa[0], sb[1]};
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::matmul_nt(Var a, Var b) {
    Node n;
    n.op = Op::MatmulNT;
    n.in = {a.id, b.id};
    const Shape& sa = nd(a.id).shape;
    const Shape& sb = nd(b.id).shape;
    if (sa.size() != 2 || sb.size() != 2) fail(n, "matmul_nt needs rank-2 operands");
    if (sa[1] != sb[1])
        fail(n, "inner dims disagree: " + shape_str(sa) + " x " + shape_str(sb) + "^T");
    n.shape = {sa[0], sb[0]};
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::matmul_tn(Var a, Var b) {
    Node n;
    n.op = Op::MatmulTN;
    n.in = {a.id, b.id};
    const Shape& sa = nd(a.id).shape;
    const Shape& sb = nd(b.id).shape;
    if (sa.size() != 2 || sb.size() != 2) fail(n, "matmul_tn needs rank-2 operands");
    if (sa[0] != sb[0])
        fail(n, "inner dims disagree: " + shape_str(sa) + "^T x " + shape_str(sb));
    n.shape = {sa[1], sb[1]};
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::transpose(Var a) {
    Node n;
    n.op = Op::Transpose;
    n.in = {a.id};
    const Shape& s = nd(a.id).shape;
    if (s.size() != 2) fail(n, "transpose needs rank-2");
    n.shape = {s[1], s[0]};
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::reshape(Var a, Shape shape) {
    Node n;
    n.op = Op::Reshape;
    n.in = {a.id};
    if (numel(shape) != numel(nd(a.id).shape))
        fail(n, "reshape " + shape_str(nd(a.id).shape) + " -> " + shape_str(shape) + " changes element count");
    n.shape = std::move(shape);
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::concat_rows(const std::vector<Var>& vs) {
    Node n;
    n.op = Op::ConcatRows;
    if (vs.empty()) fail(n, "concat of nothing");
    Shape s = nd(vs[0].id).shape;
    if (s.empty()) fail(n, "concat_rows needs rank >= 1");
    int64_t rows = 0;
    for (Var v : vs) {
        const Shape& si = nd(v.id).shape;
        if (si.size() != s.size() || !std::equal(si.begin() + 1, si.end(), s.begin() + 1))
            fail(n, "trailing dims differ: " + shape_str(si) + " vs " + shape_str(s));
        rows += si[0];
        n.in.push_back(v.id);
    }
    s[0] = rows;
    n.shape = std::move(s);
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::concat_cols(const std::vector<Var>& vs) {
    Node n;
    n.op = Op::ConcatCols;
    if (vs.empty()) fail(n, "concat of nothing");
    const Shape& s0 = nd(vs[0].id).shape;
    if (s0.size() != 2) fail(n, "concat_cols needs rank-2");
    int64_t cols = 0;
    for (Var v : vs) {
        const Shape& si = nd(v.id).shape;
        if (si.size() != 2 || si[0] != s0[0]) fail(n, "row counts differ");
        cols += si[1];
        n.in.push_back(v.id);
    }
    n.shape = {s0[0], cols};
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::slice_rows(Var a, int64_t begin, int64_t len) {
    Node n;
    n.op = Op::SliceRows;
    n.in = {a.id};
    Shape s = nd(a.id).shape;
    if (s.empty()) fail(n, "slice_rows needs rank >= 1");
    if (begin < 0 || len < 0 || begin + len > s[0]) fail(n, "slice out of range");
    n.a0 = begin;
    n.a1 = len;
    s[0] = len;
    n.shape = std::move(s);
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::slice_cols(Var a, int64_t begin, int64_t len) {
    Node n;
    n.op = Op::SliceCols;
    n.in = {a.id};
    const Shape& s = nd(a.id).shape;
    if (s.size() != 2) fail(n, "slice_cols needs rank-2");
    if (begin < 0 || len < 0 || begin + len > s[1]) fail(n, "slice out of range");
    n.a0 = begin;
    n.a1 = len;
    n.shape = {s[0], len};
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::gather_rows(Var a, std::vector<int64_t> idx, const std::string& name) {
    Node n;
    n.op = Op::GatherRows;
    n.name = name;
    n.in = {a.id};
    Shape s = nd(a.id).shape;
    if (s.empty()) fail(n, "gather_rows needs rank >= 1");
    for (int64_t i : idx)
        if (i < 0 || i >= s[0]) fail(n, "index " + std::to_string(i) + " out of range " + std::to_string(s[0]));
    s[0] = static_cast<int64_t>(idx.size());
    n.idx = std::move(idx);
    n.shape = std::move(s);
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::scatter_rows(Var a, std::vector<int64_t> idx, int64_t out_len, const std::string& name) {
    Node n;
    n.op = Op::ScatterRows;
    n.name = name;
    n.in = {a.id};
    Shape s = nd(a.id).shape;
    if (s.empty()) fail(n, "scatter_rows needs rank >= 1");
    if (static_cast<int64_t>(idx.size()) != s[0]) fail(n, "index count != row count");
    std::vector<uint8_t> seen(static_cast<size_t>(out_len), 0);
    for (int64_t i : idx) {
        if (i < 0 || i >= out_len) fail(n, "index " + std::to_string(i) + " out of range " + std::to_string(out_len));
        if (seen[static_cast<size_t>(i)]++) fail(n, "duplicate scatter index " + std::to_string(i));
    }
    s[0] = out_len;
    n.idx = std::move(idx);
    n.shape = std::move(s);
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::tile_rows(Var a, int64_t k) {
    Node n;
    n.op = Op::TileRows;
    n.in = {a.id};
    const Shape& s = nd(a.id).shape;
    if (s.size() != 1) fail(n, "tile_rows needs rank-1");
    if (k < 1) fail(n, "tile count must be >= 1");
    n.a0 = k;
    n.shape = {k, s[0]};
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::sum_all(Var a) {
    Node n;
    n.op = Op::SumAll;
    n.in = {a.id};
    n.shape = {};
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::mean_all(Var a) {
    Var v = sum_all(a);
    node(v).op = Op::MeanAll;
    return v;
}

template <typename T>
Var Graph<T>::sum_axis(Var a, int axis) {
    Node n;
    n.op = Op::SumAxis;
    n.in = {a.id};
    const Shape& s = nd(a.id).shape;
    if (axis < 0 || axis >= static_cast<int>(s.size())) fail(n, "axis out of range");
    n.a0 = axis;
    Shape out;
    for (int i = 0; i < static_cast<int>(s.size()); ++i)
        if (i != axis) out.push_back(s[static_cast<size_t>(i)]);
    n.shape = std::move(out);
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::mean_axis(Var a, int axis) {
    Var v = sum_axis(a, axis);
    node(v).op = Op::MeanAxis;
    return v;
}

template <typename T>
Var Graph<T>::softmax_rows(Var a) {
    Node n;
    n.op = Op::SoftmaxRows;
    n.in = {a.id};
    const Shape& s = nd(a.id).shape;
    if (s.empty()) fail(n, "softmax needs rank >= 1");
    n.shape = s;
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::layernorm_rows(Var a, double eps) {
    Node n;
    n.op = Op::LayerNormRows;
    n.in = {a.id};
    const Shape& s = nd(a.id).shape;
    if (s.empty()) fail(n, "layernorm needs rank >= 1");
    n.shape = s;
    n.s0 = eps;
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::l2norm_rows(Var a) {
    Node n;
    n.op = Op::L2NormRows;
    n.in = {a.id};
    Shape s = nd(a.id).shape;
    if (s.empty()) fail(n, "l2norm needs rank >= 1");
    s.pop_back();
    n.shape = std::move(s);
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::cosine_rows(Var a, Var b, std::vector<uint8_t> enable, const std::string& name) {
    Node n;
    n.op = Op::CosineRows;
    n.name = name;
    n.in = {a.id, b.id};
    const Shape& sa = nd(a.id).shape;
    if (sa != nd(b.id).shape) fail(n, "operand shapes differ");
    if (sa.empty()) fail(n, "cosine needs rank >= 1");
    Shape out = sa;
    out.pop_back();
    const int64_t rows = numel(out);
    if (!enable.empty() && static_cast<int64_t>(enable.size()) != rows) fail(n, "enable length != rows");
    n.en = std::move(enable);
    n.shape = std::move(out);
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::normalize_rows(Var a, std::vector<uint8_t> enable, const std::string& name) {
    Node n;
    n.op = Op::NormalizeRows;
    n.name = name;
    n.in = {a.id};
    const Shape& s = nd(a.id).shape;
    if (s.empty()) fail(n, "normalize needs rank >= 1");
    const int64_t rows = numel(s) / s.back();
    if (!enable.empty() && static_cast<int64_t>(enable.size()) != rows) fail(n, "enable length != rows");
    n.en = std::move(enable);
    n.shape = s;
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::conv2d(Var x, Var w) {
    Node n;
    n.op = Op::Conv2D;
    n.in = {x.id, w.id};
    const Shape& sx = nd(x.id).shape;
    const Shape& sw = nd(w.id).shape;
    if (sx.size() != 3) fail(n, "conv2d input must be [C,H,W]");
    if (sw.size() != 4) fail(n, "conv2d kernel must be [Cout,Cin,k,k]");
    if (sw[1] != sx[0]) fail(n, "kernel Cin != input channels");
    if (sw[2] != sw[3]) fail(n, "kernel must be square");
    if (sw[2] % 2 == 0) fail(n, "kernel size must be odd");
    n.a0 = sw[2];
    n.shape = {sw[0], sx[1], sx[2]};
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::add_channel_bias(Var x, Var b) {
    Node n;
    n.op = Op::AddChannelBias;
    n.in = {x.id, b.id};
    const Shape& sx = nd(x.id).shape;
    const Shape& sb = nd(b.id).shape;
    if (sx.size() < 2) fail(n, "needs rank >= 2");
    if (sb.size() != 1 || sb[0] != sx[0]) fail(n, "bias length != leading dim");
    n.shape = sx;
    return push(std::move(n));
}

template <typename T>
Var Graph<T>::detach(Var a) {
    Node n;
    n.op = Op::Detach;
    n.in = {a.id};
    n.shape = nd(a.id).shape;
    return push(std::move(n));
}

// ---- binding ----

template <typename T>
Var Graph<T>::by_name(const std::string& name) const {
    auto it = named_.find(name);
    if (it == named_.end()) throw GraphError("no node named '" + name + "'");
    return Var{it->second};
}

template <typename T>
void Graph<T>::rename(Var v, const std::string& name) {
    Node& n = node(v);
    if (!n.name.empty()) named_.erase(n.name);
    n.name = name;
    if (named_.count(name)) throw GraphError("duplicate node name '" + name + "'");
    named_[name] = v.id;
}

template <typename T>
void Graph<T>::bind(const std::string& input_name, Array<T> value) {
    bind(by_name(input_name), std::move(value));
}

template <typename T>
void Graph<T>::bind(Var v, Array<T> value) {
    Node& n = node(v);
    if (n.op != Op::Input) fail(n, "bind target is not an input");
    if (value.shape != n.shape)
        fail(n, "bound value shape " + shape_str(value.shape) + " != declared " + shape_str(n.shape));
    n.val = std::move(value);
    n.bound = true;
}

template <typename T>
void Graph<T>::bind_indices(const std::string& node_name, std::vector<int64_t> idx) {
    bind_indices(by_name(node_name), std::move(idx));
}

template <typename T>
void Graph<T>::bind_indices(Var v, std::vector<int64_t> idx) {
    Node& n = node(v);
    if (n.op != Op::GatherRows && n.op != Op::ScatterRows) fail(n, "not an index node");
    if (idx.size() != n.idx.size()) fail(n, "rebinding must keep index count");
    const int64_t limit = n.op == Op::GatherRows ? nd(n.in[0]).shape[0] : n.shape[0];
    std::vector<uint8_t> seen(static_cast<size_t>(limit), 0);
    for (int64_t i : idx) {
        if (i < 0 || i >= limit) fail(n, "index " + std::to_string(i) + " out of range " + std::to_string(limit));
        if (n.op == Op::ScatterRows && seen[static_cast<size_t>(i)]++)
            fail(n, "duplicate scatter index " + std::to_string(i));
    }
    n.idx = std::move(idx);
}

template <typename T>
void Graph<T>::bind_enable(const std::string& node_name, std::vector<uint8_t> enable) {
    bind_enable(by_name(node_name), std::move(enable));
}

template <typename T>
void Graph<T>::bind_enable(Var v, std::vector<uint8_t> enable) {
    Node& n = node(v);
    if (n.op != Op::CosineRows && n.op != Op::NormalizeRows) fail(n, "not a maskable node");
    const int64_t rows = n.op == Op::CosineRows ? numel(n.shape) : numel(n.shape) / n.shape.back();
    if (static_cast<int64_t>(enable.size()) != rows) fail(n, "enable length != rows");
    n.en = std::move(enable);
}

template <typename T>
Array<T>& Graph<T>::param_value(const std::string& name) {
    Node& n = node(by_name(name));
    if (n.op != Op::Param && n.op != Op::Input) fail(n, "not a parameter or input");
    return n.val;
}

template <typename T>
const Array<T>& Graph<T>::grad_of(const std::string& name) const {
    return node(by_name(name)).grad;
}

template <typename T>
std::vector<std::string> Graph<T>::param_names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (int32_t i : params_) out.push_back(nd(i).name);
    return out;
}

// ---- forward ----

template <typename T>
void Graph<T>::eval_node(Node& n) {
    const int64_t total = numel(n.shape);
    T* y = n.val.data.data();
    switch (n.op) {
        case Op::Input:
            if (!n.bound) fail(n, "input not bound");
            return;  // value already in place
        case Op::Param:
        case Op::Const:
            return;
        case Op::Add:
        case Op::Sub:
        case Op::Mul: {
            const Node& a = nd(n.in[0]);
            const Node& b = nd(n.in[1]);
            const T* pa = a.val.data.data();
            const T* pb = b.val.data.data();
            if (a.shape == b.shape) {
                if (n.op == Op::Add)
                    for (int64_t i = 0; i < total; ++i) y[i] = pa[i] + pb[i];
                else if (n.op == Op::Sub)
                    for (int64_t i = 0; i < total; ++i) y[i] = pa[i] - pb[i];
                else
                    for (int64_t i = 0; i < total; ++i) y[i] = pa[i] * pb[i];
            } else {
                const auto sa = bcast_strides(a.shape, n.shape);
                const auto sb = bcast_strides(b.shape, n.shape);
                if (n.op == Op::Add)
                    bcast_walk<T>(n.shape, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) { y[o] = pa[ia] + pb[ib]; });
                else if (n.op == Op::Sub)
                    bcast_walk<T>(n.shape, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) { y[o] = pa[ia] - pb[ib]; });
                else
                    bcast_walk<T>(n.shape, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) { y[o] = pa[ia] * pb[ib]; });
            }
            break;
        }
        case Op::AddScalar: {
            const T* x = nd(n.in[0]).val.data.data();
            const T c = static_cast<T>(n.s0);
            for (int64_t i = 0; i < total; ++i) y[i] = x[i] + c;
            break;
        }
        case Op::MulScalar: {
            const T* x = nd(n.in[0]).val.data.data();
            const T c = static_cast<T>(n.s0);
            for (int64_t i = 0; i < total; ++i) y[i] = x[i] * c;
            break;
        }
        case Op::PowScalar: {
            const T* x = nd(n.in[0]).val.data.data();
            const double c = n.s0;
            for (int64_t i = 0; i < total; ++i) y[i] = static_cast<T>(std::pow(static_cast<double>(x[i]), c));
            break;
        }
        case Op::Exp: {
            const T* x = nd(n.in[0]).val.data.data();
            for (int64_t i = 0; i < total; ++i) y[i] = std::exp(x[i]);
            break;
        }
        case Op::Sqrt: {
            const T* x = nd(n.in[0]).val.data.data();
            for (int64_t i = 0; i < total; ++i) y[i] = std::sqrt(x[i]);
            break;
        }
        case Op::Abs: {
            const T* x = nd(n.in[0]).val.data.data();
            for (int64_t i = 0; i < total; ++i) y[i] = std::abs(x[i]);
            break;
        }
        case Op::Gelu: {
            const T* x = nd(n.in[0]).val.data.data();
            for (int64_t i = 0; i < total; ++i) y[i] = static_cast<T>(gelu_val(static_cast<double>(x[i])));
            break;
        }
        case Op::Matmul: {
            const Node& a = nd(n.in[0]);
            const Node& b = nd(n.in[1]);
            std::fill(n.val.data.begin(), n.val.data.end(), T(0));
            mm_nn(a.val.data.data(), b.val.data.data(), y, a.shape[0], a.shape[1], b.shape[1]);
            break;
        }
        case Op::MatmulNT: {
            const Node& a = nd(n.in[0]);
            const Node& b = nd(n.in[1]);
            std::fill(n.val.data.begin(), n.val.data.end(), T(0));
            mm_nt(a.val.data.data(), b.val.data.data(), y, a.shape[0], a.shape[1], b.shape[0]);
            break;
        }
        case Op::MatmulTN: {
            const Node& a = nd(n.in[0]);
            const Node& b = nd(n.in[1]);
            std::fill(n.val.data.begin(), n.val.data.end(), T(0));
            mm_tn(a.val.data.data(), b.val.data.data(), y, a.shape[0], a.shape[1], b.shape[1]);
            break;
        }
        case Op::Transpose: {
            const Node& a = nd(n.in[0]);
            const T* x = a.val.data.data();
            const int64_t r = a.shape[0], c = a.shape[1];
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) y[j * r + i] = x[i * c + j];
            break;
        }
        case Op::Reshape:
        case Op::Detach: {
            const Node& a = nd(n.in[0]);
            std::copy(a.val.data.begin(), a.val.data.end(), n.val.data.begin());
            break;
        }
        case Op::ConcatRows: {
            int64_t off = 0;
            for (int32_t i : n.in) {
                const Node& a = nd(i);
                std::copy(a.val.data.begin(), a.val.data.end(), n.val.data.begin() + off);
                off += a.val.size();
            }
            break;
        }
        case Op::ConcatCols: {
            const int64_t rows = n.shape[0], cols = n.shape[1];
            int64_t coff = 0;
            for (int32_t i : n.in) {
                const Node& a = nd(i);
                const int64_t ac = a.shape[1];
                const T* x = a.val.data.data();
                for (int64_t r = 0; r < rows; ++r)
                    std::copy(x + r * ac, x + (r + 1) * ac, y + r * cols + coff);
                coff += ac;
            }
            break;
        }
        case Op::SliceRows: {
            const Node& a = nd(n.in[0]);
            const int64_t rs = numel(a.shape) / a.shape[0];
            std::copy(a.val.data.begin() + n.a0 * rs, a.val.data.begin() + (n.a0 + n.a1) * rs, n.val.data.begin());
            break;
        }
        case Op::SliceCols: {
            const Node& a = nd(n.in[0]);
            const int64_t cols = a.shape[1];
            const T* x = a.val.data.data();
            for (int64_t r = 0; r < n.shape[0]; ++r)
                std::copy(x + r * cols + n.a0, x + r * cols + n.a0 + n.a1, y + r * n.a1);
            break;
        }
        case Op::GatherRows: {
            const Node& a = nd(n.in[0]);
            const int64_t rs = numel(a.shape) / a.shape[0];
            const T* x = a.val.data.data();
            for (size_t r = 0; r < n.idx.size(); ++r)
                std::copy(x + n.idx[r] * rs, x + (n.idx[r] + 1) * rs, y + static_cast<int64_t>(r) * rs);
            break;
        }
        case Op::ScatterRows: {
            const Node& a = nd(n.in[0]);
            const int64_t rs = numel(a.shape) / a.shape[0];
            std::fill(n.val.data.begin(), n.val.data.end(), T(0));
            const T* x = a.val.data.data();
            for (size_t r = 0; r < n.idx.size(); ++r)
                std::copy(x + static_cast<int64_t>(r) * rs, x + static_cast<int64_t>(r + 1) * rs, y + n.idx[r] * rs);
            break;
        }
        case Op::TileRows: {
            const Node& a = nd(n.in[0]);
            const int64_t d = a.shape[0];
            for (int64_t r = 0; r < n.a0; ++r) std::copy(a.val.data.begin(), a.val.data.end(), y + r * d);
            break;
        }
        case Op::SumAll:
        case Op::MeanAll: {
            const Node& a = nd(n.in[0]);
            double acc = 0.0;
            for (const T& v : a.val.data) acc += static_cast<double>(v);
            if (n.op == Op::MeanAll) acc /= static_cast<double>(a.val.size());
            y[0] = static_cast<T>(acc);
            break;
        }
        case Op::SumAxis:
        case Op::MeanAxis: {
            const Node& a = nd(n.in[0]);
            int64_t outer, mid, inner;
            reduce_axis_extents<T>(a.shape, static_cast<int>(n.a0), outer, mid, inner);
            const T* x = a.val.data.data();
            const T scale = n.op == Op::MeanAxis ? static_cast<T>(1.0 / static_cast<double>(mid)) : T(1);
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t i = 0; i < inner; ++i) {
                    double acc = 0.0;
                    for (int64_t m = 0; m < mid; ++m) acc += static_cast<double>(x[(o * mid + m) * inner + i]);
                    y[o * inner + i] = static_cast<T>(acc) * scale;
                }
            break;
        }
        case Op::SoftmaxRows: {
            const Node& a = nd(n.in[0]);
            const int64_t cols = a.shape.back();
            const int64_t rows = total / cols;
            const T* x = a.val.data.data();
            for (int64_t r = 0; r < rows; ++r) {
                const T* xr = x + r * cols;
                T* yr = y + r * cols;
                T mx = xr[0];
                for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
                double z = 0.0;
                for (int64_t c = 0; c < cols; ++c) {
                    yr[c] = std::exp(xr[c] - mx);
                    z += static_cast<double>(yr[c]);
                }
                const T inv = static_cast<T>(1.0 / z);
                for (int64_t c = 0; c < cols; ++c) yr[c] *= inv;
            }
            break;
        }
        case Op::LayerNormRows: {
            const Node& a = nd(n.in[0]);
            const int64_t cols = a.shape.back();
            const int64_t rows = total / cols;
            const T* x = a.val.data.data();
            for (int64_t r = 0; r < rows; ++r) {
                const T* xr = x + r * cols;
                T* yr = y + r * cols;
                double mu = 0.0;
                for (int64_t c = 0; c < cols; ++c) mu += static_cast<double>(xr[c]);
                mu /= static_cast<double>(cols);
                double var = 0.0;
                for (int64_t c = 0; c < cols; ++c) {
                    const double d = static_cast<double>(xr[c]) - mu;
                    var += d * d;
                }
                var /= static_cast<double>(cols);
                const double inv = 1.0 / std::sqrt(var + n.s0);
                for (int64_t c = 0; c < cols; ++c)
                    yr[c] = static_cast<T>((static_cast<double>(xr[c]) - mu) * inv);
            }
            break;
        }
        case Op::L2NormRows: {
            const Node& a = nd(n.in[0]);
            const int64_t cols = a.shape.back();
            const int64_t rows = numel(a.shape) / cols;
            const T* x = a.val.data.data();
            for (int64_t r = 0; r < rows; ++r) {
                double acc = 0.0;
                for (int64_t c = 0; c < cols; ++c) {
                    const double v = static_cast<double>(x[r * cols + c]);
                    acc += v * v;
                }
                y[r] = static_cast<T>(std::sqrt(acc));
            }
            break;
        }
        case Op::CosineRows: {
            const Node& a = nd(n.in[0]);
            const Node& b = nd(n.in[1]);
            const int64_t cols = a.shape.back();
            const int64_t rows = numel(a.shape) / cols;
            const T* xa = a.val.data.data();
            const T* xb = b.val.data.data();
            for (int64_t r = 0; r < rows; ++r) {
                if (!n.en.empty() && !n.en[static_cast<size_t>(r)]) {
                    y[r] = T(0);
                    continue;
                }
                double na = 0.0, nb = 0.0, dot = 0.0;
                for (int64_t c = 0; c < cols; ++c) {
                    const double va = static_cast<double>(xa[r * cols + c]);
                    const double vb = static_cast<double>(xb[r * cols + c]);
                    na += va * va;
                    nb += vb * vb;
                    dot += va * vb;
                }
                if (na == 0.0 || nb == 0.0)
                    throw NumericError("node " + label(n) + ": zero-norm vector at row " + std::to_string(r) +
                                       ", cosine undefined");
                y[r] = static_cast<T>(dot / (std::sqrt(na) * std::sqrt(nb)));
            }
            break;
        }
        case Op::NormalizeRows: {
            const Node& a = nd(n.in[0]);
            const int64_t cols = a.shape.back();
            const int64_t rows = total / cols;
            const T* x = a.val.data.data();
            for (int64_t r = 0; r < rows; ++r) {
                if (!n.en.empty() && !n.en[static_cast<size_t>(r)]) {
                    std::fill(y + r * cols, y + (r + 1) * cols, T(0));
                    continue;
                }
                double acc = 0.0;
                for (int64_t c = 0; c < cols; ++c) {
                    const double v = static_cast<double>(x[r * cols + c]);
                    acc += v * v;
                }
                if (acc == 0.0)
                    throw NumericError("node " + label(n) + ": zero-norm row " + std::to_string(r) +
                                       ", cannot normalize");
                const T inv = static_cast<T>(1.0 / std::sqrt(acc));
                for (int64_t c = 0; c < cols; ++c) y[r * cols + c] = x[r * cols + c] * inv;
            }
            break;
        }
        case Op::Conv2D: {
            const Node& xn = nd(n.in[0]);
            const Node& wn = nd(n.in[1]);
            const int64_t cin = xn.shape[0], h = xn.shape[1], w = xn.shape[2];
            const int64_t cout = wn.shape[0], k = n.a0, p = k / 2;
            const T* x = xn.val.data.data();
            const T* wt = wn.val.data.data();
            std::fill(n.val.data.begin(), n.val.data.end(), T(0));
            for (int64_t co = 0; co < cout; ++co)
                for (int64_t ci = 0; ci < cin; ++ci) {
                    const T* xc = x + ci * h * w;
                    const T* wk = wt + (co * cin + ci) * k * k;
                    T* yc = y + co * h * w;
                    for (int64_t di = 0; di < k; ++di)
                        for (int64_t dj = 0; dj < k; ++dj) {
                            const T wv = wk[di * k + dj];
                            if (wv == T(0)) continue;
                            const int64_t i0 = std::max<int64_t>(0, p - di), i1 = std::min(h, h + p - di);
                            const int64_t j0 = std::max<int64_t>(0, p - dj), j1 = std::min(w, w + p - dj);
                            for (int64_t i = i0; i < i1; ++i) {
                                const T* xrow = xc + (i + di - p) * w + (j0 + dj - p);
                                T* yrow = yc + i * w + j0;
                                for (int64_t j = 0; j < j1 - j0; ++j) yrow[j] += wv * xrow[j];
                            }
                        }
                }
            break;
        }
        case Op::AddChannelBias: {
            const Node& xn = nd(n.in[0]);
            const Node& bn = nd(n.in[1]);
            const int64_t c = xn.shape[0];
            const int64_t sp = total / c;
            const T* x = xn.val.data.data();
            const T* b = bn.val.data.data();
            for (int64_t ci = 0; ci < c; ++ci)
                for (int64_t i = 0; i < sp; ++i) y[ci * sp + i] = x[ci * sp + i] + b[ci];
            break;
        }
    }
    if (check_finite_ && !n.val.all_finite())
        throw NumericError("node " + label(n) + ": non-finite value produced");
}

template <typename T>
void Graph<T>::forward() {
    for (Node& n : nodes_) eval_node(n);
}

template <typename T>
std::map<std::string, Array<T>> Graph<T>::evaluate(const std::map<std::string, Array<T>>& inputs,
                                                   const std::vector<std::string>& outputs) {
    for (const auto& [k, v] : inputs) bind(k, v);
    forward();
    std::map<std::string, Array<T>> out;
    for (const std::string& name : outputs) out[name] = node(by_name(name)).val;
    return out;
}

// ---- backward ----

template <typename T>
void Graph<T>::backprop_node(Node& n) {
    const int64_t total = numel(n.shape);
    const T* g = n.grad.data.data();
    auto gin = [&](int slot) -> Array<T>& { return nd(n.in[static_cast<size_t>(slot)]).grad; };
    auto want = [&](int slot) { return nd(n.in[static_cast<size_t>(slot)]).needs_grad; };

    switch (n.op) {
        case Op::Input:
        case Op::Param:
        case Op::Const:
        case Op::Detach:
            return;
        case Op::Add:
        case Op::Sub:
        case Op::Mul: {
            const Node& a = nd(n.in[0]);
            const Node& b = nd(n.in[1]);
            if (a.shape == b.shape) {
                if (want(0)) {
                    T* da = gin(0).data.data();
                    for (int64_t i = 0; i < total; ++i)
                        da[i] += n.op == Op::Mul ? g[i] * b.val.data[static_cast<size_t>(i)] : g[i];
                }
                if (want(1)) {
                    T* db = gin(1).data.data();
                    if (n.op == Op::Add)
                        for (int64_t i = 0; i < total; ++i) db[i] += g[i];
                    else if (n.op == Op::Sub)
                        for (int64_t i = 0; i < total; ++i) db[i] -= g[i];
                    else
                        for (int64_t i = 0; i < total; ++i) db[i] += g[i] * a.val.data[static_cast<size_t>(i)];
                }
            } else {
                const auto sa = bcast_strides(a.shape, n.shape);
                const auto sb = bcast_strides(b.shape, n.shape);
                T* da = want(0) ? gin(0).data.data() : nullptr;
                T* db = want(1) ? gin(1).data.data() : nullptr;
                const T* pa = a.val.data.data();
                const T* pb = b.val.data.data();
                bcast_walk<T>(n.shape, sa, sb, [&](int64_t o, int64_t ia, int64_t ib) {
                    if (n.op == Op::Mul) {
                        if (da) da[ia] += g[o] * pb[ib];
                        if (db) db[ib] += g[o] * pa[ia];
                    } else {
                        if (da) da[ia] += g[o];
                        if (db) db[ib] += n.op == Op::Sub ? -g[o] : g[o];
                    }
                });
            }
            break;
        }
        case Op::AddScalar: {
            T* da = gin(0).data.data();
            for (int64_t i = 0; i < total; ++i) da[i] += g[i];
            break;
        }
        case Op::MulScalar: {
            T* da = gin(0).data.data();
            const T c = static_cast<T>(n.s0);
            for (int64_t i = 0; i < total; ++i) da[i] += g[i] * c;
            break;
        }
        case Op::PowScalar: {
            T* da = gin(0).data.data();
            const T* x = nd(n.in[0]).val.data.data();
            const double c = n.s0;
            for (int64_t i = 0; i < total; ++i)
                da[i] += g[i] * static_cast<T>(c * std::pow(static_cast<double>(x[i]), c - 1.0));
            break;
        }
        case Op::Exp: {
            T* da = gin(0).data.data();
            for (int64_t i = 0; i < total; ++i) da[i] += g[i] * n.val.data[static_cast<size_t>(i)];
            break;
        }
        case Op::Sqrt: {
            T* da = gin(0).data.data();
            for (int64_t i = 0; i < total; ++i)
                da[i] += g[i] * static_cast<T>(0.5) / n.val.data[static_cast<size_t>(i)];
            break;
        }
        case Op::Abs: {
            T* da = gin(0).data.data();
            const T* x = nd(n.in[0]).val.data.data();
            for (int64_t i = 0; i < total; ++i)
                da[i] += x[i] > T(0) ? g[i] : (x[i] < T(0) ? -g[i] : T(0));
            break;
        }
        case Op::Gelu: {
            T* da = gin(0).data.data();
            const T* x = nd(n.in[0]).val.data.data();
            for (int64_t i = 0; i < total; ++i)
                da[i] += g[i] * static_cast<T>(gelu_grad(static_cast<double>(x[i])));
            break;
        }
        case Op::Matmul: {
            const Node& a = nd(n.in[0]);
            const Node& b = nd(n.in[1]);
            if (want(0)) mm_nt(g, b.val.data.data(), gin(0).data.data(), a.shape[0], b.shape[1], a.shape[1]);
            if (want(1)) mm_tn(a.val.data.data(), g, gin(1).data.data(), a.shape[0], a.shape[1], b.shape[1]);
            break;
        }
        case Op::MatmulNT: {
            const Node& a = nd(n.in[0]);
            const Node& b = nd(n.in[1]);
            if (want(0)) mm_nn(g, b.val.data.data(), gin(0).data.data(), a.shape[0], b.shape[0], a.shape[1]);
            if (want(1)) mm_tn(g, a.val.data.data(), gin(1).data.data(), a.shape[0], b.shape[0], b.shape[1]);
            break;
        }
        case Op::MatmulTN: {
            const Node& a = nd(n.in[0]);
            const Node& b = nd(n.in[1]);
            if (want(0)) mm_nt(b.val.data.data(), g, gin(0).data.data(), a.shape[0], b.shape[1], a.shape[1]);
            if (want(1)) mm_nn(a.val.data.data(), g, gin(1).data.data(), a.shape[0], a.shape[1], b.shape[1]);
            break;
        }
        case Op::Transpose: {
            T* da = gin(0).data.data();
            const int64_t r = n.shape[0], c = n.shape[1];
            for (int64_t i = 0; i < r; ++i)
                for (int64_t j = 0; j < c; ++j) da[j * r + i] += g[i * c + j];
            break;
        }
        case Op::Reshape: {
            T* da = gin(0).data.data();
            for (int64_t i = 0; i < total; ++i) da[i] += g[i];
            break;
        }
        case Op::ConcatRows: {
            int64_t off = 0;
            for (size_t s = 0; s < n.in.size(); ++s) {
                Node& a = nd(n.in[s]);
                if (a.needs_grad) {
                    T* da = a.grad.data.data();
                    for (int64_t i = 0; i < a.val.size(); ++i) da[i] += g[off + i];
                }
                off += a.val.size();
            }
            break;
        }
        case Op::ConcatCols: {
            const int64_t rows = n.shape[0], cols = n.shape[1];
            int64_t coff = 0;
            for (size_t s = 0; s < n.in.size(); ++s) {
                Node& a = nd(n.in[s]);
                const int64_t ac = a.shape[1];
                if (a.needs_grad) {
                    T* da = a.grad.data.data();
                    for (int64_t r = 0; r < rows; ++r)
                        for (int64_t c = 0; c < ac; ++c) da[r * ac + c] += g[r * cols + coff + c];
                }
                coff += ac;
            }
            break;
        }
        case Op::SliceRows: {
            const Node& a = nd(n.in[0]);
            const int64_t rs = numel(a.shape) / a.shape[0];
            T* da = gin(0).data.data();
            for (int64_t i = 0; i < total; ++i) da[n.a0 * rs + i] += g[i];
            break;
        }
        case Op::SliceCols: {
            const Node& a = nd(n.in[0]);
            const int64_t cols = a.shape[1];
            T* da = gin(0).data.data();
            for (int64_t r = 0; r < n.shape[0]; ++r)
                for (int64_t c = 0; c < n.a1; ++c) da[r * cols + n.a0 + c] += g[r * n.a1 + c];
            break;
        }
        case Op::GatherRows: {
            const Node& a = nd(n.in[0]);
            const int64_t rs = numel(a.shape) / a.shape[0];
            T* da = gin(0).data.data();
            for (size_t r = 0; r < n.idx.size(); ++r)
                for (int64_t c = 0; c < rs; ++c) da[n.idx[r] * rs + c] += g[static_cast<int64_t>(r) * rs + c];
            break;
        }
        case Op::ScatterRows: {
            const Node& a = nd(n.in[0]);
            const int64_t rs = numel(a.shape) / a.shape[0];
            T* da = gin(0).data.data();
            for (size_t r = 0; r < n.idx.size(); ++r)
                for (int64_t c = 0; c < rs; ++c) da[static_cast<int64_t>(r) * rs + c] += g[n.idx[r] * rs + c];
            break;
        }
        case Op::TileRows: {
            const Node& a = nd(n.in[0]);
            const int64_t d = a.shape[0];
            T* da = gin(0).data.data();
            for (int64_t r = 0; r < n.a0; ++r)
                for (int64_t c = 0; c < d; ++c) da[c] += g[r * d + c];
            break;
        }
        case Op::SumAll: {
            T* da = gin(0).data.data();
            const int64_t sz = nd(n.in[0]).val.size();
            for (int64_t i = 0; i < sz; ++i) da[i] += g[0];
            break;
        }
        case Op::MeanAll: {
            T* da = gin(0).data.data();
            const int64_t sz = nd(n.in[0]).val.size();
            const T s = g[0] / static_cast<T>(sz);
            for (int64_t i = 0; i < sz; ++i) da[i] += s;
            break;
        }
        case Op::SumAxis:
        case Op::MeanAxis: {
            const Node& a = nd(n.in[0]);
            int64_t outer, mid, inner;
            reduce_axis_extents<T>(a.shape, static_cast<int>(n.a0), outer, mid, inner);
            T* da = gin(0).data.data();
            const T scale = n.op == Op::MeanAxis ? static_cast<T>(1.0 / static_cast<double>(mid)) : T(1);
            for (int64_t o = 0; o < outer; ++o)
                for (int64_t m = 0; m < mid; ++m)
                    for (int64_t i = 0; i < inner; ++i) da[(o * mid + m) * inner + i] += g[o * inner + i] * scale;
            break;
        }
        case Op::SoftmaxRows: {
            const int64_t cols = n.shape.back();
            const int64_t rows = total / cols;
            T* da = gin(0).data.data();
            const T* y = n.val.data.data();
            for (int64_t r = 0; r < rows; ++r) {
                const T* yr = y + r * cols;
                const T* gr = g + r * cols;
                double dot = 0.0;
                for (int64_t c = 0; c < cols; ++c) dot += static_cast<double>(gr[c]) * static_cast<double>(yr[c]);
                for (int64_t c = 0; c < cols; ++c)
                    da[r * cols + c] += yr[c] * (gr[c] - static_cast<T>(dot));
            }
            break;
        }
        case Op::LayerNormRows: {
            const Node& a = nd(n.in[0]);
            const int64_t cols = n.shape.back();
            const int64_t rows = total / cols;
            T* da = gin(0).data.data();
            const T* x = a.val.data.data();
            const T* y = n.val.data.data();
            for (int64_t r = 0; r < rows; ++r) {
                const T* xr = x + r * cols;
                const T* yr = y + r * cols;
                const T* gr = g + r * cols;
                double mu = 0.0;
                for (int64_t c = 0; c < cols; ++c) mu += static_cast<double>(xr[c]);
                mu /= static_cast<double>(cols);
                double var = 0.0;
                for (int64_t c = 0; c < cols; ++c) {
                    const double d = static_cast<double>(xr[c]) - mu;
                    var += d * d;
                }
                var /= static_cast<double>(cols);
                const double inv = 1.0 / std::sqrt(var + n.s0);
                double gmean = 0.0, gymean = 0.0;
                for (int64_t c = 0; c < cols; ++c) {
                    gmean += static_cast<double>(gr[c]);
                    gymean += static_cast<double>(gr[c]) * static_cast<double>(yr[c]);
                }
                gmean /= static_cast<double>(cols);
                gymean /= static_cast<double>(cols);
                for (int64_t c = 0; c < cols; ++c)
                    da[r * cols + c] += static_cast<T>(inv * (static_cast<double>(gr[c]) - gmean -
                                                              static_cast<double>(yr[c]) * gymean));
            }
            break;
        }
        case Op::L2NormRows: {
            const Node& a = nd(n.in[0]);
            const int64_t cols = a.shape.back();
            const int64_t rows = total;
            T* da = gin(0).data.data();
            const T* x = a.val.data.data();
            const T* y = n.val.data.data();
            for (int64_t r = 0; r < rows; ++r) {
                if (y[r] == T(0)) continue;  // subgradient 0 at the origin
                const T s = g[r] / y[r];
                for (int64_t c = 0; c < cols; ++c) da[r * cols + c] += s * x[r * cols + c];
            }
            break;
        }
        case Op::CosineRows: {
            const Node& a = nd(n.in[0]);
            const Node& b = nd(n.in[1]);
            const int64_t cols = a.shape.back();
            const int64_t rows = total;
            const T* xa = a.val.data.data();
            const T* xb = b.val.data.data();
            T* da = want(0) ? gin(0).data.data() : nullptr;
            T* db = want(1) ? gin(1).data.data() : nullptr;
            for (int64_t r = 0; r < rows; ++r) {
                if (!n.en.empty() && !n.en[static_cast<size_t>(r)]) continue;
                double na = 0.0, nb = 0.0;
                for (int64_t c = 0; c < cols; ++c) {
                    na += static_cast<double>(xa[r * cols + c]) * static_cast<double>(xa[r * cols + c]);
                    nb += static_cast<double>(xb[r * cols + c]) * static_cast<double>(xb[r * cols + c]);
                }
                na = std::sqrt(na);
                nb = std::sqrt(nb);
                const double cosv = static_cast<double>(n.val.data[static_cast<size_t>(r)]);
                const double gr = static_cast<double>(g[r]);
                for (int64_t c = 0; c < cols; ++c) {
                    const double va = static_cast<double>(xa[r * cols + c]);
                    const double vb = static_cast<double>(xb[r * cols + c]);
                    if (da) da[r * cols + c] += static_cast<T>(gr * (vb / (na * nb) - cosv * va / (na * na)));
                    if (db) db[r * cols + c] += static_cast<T>(gr * (va / (na * nb) - cosv * vb / (nb * nb)));
                }
            }
            break;
        }
        case Op::NormalizeRows: {
            const Node& a = nd(n.in[0]);
            const int64_t cols = n.shape.back();
            const int64_t rows = total / cols;
            T* da = gin(0).data.data();
            const T* x = a.val.data.data();
            const T* y = n.val.data.data();
            for (int64_t r = 0; r < rows; ++r) {
                if (!n.en.empty() && !n.en[static_cast<size_t>(r)]) continue;
                double norm = 0.0;
                for (int64_t c = 0; c < cols; ++c)
                    norm += static_cast<double>(x[r * cols + c]) * static_cast<double>(x[r * cols + c]);
                norm = std::sqrt(norm);
                double dot = 0.0;
                for (int64_t c = 0; c < cols; ++c)
                    dot += static_cast<double>(g[r * cols + c]) * static_cast<double>(y[r * cols + c]);
                for (int64_t c = 0; c < cols; ++c)
                    da[r * cols + c] += static_cast<T>((static_cast<double>(g[r * cols + c]) -
                                                        static_cast<double>(y[r * cols + c]) * dot) /
                                                       norm);
            }
            break;
        }
        case Op::Conv2D: {
            const Node& xn = nd(n.in[0]);
            const Node& wn = nd(n.in[1]);
            const int64_t cin = xn.shape[0], h = xn.shape[1], w = xn.shape[2];
            const int64_t cout = wn.shape[0], k = n.a0, p = k / 2;
            const T* x = xn.val.data.data();
            const T* wt = wn.val.data.data();
            T* dx = want(0) ? gin(0).data.data() : nullptr;
            T* dw = want(1) ? gin(1).data.data() : nullptr;
            for (int64_t co = 0; co < cout; ++co)
                for (int64_t i = 0; i < h; ++i)
                    for (int64_t j = 0; j < w; ++j) {
                        const T gv = g[(co * h + i) * w + j];
                        if (gv == T(0)) continue;
                        for (int64_t ci = 0; ci < cin; ++ci)
                            for (int64_t di = 0; di < k; ++di) {
                                const int64_t a = i + di - p;
                                if (a < 0 || a >= h) continue;
                                for (int64_t dj = 0; dj < k; ++dj) {
                                    const int64_t b = j + dj - p;
                                    if (b < 0 || b >= w) continue;
                                    if (dx)
                                        dx[(ci * h + a) * w + b] += gv * wt[((co * cin + ci) * k + di) * k + dj];
                                    if (dw)
                                        dw[((co * cin + ci) * k + di) * k + dj] += gv * x[(ci * h + a) * w + b];
                                }
                            }
                    }
            break;
        }
        case Op::AddChannelBias: {
            const int64_t c = n.shape[0];
            const int64_t sp = total / c;
            if (want(0)) {
                T* dx = gin(0).data.data();
                for (int64_t i = 0; i < total; ++i) dx[i] += g[i];
            }
            if (want(1)) {
                T* db = gin(1).data.data();
                for (int64_t ci = 0; ci < c; ++ci) {
                    double acc = 0.0;
                    for (int64_t i = 0; i < sp; ++i) acc += static_cast<double>(g[ci * sp + i]);
                    db[ci] += static_cast<T>(acc);
                }
            }
            break;
        }
    }
}

template <typename T>
void Graph<T>::backward(Var scalar_output) {
    Node& out = node(scalar_output);
    if (numel(out.shape) != 1)
        fail(out, "backward requires a scalar output, got shape " + shape_str(out.shape));
    for (Node& n : nodes_) {
        if (!n.needs_grad) continue;
        if (n.grad.shape != n.shape || static_cast<int64_t>(n.grad.data.size()) != numel(n.shape))
            n.grad = Array<T>(n.shape);
        else
            std::fill(n.grad.data.begin(), n.grad.data.end(), T(0));
    }
    if (out.grad.shape != out.shape || static_cast<int64_t>(out.grad.data.size()) != numel(out.shape))
        out.grad = Array<T>(out.shape);
    std::fill(out.grad.data.begin(), out.grad.data.end(), T(0));
    out.grad.data[0] = T(1);
    for (int64_t i = scalar_output.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (!n.needs_grad) continue;
        backprop_node(n);
    }
}

template <typename T>
std::map<std::string, Array<T>> Graph<T>::gradients() const {
    std::map<std::string, Array<T>> out;
    for (const Node& n : nodes_) {
        if (n.op == Op::Param || (n.op == Op::Input && n.trainable)) {
            if (n.grad.shape == n.shape && static_cast<int64_t>(n.grad.data.size()) == numel(n.shape))
                out[n.name] = n.grad;
            else
                out[n.name] = Array<T>(n.shape);  // detached or untouched: zeros
        }
    }
    return out;
}

template class Graph<float>;
template class Graph<double>;

// ---- gradcheck ----

double gradcheck(Graph<double>& g, Var scalar_output, const std::vector<std::string>& wrt, double step) {
    g.forward();
    g.backward(scalar_output);
    std::map<std::string, Array<double>> analytic;
    for (const std::string& name : wrt) {
        const auto& gn = g.node(g.by_name(name));
        const bool has = gn.grad.shape == gn.shape &&
                         static_cast<int64_t>(gn.grad.data.size()) == numel(gn.shape);
        analytic[name] = has ? gn.grad : Array<double>(gn.shape);
    }
    double worst = 0.0;
    for (const std::string& name : wrt) {
        Array<double>& x = g.param_value(name);
        const Array<double>& an = analytic[name];
        for (int64_t i = 0; i < x.size(); ++i) {
            const double saved = x[i];
            x[i] = saved + step;
            g.forward();
            const double f1 = g.value(scalar_output).data[0];
            x[i] = saved - step;
            g.forward();
            const double f2 = g.value(scalar_output).data[0];
            x[i] = saved;
            const double numeric = (f1 - f2) / (2.0 * step);
            const double a = an[i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            worst = std::max(worst, rel);
        }
    }
    g.forward();  // restore the unperturbed state
    return worst;
}

}  // namespace lcmae
