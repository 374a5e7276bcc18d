#pragma once

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lcmae/array.hpp"
#include "lcmae/common.hpp"

namespace lcmae {

// Primitive ops of the reverse-mode engine. Shapes are validated when a node
// is appended; evaluation reuses per-node buffers, so a retained graph can be
// re-evaluated with rebound inputs without allocating.
enum class Op : uint8_t {
    Input,
    Param,
    Const,
    Add,
    Sub,
    Mul,            // elementwise with numpy-style broadcasting
    AddScalar,
    MulScalar,
    PowScalar,
    Exp,
    Sqrt,
    Abs,
    Gelu,
    Matmul,         // [M,K]x[K,N]
    MatmulNT,       // A * B^T
    MatmulTN,       // A^T * B
    Transpose,      // rank-2
    Reshape,
    ConcatRows,     // axis 0, any number of inputs
    ConcatCols,     // axis 1, rank-2
    SliceRows,      // static [begin, begin+len)
    SliceCols,
    GatherRows,     // rebindable row indices
    ScatterRows,    // rows placed at rebindable indices into zero-filled [out_len, D]
    TileRows,       // [D] -> [k, D]
    SumAll,
    MeanAll,
    SumAxis,
    MeanAxis,
    SoftmaxRows,    // last axis, max-subtracted
    LayerNormRows,  // last axis, pre-affine, epsilon inside sqrt
    L2NormRows,     // norm over last axis
    CosineRows,     // rowwise cosine of two [L,D]; optional enable mask
    NormalizeRows,  // rowwise x/|x|; optional enable mask
    Conv2D,         // [Cin,H,W] * [Cout,Cin,k,k], stride 1, zero pad k/2
    AddChannelBias, // [C,H,W] + [C]
    Detach,
};

const char* op_name(Op op);

struct Var {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
};

template <typename T>
class Graph {
public:
    struct Node {
        Op op = Op::Const;
        std::string name;             // set for params, inputs, and on request
        std::vector<int32_t> in;
        Shape shape;
        int64_t a0 = 0, a1 = 0;       // op-specific: axis / begin / len / out_len / kernel
        double s0 = 0.0;              // op-specific scalar
        std::vector<int64_t> idx;     // gather/scatter indices (rebindable)
        std::vector<uint8_t> en;      // enable mask for CosineRows/NormalizeRows (empty = all on)
        Array<T> val;
        Array<T> grad;
        bool needs_grad = false;
        bool trainable = false;
        bool bound = false;           // inputs: value supplied
    };

    // ---- construction ----
    Var input(const std::string& name, Shape shape, bool differentiable = false);
    Var param(const std::string& name, Array<T> init);
    Var constant(Array<T> value, const std::string& name = "");

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var add_scalar(Var a, double c);
    Var mul_scalar(Var a, double c);
    Var pow_scalar(Var a, double c);
    Var exp(Var a);
    Var sqrt(Var a);
    Var abs(Var a);
    Var gelu(Var a);
    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);
    Var matmul_tn(Var a, Var b);
    Var transpose(Var a);
    Var reshape(Var a, Shape shape);
    Var concat_rows(const std::vector<Var>& vs);
    Var concat_cols(const std::vector<Var>& vs);
    Var slice_rows(Var a, int64_t begin, int64_t len);
    Var slice_cols(Var a, int64_t begin, int64_t len);
    Var gather_rows(Var a, std::vector<int64_t> idx, const std::string& name = "");
    Var scatter_rows(Var a, std::vector<int64_t> idx, int64_t out_len, const std::string& name = "");
    Var tile_rows(Var a, int64_t k);
    Var sum_all(Var a);
    Var mean_all(Var a);
    Var sum_axis(Var a, int axis);
    Var mean_axis(Var a, int axis);
    Var softmax_rows(Var a);
    Var layernorm_rows(Var a, double eps = 1e-6);
    Var l2norm_rows(Var a);
    Var cosine_rows(Var a, Var b, std::vector<uint8_t> enable = {}, const std::string& name = "");
    Var normalize_rows(Var a, std::vector<uint8_t> enable = {}, const std::string& name = "");
    Var conv2d(Var x, Var w);
    Var add_channel_bias(Var x, Var b);
    Var detach(Var a);

    // ---- binding ----
    void bind(const std::string& input_name, Array<T> value);
    void bind(Var v, Array<T> value);
    void bind_indices(const std::string& node_name, std::vector<int64_t> idx);
    void bind_indices(Var v, std::vector<int64_t> idx);
    void bind_enable(const std::string& node_name, std::vector<uint8_t> enable);
    void bind_enable(Var v, std::vector<uint8_t> enable);

    // ---- execution ----
    // Runs the whole tape in construction order. All inputs must be bound.
    void forward();
    // Convenience form matching the module contract: bind, run, read back.
    std::map<std::string, Array<T>> evaluate(const std::map<std::string, Array<T>>& inputs,
                                             const std::vector<std::string>& outputs);
    // Reverse pass from a scalar node; fills grad buffers of every node that
    // needs a gradient. Requires a prior forward().
    void backward(Var scalar_output);
    std::map<std::string, Array<T>> gradients() const;  // named params + differentiable inputs

    const Array<T>& value(Var v) const { return node(v).val; }
    const Array<T>& grad(Var v) const { return node(v).grad; }
    Array<T>& param_value(const std::string& name);
    const Array<T>& grad_of(const std::string& name) const;
    Var by_name(const std::string& name) const;
    void rename(Var v, const std::string& name);

    // Iteration over trainable parameters, in registration order.
    std::vector<std::string> param_names() const;

    size_t num_nodes() const { return nodes_.size(); }
    const Node& node(Var v) const { return nodes_[static_cast<size_t>(v.id)]; }
    Node& node(Var v) { return nodes_[static_cast<size_t>(v.id)]; }

    // Finite checks after every primitive (on by default; the trainer keeps
    // them on and relies on the error to detect divergence).
    void set_check_finite(bool on) { check_finite_ = on; }

private:
    Var push(Node n);
    const Node& nd(int32_t i) const { return nodes_[static_cast<size_t>(i)]; }
    Node& nd(int32_t i) { return nodes_[static_cast<size_t>(i)]; }
    [[noreturn]] void fail(const Node& n, const std::string& msg) const;
    void eval_node(Node& n);
    void backprop_node(Node& n);
    std::string label(const Node& n) const;

    std::vector<Node> nodes_;
    std::unordered_map<std::string, int32_t> named_;
    std::vector<int32_t> params_;
    bool check_finite_ = true;
};

using GraphF = Graph<float>;
using GraphD = Graph<double>;

// Max relative error between analytic gradients and central finite
// differences, taken over every coordinate of the named tensors. 64-bit only.
double gradcheck(Graph<double>& g, Var scalar_output, const std::vector<std::string>& wrt,
                 double step = 1e-6);

}  // namespace lcmae
