#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "pcn/tensor.hpp"

namespace pcn {

struct Var {
    std::int32_t id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape over Tensor values. A tape is built per forward pass;
// backward() runs the recorded closures in reverse order. All math is in
// double precision and strictly sequential, so results are reproducible
// bit-for-bit for a fixed input stream.
class Tape {
  public:
    Var leaf(Tensor value, bool requires_grad);
    Var constant(Tensor value) { return leaf(std::move(value), false); }
    Var constant_scalar(double v) { return constant(Tensor({1}, {v})); }

    const Tensor& val(Var v) const { return nodes_[v.id].value; }
    // Gradient of the last backward() root w.r.t. v (zeros if unreached).
    Tensor grad(Var v) const;
    bool requires_grad(Var v) const { return nodes_[v.id].needs; }

    void backward(Var root);

    std::size_t size() const { return nodes_.size(); }

    // --- elementwise / broadcast ---
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var add_row(Var m, Var row);        // m: (r,c), row: c values broadcast over rows
    Var mul_const(Var a, Tensor c);     // elementwise by a constant tensor
    Var min_const(Var a, Tensor c);     // ties route gradient to a
    Var max_const(Var a, Tensor c);     // ties route gradient to a
    Var sub_bscalar(Var a, Var s);      // a - broadcast(s), s shape {1}
    Var div_bscalar(Var a, Var s);
    Var mul_bscalar(Var a, Var s);
    Var l2norm_rows(Var a, double eps = 1e-12);  // rows scaled to unit length
    Var relu(Var a);
    Var tanh_(Var a);
    Var softplus(Var a);
    Var clamp(Var a, double lo, double hi);  // pass-through gradient strictly inside (lo,hi)
    Var stopgrad(Var a);

    // --- matrix ---
    Var matmul(Var a, Var b);     // (r,k)x(k,c)
    Var matmul_nt(Var a, Var b);  // (r,k)x(c,k)^T -> (r,c)
    Var softmax_rows(Var a);
    Var concat_rows(const std::vector<Var>& rows);
    Var reshape(Var a, std::vector<std::int64_t> shape);

    // --- reductions ---
    Var sum_all(Var a);
    Var mean_all(Var a);
    Var max_all(Var a);  // subgradient to the first (row-major) argmax
    Var min_all(Var a);
    Var stack_scalars(const std::vector<Var>& xs);

    // --- structured ---
    Var chw_to_rows(Var a);  // (C,H,W) -> (H*W, C)
    Var upsample_bilinear(Var a, std::int64_t out_h, std::int64_t out_w);
    Var conv2d(Var x, Var w, Var b, int stride, int pad);  // x:(Cin,H,W) w:(Cout,Cin,kh,kw) b:(Cout)
    Var rows_mean(Var table, std::vector<std::int64_t> ids);  // mean of selected rows -> (1,C)

  private:
    struct Node {
        Tensor value;
        Tensor grad_store;
        bool needs = false;
        bool grad_alloc = false;
        std::function<void(Tape&)> back;
    };

    std::vector<Node> nodes_;

    Var push(Tensor value, bool needs);
    Tensor& grad_buf(std::int32_t id);
    void add_to_grad(std::int32_t id, const double* g, std::int64_t n);

    friend struct TapeOpsAccess;
};

// First row-major argmax / argmin over all entries.
std::int64_t argmax_flat(const Tensor& t);
std::int64_t argmin_flat(const Tensor& t);

// Weights of the half-pixel-center bilinear interpolation used by
// upsample_bilinear, exposed so value-path code uses the identical map.
struct BilinearTap {
    std::int64_t idx;
    double w;
};
void bilinear_taps(std::int64_t in_h, std::int64_t in_w, std::int64_t out_h, std::int64_t out_w,
                   std::vector<std::vector<BilinearTap>>& taps);
Tensor upsample_bilinear_value(const Tensor& a, std::int64_t out_h, std::int64_t out_w);

}  // namespace pcn
