#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pcn/autodiff.hpp"
#include "support/test_util.hpp"

using namespace pcn;
using pcn_test::FdCheck;
using pcn_test::random_tensor;

namespace {

// FD-checks the gradient of sum(weights * op(x)) w.r.t. every entry of x.
void check_unary(const std::function<Var(Tape&, Var)>& op, Tensor x, const std::string& label) {
    Rng rng(99);
    Tensor weights = random_tensor({1}, rng);  // placeholder, resized below
    Tape probe;
    {
        Var xin = probe.leaf(x, false);
        Var y = op(probe, xin);
        weights = random_tensor(probe.val(y).shape, rng);
    }

    auto forward = [&]() {
        Tape tp;
        Var xin = tp.leaf(x, false);
        Var y = op(tp, xin);
        Var w = tp.constant(weights);
        return tp.val(tp.sum_all(tp.mul(y, w)))[0];
    };

    Tape tp;
    Var xin = tp.leaf(x, true);
    Var y = op(tp, xin);
    Var root = tp.sum_all(tp.mul(y, tp.constant(weights)));
    tp.backward(root);
    const Tensor analytic = tp.grad(xin);

    FdCheck fd;
    const bool ok = fd.check_tensor(x, analytic, forward, label);
    INFO(fd.failure);
    CHECK(ok);
    CHECK(fd.checked == x.numel());
}

}  // namespace

TEST_CASE("add/sub/mul propagate correct gradients") {
    Rng rng(1);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    Tensor w = random_tensor({3, 4}, rng);

    auto forward = [&]() {
        Tape tp;
        Var va = tp.leaf(a, false), vb = tp.leaf(b, false);
        Var y = tp.add(tp.mul(va, vb), tp.sub(va, vb));
        return tp.val(tp.sum_all(tp.mul(y, tp.constant(w))))[0];
    };

    Tape tp;
    Var va = tp.leaf(a, true), vb = tp.leaf(b, true);
    Var y = tp.add(tp.mul(va, vb), tp.sub(va, vb));
    tp.backward(tp.sum_all(tp.mul(y, tp.constant(w))));
    Tensor ga = tp.grad(va), gb = tp.grad(vb);

    FdCheck fd;
    CHECK(fd.check_tensor(a, ga, forward, "a"));
    CHECK(fd.check_tensor(b, gb, forward, "b"));
}

TEST_CASE("matmul and matmul_nt gradients") {
    Rng rng(2);
    Tensor a = random_tensor({2, 3}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    Tensor bt = random_tensor({4, 3}, rng);
    Tensor w = random_tensor({2, 4}, rng);

    SUBCASE("nn") {
        auto forward = [&]() {
            Tape tp;
            Var y = tp.matmul(tp.leaf(a, false), tp.leaf(b, false));
            return tp.val(tp.sum_all(tp.mul(y, tp.constant(w))))[0];
        };
        Tape tp;
        Var va = tp.leaf(a, true), vb = tp.leaf(b, true);
        tp.backward(tp.sum_all(tp.mul(tp.matmul(va, vb), tp.constant(w))));
        FdCheck fd;
        CHECK(fd.check_tensor(a, tp.grad(va), forward, "a"));
        CHECK(fd.check_tensor(b, tp.grad(vb), forward, "b"));
    }
    SUBCASE("nt") {
        auto forward = [&]() {
            Tape tp;
            Var y = tp.matmul_nt(tp.leaf(a, false), tp.leaf(bt, false));
            return tp.val(tp.sum_all(tp.mul(y, tp.constant(w))))[0];
        };
        Tape tp;
        Var va = tp.leaf(a, true), vb = tp.leaf(bt, true);
        tp.backward(tp.sum_all(tp.mul(tp.matmul_nt(va, vb), tp.constant(w))));
        FdCheck fd;
        CHECK(fd.check_tensor(a, tp.grad(va), forward, "a"));
        CHECK(fd.check_tensor(bt, tp.grad(vb), forward, "bt"));
    }
}

TEST_CASE("softmax rows sum to one and gradients match") {
    Rng rng(3);
    Tensor x = random_tensor({3, 5}, rng, -2.0, 2.0);
    Tape tp;
    Var y = tp.softmax_rows(tp.leaf(x, false));
    const Tensor& out = tp.val(y);
    for (std::int64_t r = 0; r < 3; ++r) {
        double s = 0.0;
        for (std::int64_t c = 0; c < 5; ++c) {
            s += out.at(r, c);
            CHECK(out.at(r, c) >= 0.0);
            CHECK(out.at(r, c) <= 1.0);
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
    check_unary([](Tape& t, Var v) { return t.softmax_rows(v); }, x, "softmax");
}

TEST_CASE("elementwise nonlinearity gradients") {
    Rng rng(4);
    // keep values away from relu/clamp kinks
    Tensor x = random_tensor({4, 3}, rng, -2.0, 2.0);
    for (auto& v : x.data)
        if (std::abs(v) < 0.05) v += 0.1;
    check_unary([](Tape& t, Var v) { return t.relu(v); }, x, "relu");
    check_unary([](Tape& t, Var v) { return t.tanh_(v); }, x, "tanh");
    check_unary([](Tape& t, Var v) { return t.softplus(v); }, x, "softplus");
    Tensor xc = x;
    for (auto& v : xc.data) v = 0.5 + 0.4 * std::tanh(v);  // strictly inside (0,1)
    check_unary([](Tape& t, Var v) { return t.clamp(v, 0.0, 1.0); }, xc, "clamp");
}

TEST_CASE("reductions and broadcast ops") {
    Rng rng(5);
    Tensor x = random_tensor({3, 3}, rng);
    check_unary([](Tape& t, Var v) { return t.sum_all(v); }, x, "sum");
    check_unary([](Tape& t, Var v) { return t.max_all(v); }, x, "max");
    check_unary([](Tape& t, Var v) { return t.min_all(v); }, x, "min");
    check_unary([](Tape& t, Var v) { return t.sub_bscalar(v, t.min_all(v)); }, x, "sub_bscalar");
    Tensor pos = random_tensor({3, 3}, rng, 0.5, 2.0);
    check_unary([](Tape& t, Var v) { return t.div_bscalar(v, t.max_all(v)); }, pos, "div_bscalar");

    Tensor row = random_tensor({3}, rng);
    auto forward = [&]() {
        Tape tp;
        Var y = tp.add_row(tp.leaf(x, false), tp.leaf(row, false));
        return tp.val(tp.sum_all(tp.mul(y, tp.constant(x))))[0];
    };
    Tape tp;
    Var vx = tp.leaf(x, true), vr = tp.leaf(row, true);
    tp.backward(tp.sum_all(tp.mul(tp.add_row(vx, vr), tp.constant(x))));
    FdCheck fd;
    CHECK(fd.check_tensor(row, tp.grad(vr), forward, "row"));
}

TEST_CASE("min/max against constant masks") {
    Rng rng(6);
    Tensor x = random_tensor({4, 4}, rng, 0.05, 0.95);
    Tensor mask({4, 4});
    for (std::int64_t i = 0; i < 16; ++i) mask[i] = (rng.next_below(2) == 0) ? 0.0 : 1.0;
    check_unary([&](Tape& t, Var v) { return t.min_const(v, mask); }, x, "min_const");
    check_unary([&](Tape& t, Var v) { return t.max_const(v, mask); }, x, "max_const");
}

TEST_CASE("bilinear upsample matches closed-form weights and has exact transpose backward") {
    Tensor x({2, 2}, {1.0, 2.0, 3.0, 4.0});
    Tape tp;
    Var up = tp.upsample_bilinear(tp.leaf(x, false), 4, 4);
    const Tensor& out = tp.val(up);
    // half-pixel centers: output (0,0) maps to source (-0.25,-0.25) -> clamped corner
    CHECK(out.at(0, 0) == doctest::Approx(1.0));
    CHECK(out.at(3, 3) == doctest::Approx(4.0));
    // output (1,1) maps to source (0.25, 0.25): weights 0.75/0.25 each axis
    const double expect = 1.0 * 0.75 * 0.75 + 2.0 * 0.75 * 0.25 + 3.0 * 0.25 * 0.75 + 4.0 * 0.25 * 0.25;
    CHECK(out.at(1, 1) == doctest::Approx(expect));

    Rng rng(7);
    Tensor xr = random_tensor({3, 5}, rng);
    check_unary([](Tape& t, Var v) { return t.upsample_bilinear(v, 7, 9); }, xr, "upsample");
}

TEST_CASE("identity-size upsample is exact") {
    Rng rng(17);
    Tensor x = random_tensor({5, 4}, rng);
    Tape tp;
    Var up = tp.upsample_bilinear(tp.leaf(x, false), 5, 4);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(tp.val(up)[i] == doctest::Approx(x[i]).epsilon(1e-15));
}

TEST_CASE("conv2d gradients for weights, bias, and input") {
    Rng rng(8);
    Tensor x = random_tensor({2, 6, 6}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
    Tensor b = random_tensor({3}, rng, -0.1, 0.1);
    Tensor mix = random_tensor({3, 3, 3}, rng);  // output is (3,3,3) for stride 2, pad 1

    auto forward = [&]() {
        Tape tp;
        Var y = tp.conv2d(tp.leaf(x, false), tp.leaf(w, false), tp.leaf(b, false), 2, 1);
        return tp.val(tp.sum_all(tp.mul(y, tp.constant(mix))))[0];
    };

    Tape tp;
    Var vx = tp.leaf(x, true), vw = tp.leaf(w, true), vb = tp.leaf(b, true);
    Var y = tp.conv2d(vx, vw, vb, 2, 1);
    CHECK(tp.val(y).shape == std::vector<std::int64_t>{3, 3, 3});
    tp.backward(tp.sum_all(tp.mul(y, tp.constant(mix))));

    FdCheck fd;
    CHECK(fd.check_tensor(w, tp.grad(vw), forward, "w"));
    CHECK(fd.check_tensor(b, tp.grad(vb), forward, "b"));
    CHECK(fd.check_tensor(x, tp.grad(vx), forward, "x"));
}

TEST_CASE("rows_mean, chw_to_rows, concat_rows, stack_scalars") {
    Rng rng(9);
    Tensor table = random_tensor({5, 3}, rng);
    auto fwd = [&]() {
        Tape tp;
        Var y = tp.rows_mean(tp.leaf(table, false), {1, 3, 3});
        return tp.val(tp.sum_all(y))[0];
    };
    Tape tp;
    Var vt = tp.leaf(table, true);
    tp.backward(tp.sum_all(tp.rows_mean(vt, {1, 3, 3})));
    FdCheck fd;
    CHECK(fd.check_tensor(table, tp.grad(vt), fwd, "table"));

    Tensor chw = random_tensor({2, 2, 3}, rng);
    check_unary([](Tape& t, Var v) { return t.chw_to_rows(v); }, chw, "chw_to_rows");

    Tape tp2;
    Rng rng2(10);
    Tensor r1 = random_tensor({1, 4}, rng2), r2 = random_tensor({1, 4}, rng2);
    Var m = tp2.concat_rows({tp2.leaf(r1, true), tp2.leaf(r2, true)});
    CHECK(tp2.val(m).rows() == 2);

    Var s1 = tp2.constant_scalar(0.25), s2 = tp2.constant_scalar(-1.5);
    Var stacked = tp2.stack_scalars({s1, s2});
    CHECK(tp2.val(stacked)[0] == 0.25);
    CHECK(tp2.val(stacked)[1] == -1.5);
}

TEST_CASE("stopgrad blocks gradient flow but keeps values") {
    Tensor x({2}, {1.5, -0.5});
    Tape tp;
    Var vx = tp.leaf(x, true);
    Var straight = tp.add(tp.sub(vx, tp.stopgrad(vx)), tp.constant(Tensor({2}, {1.0, 0.0})));
    CHECK(tp.val(straight)[0] == 1.0);  // value-zero carrier plus onehot
    CHECK(tp.val(straight)[1] == 0.0);
    tp.backward(tp.sum_all(tp.mul(straight, tp.constant(Tensor({2}, {3.0, 7.0})))));
    const Tensor g = tp.grad(vx);
    CHECK(g[0] == doctest::Approx(3.0));
    CHECK(g[1] == doctest::Approx(7.0));
}

TEST_CASE("backward requires scalar root") {
    Tape tp;
    Var v = tp.leaf(Tensor({2}, {1.0, 2.0}), true);
    CHECK_THROWS_AS(tp.backward(v), InvalidInputError);
}
