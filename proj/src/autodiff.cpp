#include "pcn/autodiff.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>

namespace pcn {

Var Tape::push(Tensor value, bool needs) {
    Node n;
    n.value = std::move(value);
    n.needs = needs;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor value, bool requires_grad) { return push(std::move(value), requires_grad); }

Tensor& Tape::grad_buf(std::int32_t id) {
    Node& n = nodes_[id];
    if (!n.grad_alloc) {
        n.grad_store = Tensor(n.value.shape);
        n.grad_alloc = true;
    }
    return n.grad_store;
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad_alloc) return n.grad_store;
    return Tensor(n.value.shape);
}

void Tape::add_to_grad(std::int32_t id, const double* g, std::int64_t n) {
    if (!nodes_[id].needs) return;
    Tensor& gb = grad_buf(id);
    for (std::int64_t i = 0; i < n; ++i) gb.data[static_cast<std::size_t>(i)] += g[i];
}

void Tape::backward(Var root) {
    if (!root.valid() || nodes_[root.id].value.numel() != 1)
        throw InvalidInputError("backward: root must be a scalar");
    grad_buf(root.id).data[0] = 1.0;
    for (std::int32_t i = root.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.grad_alloc && n.back) n.back(*this);
    }
}

Var Tape::add(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb)) throw InvalidInputError("add: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    Tensor out = ta;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] += tb[i];
    bool req = requires_grad(a) || requires_grad(b);
    Var o = push(std::move(out), req);
    if (req) {
        auto ia = a.id, ib = b.id, io = o.id;
        nodes_[o.id].back = [ia, ib, io](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            tp.add_to_grad(ia, g.data.data(), g.numel());
            tp.add_to_grad(ib, g.data.data(), g.numel());
        };
    }
    return o;
}

Var Tape::sub(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb)) throw InvalidInputError("sub: shape mismatch");
    Tensor out = ta;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] -= tb[i];
    bool req = requires_grad(a) || requires_grad(b);
    Var o = push(std::move(out), req);
    if (req) {
        auto ia = a.id, ib = b.id, io = o.id;
        nodes_[o.id].back = [ia, ib, io](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            tp.add_to_grad(ia, g.data.data(), g.numel());
            if (tp.nodes_[ib].needs) {
                Tensor neg = g;
                for (auto& v : neg.data) v = -v;
                tp.add_to_grad(ib, neg.data.data(), neg.numel());
            }
        };
    }
    return o;
}

Var Tape::mul(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb)) throw InvalidInputError("mul: shape mismatch");
    Tensor out = ta;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= tb[i];
    bool req = requires_grad(a) || requires_grad(b);
    Var o = push(std::move(out), req);
    if (req) {
        auto ia = a.id, ib = b.id, io = o.id;
        nodes_[o.id].back = [ia, ib, io](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            const Tensor& va = tp.nodes_[ia].value;
            const Tensor& vb = tp.nodes_[ib].value;
            if (tp.nodes_[ia].needs) {
                Tensor ga(va.shape);
                for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] = g[i] * vb[i];
                tp.add_to_grad(ia, ga.data.data(), ga.numel());
            }
            if (tp.nodes_[ib].needs) {
                Tensor gb(vb.shape);
                for (std::int64_t i = 0; i < gb.numel(); ++i) gb[i] = g[i] * va[i];
                tp.add_to_grad(ib, gb.data.data(), gb.numel());
            }
        };
    }
    return o;
}

Var Tape::scale(Var a, double c) {
    Tensor out = val(a);
    for (auto& v : out.data) v *= c;
    bool req = requires_grad(a);
    Var o = push(std::move(out), req);
    if (req) {
        auto ia = a.id, io = o.id;
        nodes_[o.id].back = [ia, io, c](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            Tensor ga(g.shape);
            for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] = g[i] * c;
            tp.add_to_grad(ia, ga.data.data(), ga.numel());
        };
    }
    return o;
}

Var Tape::add_row(Var m, Var row) {
    const Tensor& tm = val(m);
    const Tensor& tr = val(row);
    if (tm.rank() != 2 || tr.numel() != tm.cols()) throw InvalidInputError("add_row: shape mismatch");
    Tensor out = tm;
    const std::int64_t r = tm.rows(), c = tm.cols();
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) out.data[static_cast<std::size_t>(i * c + j)] += tr[j];
    bool req = requires_grad(m) || requires_grad(row);
    Var o = push(std::move(out), req);
    if (req) {
        auto im = m.id, ir = row.id, io = o.id;
        nodes_[o.id].back = [im, ir, io, r, c](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            tp.add_to_grad(im, g.data.data(), g.numel());
            if (tp.nodes_[ir].needs) {
                Tensor gr(tp.nodes_[ir].value.shape);
                for (std::int64_t i = 0; i < r; ++i)
                    for (std::int64_t j = 0; j < c; ++j) gr[j] += g[i * c + j];
                tp.add_to_grad(ir, gr.data.data(), gr.numel());
            }
        };
    }
    return o;
}

Var Tape::mul_const(Var a, Tensor c) {
    const Tensor& ta = val(a);
    if (!ta.same_shape(c)) throw InvalidInputError("mul_const: shape mismatch");
    Tensor out = ta;
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] *= c[i];
    bool req = requires_grad(a);
    Var o = push(std::move(out), req);
    if (req) {
        auto ia = a.id, io = o.id;
        nodes_[o.id].back = [ia, io, cc = std::move(c)](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            Tensor ga(g.shape);
            for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] = g[i] * cc[i];
            tp.add_to_grad(ia, ga.data.data(), ga.numel());
        };
    }
    return o;
}

Var Tape::min_const(Var a, Tensor c) {
    const Tensor& ta = val(a);
    if (!ta.same_shape(c)) throw InvalidInputError("min_const: shape mismatch");
    Tensor out(ta.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::min(ta[i], c[i]);
    bool req = requires_grad(a);
    Var o = push(std::move(out), req);
    if (req) {
        auto ia = a.id, io = o.id;
        nodes_[o.id].back = [ia, io, cc = std::move(c)](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            const Tensor& va = tp.nodes_[ia].value;
            Tensor ga(g.shape);
            for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] = (va[i] <= cc[i]) ? g[i] : 0.0;
            tp.add_to_grad(ia, ga.data.data(), ga.numel());
        };
    }
    return o;
}

Var Tape::max_const(Var a, Tensor c) {
    const Tensor& ta = val(a);
    if (!ta.same_shape(c)) throw InvalidInputError("max_const: shape mismatch");
    Tensor out(ta.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(ta[i], c[i]);
    bool req = requires_grad(a);
    Var o = push(std::move(out), req);
    if (req) {
        auto ia = a.id, io = o.id;
        nodes_[o.id].back = [ia, io, cc = std::move(c)](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            const Tensor& va = tp.nodes_[ia].value;
            Tensor ga(g.shape);
            for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] = (va[i] >= cc[i]) ? g[i] : 0.0;
            tp.add_to_grad(ia, ga.data.data(), ga.numel());
        };
    }
    return o;
}

Var Tape::sub_bscalar(Var a, Var s) {
    if (val(s).numel() != 1) throw InvalidInputError("sub_bscalar: s must be scalar");
    const Tensor& ta = val(a);
    const double sv = val(s)[0];
    Tensor out = ta;
    for (auto& v : out.data) v -= sv;
    bool req = requires_grad(a) || requires_grad(s);
    Var o = push(std::move(out), req);
    if (req) {
        auto ia = a.id, is = s.id, io = o.id;
        nodes_[o.id].back = [ia, is, io](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            tp.add_to_grad(ia, g.data.data(), g.numel());
            if (tp.nodes_[is].needs) {
                double acc = 0.0;
                for (double v : g.data) acc += v;
                acc = -acc;
                tp.add_to_grad(is, &acc, 1);
            }
        };
    }
    return o;
}

Var Tape::div_bscalar(Var a, Var s) {
    if (val(s).numel() != 1) throw InvalidInputError("div_bscalar: s must be scalar");
    const Tensor& ta = val(a);
    const double sv = val(s)[0];
    Tensor out = ta;
    for (auto& v : out.data) v /= sv;
    bool req = requires_grad(a) || requires_grad(s);
    Var o = push(std::move(out), req);
    if (req) {
        auto ia = a.id, is = s.id, io = o.id;
        nodes_[o.id].back = [ia, is, io, sv](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            if (tp.nodes_[ia].needs) {
                Tensor ga(g.shape);
                for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] = g[i] / sv;
                tp.add_to_grad(ia, ga.data.data(), ga.numel());
            }
            if (tp.nodes_[is].needs) {
                const Tensor& va = tp.nodes_[ia].value;
                double acc = 0.0;
                for (std::int64_t i = 0; i < g.numel(); ++i) acc += g[i] * (-va[i] / (sv * sv));
                tp.add_to_grad(is, &acc, 1);
            }
        };
    }
    return o;
}

Var Tape::mul_bscalar(Var a, Var s) {
    if (val(s).numel() != 1) throw InvalidInputError("mul_bscalar: s must be scalar");
    const Tensor& ta = val(a);
    const double sv = val(s)[0];
    Tensor out = ta;
    for (auto& v : out.data) v *= sv;
    bool req = requires_grad(a) || requires_grad(s);
    Var o = push(std::move(out), req);
    if (req) {
        auto ia = a.id, is = s.id, io = o.id;
        nodes_[o.id].back = [ia, is, io, sv](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            if (tp.nodes_[ia].needs) {
                Tensor ga(g.shape);
                for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] = g[i] * sv;
                tp.add_to_grad(ia, ga.data.data(), ga.numel());
            }
            if (tp.nodes_[is].needs) {
                const Tensor& va = tp.nodes_[ia].value;
                double acc = 0.0;
                for (std::int64_t i = 0; i < g.numel(); ++i) acc += g[i] * va[i];
                tp.add_to_grad(is, &acc, 1);
            }
        };
    }
    return o;
}

Var Tape::l2norm_rows(Var a, double eps) {
    const Tensor& ta = val(a);
    if (ta.rank() != 2) throw InvalidInputError("l2norm_rows: rank-2 input required");
    const std::int64_t r = ta.rows(), c = ta.cols();
    Tensor out({r, c});
    std::vector<double> norms(static_cast<std::size_t>(r));
    for (std::int64_t i = 0; i < r; ++i) {
        double sq = 0.0;
        for (std::int64_t j = 0; j < c; ++j) sq += ta.at(i, j) * ta.at(i, j);
        const double n = std::sqrt(sq + eps);
        norms[static_cast<std::size_t>(i)] = n;
        for (std::int64_t j = 0; j < c; ++j) out.at(i, j) = ta.at(i, j) / n;
    }
    bool req = requires_grad(a);
    Var o = push(std::move(out), req);
    if (req) {
        auto ia = a.id, io = o.id;
        nodes_[o.id].back = [ia, io, r, c, norms = std::move(norms)](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            const Tensor& y = tp.nodes_[io].value;
            Tensor ga({r, c});
            for (std::int64_t i = 0; i < r; ++i) {
                double dot = 0.0;
                for (std::int64_t j = 0; j < c; ++j) dot += g.at(i, j) * y.at(i, j);
                const double n = norms[static_cast<std::size_t>(i)];
                for (std::int64_t j = 0; j < c; ++j) ga.at(i, j) = (g.at(i, j) - dot * y.at(i, j)) / n;
            }
            tp.add_to_grad(ia, ga.data.data(), ga.numel());
        };
    }
    return o;
}

Var Tape::relu(Var a) {
    const Tensor& ta = val(a);
    Tensor out(ta.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = ta[i] > 0.0 ? ta[i] : 0.0;
    bool req = requires_grad(a);
    Var o = push(std::move(out), req);
    if (req) {
        auto ia = a.id, io = o.id;
        nodes_[o.id].back = [ia, io](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            const Tensor& va = tp.nodes_[ia].value;
            Tensor ga(g.shape);
            for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] = va[i] > 0.0 ? g[i] : 0.0;
            tp.add_to_grad(ia, ga.data.data(), ga.numel());
        };
    }
    return o;
}

Var Tape::tanh_(Var a) {
    const Tensor& ta = val(a);
    Tensor out(ta.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(ta[i]);
    bool req = requires_grad(a);
    Var o = push(std::move(out), req);
    if (req) {
        auto ia = a.id, io = o.id;
        nodes_[o.id].back = [ia, io](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            const Tensor& vo = tp.nodes_[io].value;
            Tensor ga(g.shape);
            for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] = g[i] * (1.0 - vo[i] * vo[i]);
            tp.add_to_grad(ia, ga.data.data(), ga.numel());
        };
    }
    return o;
}

Var Tape::softplus(Var a) {
    const Tensor& ta = val(a);
    Tensor out(ta.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        const double x = ta[i];
        out[i] = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    }
    bool req = requires_grad(a);
    Var o = push(std::move(out), req);
    if (req) {
        auto ia = a.id, io = o.id;
        nodes_[o.id].back = [ia, io](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            const Tensor& va = tp.nodes_[ia].value;
            Tensor ga(g.shape);
            for (std::int64_t i = 0; i < ga.numel(); ++i) {
                const double x = va[i];
                const double sig = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
                ga[i] = g[i] * sig;
            }
            tp.add_to_grad(ia, ga.data.data(), ga.numel());
        };
    }
    return o;
}

Var Tape::clamp(Var a, double lo, double hi) {
    const Tensor& ta = val(a);
    Tensor out(ta.shape);
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = std::clamp(ta[i], lo, hi);
    bool req = requires_grad(a);
    Var o = push(std::move(out), req);
    if (req) {
        auto ia = a.id, io = o.id;
        nodes_[o.id].back = [ia, io, lo, hi](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            const Tensor& va = tp.nodes_[ia].value;
            Tensor ga(g.shape);
            for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] = (va[i] > lo && va[i] < hi) ? g[i] : 0.0;
            tp.add_to_grad(ia, ga.data.data(), ga.numel());
        };
    }
    return o;
}

Var Tape::stopgrad(Var a) { return push(val(a), false); }

Var Tape::matmul(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows())
        throw InvalidInputError("matmul: shape mismatch " + ta.shape_str() + " x " + tb.shape_str());
    const std::int64_t r = ta.rows(), k = ta.cols(), c = tb.cols();
    Tensor out({r, c});
    mm_nn(ta.data.data(), tb.data.data(), out.data.data(), r, k, c, false);
    bool req = requires_grad(a) || requires_grad(b);
    Var o = push(std::move(out), req);
    if (req) {
        auto ia = a.id, ib = b.id, io = o.id;
        nodes_[o.id].back = [ia, ib, io, r, k, c](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            const Tensor& va = tp.nodes_[ia].value;
            const Tensor& vb = tp.nodes_[ib].value;
            if (tp.nodes_[ia].needs)
                mm_nt(g.data.data(), vb.data.data(), tp.grad_buf(ia).data.data(), r, c, k, true);
            if (tp.nodes_[ib].needs)
                mm_tn(va.data.data(), g.data.data(), tp.grad_buf(ib).data.data(), k, r, c, true);
        };
    }
    return o;
}

Var Tape::matmul_nt(Var a, Var b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.cols())
        throw InvalidInputError("matmul_nt: shape mismatch " + ta.shape_str() + " x " + tb.shape_str());
    const std::int64_t r = ta.rows(), k = ta.cols(), c = tb.rows();
    Tensor out({r, c});
    mm_nt(ta.data.data(), tb.data.data(), out.data.data(), r, k, c, false);
    bool req = requires_grad(a) || requires_grad(b);
    Var o = push(std::move(out), req);
    if (req) {
        auto ia = a.id, ib = b.id, io = o.id;
        nodes_[o.id].back = [ia, ib, io, r, k, c](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;  // (r,c)
            const Tensor& va = tp.nodes_[ia].value;      // (r,k)
            const Tensor& vb = tp.nodes_[ib].value;      // (c,k)
            if (tp.nodes_[ia].needs)
                mm_nn(g.data.data(), vb.data.data(), tp.grad_buf(ia).data.data(), r, c, k, true);
            if (tp.nodes_[ib].needs)
                mm_tn(g.data.data(), va.data.data(), tp.grad_buf(ib).data.data(), c, r, k, true);
        };
    }
    return o;
}

Var Tape::softmax_rows(Var a) {
    const Tensor& ta = val(a);
    if (ta.rank() != 2) throw InvalidInputError("softmax_rows: rank-2 input required");
    const std::int64_t r = ta.rows(), c = ta.cols();
    Tensor out({r, c});
    for (std::int64_t i = 0; i < r; ++i) {
        double mx = ta.at(i, 0);
        for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, ta.at(i, j));
        double denom = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
            const double e = std::exp(ta.at(i, j) - mx);
            out.at(i, j) = e;
            denom += e;
        }
        for (std::int64_t j = 0; j < c; ++j) out.at(i, j) /= denom;
    }
    bool req = requires_grad(a);
    Var o = push(std::move(out), req);
    if (req) {
        auto ia = a.id, io = o.id;
        nodes_[o.id].back = [ia, io, r, c](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            const Tensor& y = tp.nodes_[io].value;
            Tensor ga({r, c});
            for (std::int64_t i = 0; i < r; ++i) {
                double dot = 0.0;
                for (std::int64_t j = 0; j < c; ++j) dot += g.at(i, j) * y.at(i, j);
                for (std::int64_t j = 0; j < c; ++j) ga.at(i, j) = y.at(i, j) * (g.at(i, j) - dot);
            }
            tp.add_to_grad(ia, ga.data.data(), ga.numel());
        };
    }
    return o;
}

Var Tape::concat_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw InvalidInputError("concat_rows: empty input");
    std::int64_t c = val(rows[0]).cols();
    std::int64_t total = 0;
    bool req = false;
    for (Var v : rows) {
        const Tensor& t = val(v);
        if (t.rank() != 2 || t.cols() != c) throw InvalidInputError("concat_rows: column mismatch");
        total += t.rows();
        req = req || requires_grad(v);
    }
    Tensor out({total, c});
    std::int64_t off = 0;
    for (Var v : rows) {
        const Tensor& t = val(v);
        std::copy(t.data.begin(), t.data.end(), out.data.begin() + off);
        off += t.numel();
    }
    Var o = push(std::move(out), req);
    if (req) {
        std::vector<std::int32_t> ids;
        std::vector<std::int64_t> sizes;
        for (Var v : rows) {
            ids.push_back(v.id);
            sizes.push_back(val(v).numel());
        }
        auto io = o.id;
        nodes_[o.id].back = [ids, sizes, io](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            std::int64_t off2 = 0;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                tp.add_to_grad(ids[i], g.data.data() + off2, sizes[i]);
                off2 += sizes[i];
            }
        };
    }
    return o;
}

Var Tape::reshape(Var a, std::vector<std::int64_t> shape) {
    const Tensor& ta = val(a);
    if (Tensor::numel_of(shape) != ta.numel()) throw InvalidInputError("reshape: numel mismatch");
    Tensor out(std::move(shape), ta.data);
    bool req = requires_grad(a);
    Var o = push(std::move(out), req);
    if (req) {
        auto ia = a.id, io = o.id;
        nodes_[o.id].back = [ia, io](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            tp.add_to_grad(ia, g.data.data(), g.numel());
        };
    }
    return o;
}

Var Tape::sum_all(Var a) {
    const Tensor& ta = val(a);
    double acc = 0.0;
    for (double v : ta.data) acc += v;
    bool req = requires_grad(a);
    Var o = push(Tensor({1}, {acc}), req);
    if (req) {
        auto ia = a.id, io = o.id;
        nodes_[o.id].back = [ia, io](Tape& tp) {
            const double g = tp.nodes_[io].grad_store[0];
            Tensor ga(tp.nodes_[ia].value.shape, g);
            tp.add_to_grad(ia, ga.data.data(), ga.numel());
        };
    }
    return o;
}

Var Tape::mean_all(Var a) { return scale(sum_all(a), 1.0 / static_cast<double>(val(a).numel())); }

std::int64_t argmax_flat(const Tensor& t) {
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < t.numel(); ++i)
        if (t[i] > t[best]) best = i;
    return best;
}

std::int64_t argmin_flat(const Tensor& t) {
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < t.numel(); ++i)
        if (t[i] < t[best]) best = i;
    return best;
}

Var Tape::max_all(Var a) {
    const Tensor& ta = val(a);
    if (ta.numel() == 0) throw InvalidInputError("max_all: empty input");
    const std::int64_t idx = argmax_flat(ta);
    bool req = requires_grad(a);
    Var o = push(Tensor({1}, {ta[idx]}), req);
    if (req) {
        auto ia = a.id, io = o.id;
        nodes_[o.id].back = [ia, io, idx](Tape& tp) {
            const double g = tp.nodes_[io].grad_store[0];
            Tensor& gb = tp.grad_buf(ia);
            gb[idx] += g;
        };
    }
    return o;
}

Var Tape::min_all(Var a) {
    const Tensor& ta = val(a);
    if (ta.numel() == 0) throw InvalidInputError("min_all: empty input");
    const std::int64_t idx = argmin_flat(ta);
    bool req = requires_grad(a);
    Var o = push(Tensor({1}, {ta[idx]}), req);
    if (req) {
        auto ia = a.id, io = o.id;
        nodes_[o.id].back = [ia, io, idx](Tape& tp) {
            const double g = tp.nodes_[io].grad_store[0];
            Tensor& gb = tp.grad_buf(ia);
            gb[idx] += g;
        };
    }
    return o;
}

Var Tape::stack_scalars(const std::vector<Var>& xs) {
    if (xs.empty()) throw InvalidInputError("stack_scalars: empty input");
    Tensor out({static_cast<std::int64_t>(xs.size())});
    bool req = false;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (val(xs[i]).numel() != 1) throw InvalidInputError("stack_scalars: non-scalar entry");
        out[static_cast<std::int64_t>(i)] = val(xs[i])[0];
        req = req || requires_grad(xs[i]);
    }
    Var o = push(std::move(out), req);
    if (req) {
        std::vector<std::int32_t> ids;
        for (Var v : xs) ids.push_back(v.id);
        auto io = o.id;
        nodes_[o.id].back = [ids, io](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const double gi = g[static_cast<std::int64_t>(i)];
                tp.add_to_grad(ids[i], &gi, 1);
            }
        };
    }
    return o;
}

Var Tape::chw_to_rows(Var a) {
    const Tensor& ta = val(a);
    if (ta.rank() != 3) throw InvalidInputError("chw_to_rows: rank-3 input required");
    const std::int64_t c = ta.shape[0], h = ta.shape[1], w = ta.shape[2];
    const std::int64_t hw = h * w;
    Tensor out({hw, c});
    for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t p = 0; p < hw; ++p) out[p * c + ch] = ta[ch * hw + p];
    bool req = requires_grad(a);
    Var o = push(std::move(out), req);
    if (req) {
        auto ia = a.id, io = o.id;
        nodes_[o.id].back = [ia, io, c, hw](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            Tensor& gb = tp.grad_buf(ia);
            for (std::int64_t ch = 0; ch < c; ++ch)
                for (std::int64_t p = 0; p < hw; ++p) gb[ch * hw + p] += g[p * c + ch];
        };
    }
    return o;
}

void bilinear_taps(std::int64_t in_h, std::int64_t in_w, std::int64_t out_h, std::int64_t out_w,
                   std::vector<std::vector<BilinearTap>>& taps) {
    taps.assign(static_cast<std::size_t>(out_h * out_w), {});
    const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
        double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(in_h - 1));
        const std::int64_t y0 = static_cast<std::int64_t>(std::floor(fy));
        const std::int64_t y1 = std::min(y0 + 1, in_h - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::int64_t ox = 0; ox < out_w; ++ox) {
            double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(in_w - 1));
            const std::int64_t x0 = static_cast<std::int64_t>(std::floor(fx));
            const std::int64_t x1 = std::min(x0 + 1, in_w - 1);
            const double wx = fx - static_cast<double>(x0);
            auto& t = taps[static_cast<std::size_t>(oy * out_w + ox)];
            t.push_back({y0 * in_w + x0, (1.0 - wy) * (1.0 - wx)});
            if (x1 != x0) t.push_back({y0 * in_w + x1, (1.0 - wy) * wx});
            if (y1 != y0) t.push_back({y1 * in_w + x0, wy * (1.0 - wx)});
            if (x1 != x0 && y1 != y0) t.push_back({y1 * in_w + x1, wy * wx});
        }
    }
}

namespace {

// Tap tables are reused heavily during training; memoize per geometry.
std::shared_ptr<const std::vector<std::vector<BilinearTap>>> shared_taps(std::int64_t in_h, std::int64_t in_w,
                                                                         std::int64_t out_h, std::int64_t out_w) {
    static std::mutex mu;
    static std::map<std::array<std::int64_t, 4>, std::shared_ptr<const std::vector<std::vector<BilinearTap>>>> cache;
    const std::array<std::int64_t, 4> key{in_h, in_w, out_h, out_w};
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto taps = std::make_shared<std::vector<std::vector<BilinearTap>>>();
    bilinear_taps(in_h, in_w, out_h, out_w, *taps);
    cache[key] = taps;
    return taps;
}

}  // namespace

Tensor upsample_bilinear_value(const Tensor& a, std::int64_t out_h, std::int64_t out_w) {
    if (a.rank() != 2) throw InvalidInputError("upsample_bilinear: rank-2 input required");
    auto taps_p = shared_taps(a.rows(), a.cols(), out_h, out_w);
    const auto& taps = *taps_p;
    Tensor out({out_h, out_w});
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        double acc = 0.0;
        for (const auto& t : taps[static_cast<std::size_t>(i)]) acc += t.w * a[t.idx];
        out[i] = acc;
    }
    return out;
}

Var Tape::upsample_bilinear(Var a, std::int64_t out_h, std::int64_t out_w) {
    const Tensor& ta = val(a);
    if (ta.rank() != 2) throw InvalidInputError("upsample_bilinear: rank-2 input required");
    auto taps = shared_taps(ta.rows(), ta.cols(), out_h, out_w);
    Tensor out({out_h, out_w});
    for (std::int64_t i = 0; i < out.numel(); ++i) {
        double acc = 0.0;
        for (const auto& t : (*taps)[static_cast<std::size_t>(i)]) acc += t.w * ta[t.idx];
        out[i] = acc;
    }
    bool req = requires_grad(a);
    Var o = push(std::move(out), req);
    if (req) {
        auto ia = a.id, io = o.id;
        nodes_[o.id].back = [ia, io, taps](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            Tensor& gb = tp.grad_buf(ia);
            for (std::int64_t i = 0; i < g.numel(); ++i) {
                const double gi = g[i];
                if (gi == 0.0) continue;
                for (const auto& t : (*taps)[static_cast<std::size_t>(i)]) gb[t.idx] += gi * t.w;
            }
        };
    }
    return o;
}

Var Tape::conv2d(Var x, Var w, Var b, int stride, int pad) {
    const Tensor& tx = val(x);
    const Tensor& tw = val(w);
    const Tensor& tb = val(b);
    if (tx.rank() != 3 || tw.rank() != 4) throw InvalidInputError("conv2d: x must be (C,H,W), w (Co,Ci,kh,kw)");
    const std::int64_t ci = tx.shape[0], h = tx.shape[1], wd = tx.shape[2];
    const std::int64_t co = tw.shape[0], kh = tw.shape[2], kw = tw.shape[3];
    if (tw.shape[1] != ci) throw InvalidInputError("conv2d: channel mismatch");
    if (tb.numel() != co) throw InvalidInputError("conv2d: bias size mismatch");
    const std::int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::int64_t wo = (wd + 2 * pad - kw) / stride + 1;
    Tensor out({co, ho, wo});
    const double* px = tx.data.data();
    const double* pw = tw.data.data();
    double* po = out.data.data();
    for (std::int64_t oc = 0; oc < co; ++oc) {
        for (std::int64_t oy = 0; oy < ho; ++oy) {
            for (std::int64_t ox = 0; ox < wo; ++ox) {
                double acc = tb[oc];
                for (std::int64_t ic = 0; ic < ci; ++ic) {
                    for (std::int64_t ky = 0; ky < kh; ++ky) {
                        const std::int64_t iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= h) continue;
                        for (std::int64_t kx = 0; kx < kw; ++kx) {
                            const std::int64_t ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= wd) continue;
                            acc += px[(ic * h + iy) * wd + ix] * pw[((oc * ci + ic) * kh + ky) * kw + kx];
                        }
                    }
                }
                po[(oc * ho + oy) * wo + ox] = acc;
            }
        }
    }
    bool req = requires_grad(x) || requires_grad(w) || requires_grad(b);
    Var o = push(std::move(out), req);
    if (req) {
        auto ix_ = x.id, iw_ = w.id, ib_ = b.id, io = o.id;
        nodes_[o.id].back = [ix_, iw_, ib_, io, ci, h, wd, co, kh, kw, ho, wo, stride, pad](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            const Tensor& vx = tp.nodes_[ix_].value;
            const Tensor& vw = tp.nodes_[iw_].value;
            const bool need_x = tp.nodes_[ix_].needs;
            const bool need_w = tp.nodes_[iw_].needs;
            const bool need_b = tp.nodes_[ib_].needs;
            double* gx = need_x ? tp.grad_buf(ix_).data.data() : nullptr;
            double* gw = need_w ? tp.grad_buf(iw_).data.data() : nullptr;
            double* gb = need_b ? tp.grad_buf(ib_).data.data() : nullptr;
            const double* pg = g.data.data();
            const double* px = vx.data.data();
            const double* pw = vw.data.data();
            for (std::int64_t oc = 0; oc < co; ++oc) {
                for (std::int64_t oy = 0; oy < ho; ++oy) {
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                        const double go = pg[(oc * ho + oy) * wo + ox];
                        if (go == 0.0) continue;
                        if (gb) gb[oc] += go;
                        for (std::int64_t ic = 0; ic < ci; ++ic) {
                            for (std::int64_t ky = 0; ky < kh; ++ky) {
                                const std::int64_t iy = oy * stride + ky - pad;
                                if (iy < 0 || iy >= h) continue;
                                for (std::int64_t kx = 0; kx < kw; ++kx) {
                                    const std::int64_t ix2 = ox * stride + kx - pad;
                                    if (ix2 < 0 || ix2 >= wd) continue;
                                    const std::int64_t xi = (ic * h + iy) * wd + ix2;
                                    const std::int64_t wi = ((oc * ci + ic) * kh + ky) * kw + kx;
                                    if (gw) gw[wi] += go * px[xi];
                                    if (gx) gx[xi] += go * pw[wi];
                                }
                            }
                        }
                    }
                }
            }
        };
    }
    return o;
}

Var Tape::rows_mean(Var table, std::vector<std::int64_t> ids) {
    const Tensor& tt = val(table);
    if (tt.rank() != 2) throw InvalidInputError("rows_mean: rank-2 table required");
    if (ids.empty()) throw InvalidInputError("rows_mean: empty id list");
    const std::int64_t c = tt.cols();
    Tensor out({1, c});
    for (std::int64_t id : ids) {
        if (id < 0 || id >= tt.rows()) throw InvalidInputError("rows_mean: id out of range");
        for (std::int64_t j = 0; j < c; ++j) out[j] += tt.at(id, j);
    }
    const double inv = 1.0 / static_cast<double>(ids.size());
    for (std::int64_t j = 0; j < c; ++j) out[j] *= inv;
    bool req = requires_grad(table);
    Var o = push(std::move(out), req);
    if (req) {
        auto it = table.id, io = o.id;
        nodes_[o.id].back = [it, io, ids = std::move(ids), c, inv](Tape& tp) {
            const Tensor& g = tp.nodes_[io].grad_store;
            Tensor& gb = tp.grad_buf(it);
            for (std::int64_t id : ids)
                for (std::int64_t j = 0; j < c; ++j) gb.at(id, j) += g[j] * inv;
        };
    }
    return o;
}

}  // namespace pcn
