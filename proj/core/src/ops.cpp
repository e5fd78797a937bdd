#include "masc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "masc/errors.hpp"
#include "masc/mac_counter.hpp"

namespace masc {
namespace {

using GradIn = std::span<std::vector<double>* const>;

std::size_t normalize_axis(int axis, std::size_t ndim) {
  const int n = static_cast<int>(ndim);
  const int a = axis < 0 ? axis + n : axis;
  if (a < 0 || a >= n) {
    throw AxisError("axis " + std::to_string(axis) + " out of range for a " + std::to_string(ndim) + "-d tensor");
  }
  return static_cast<std::size_t>(a);
}

// outer x len x inner view of a shape around one axis.
struct AxisView {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

struct Broadcast {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
  bool same = false;
};

Broadcast make_broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast p;
  p.same = a == b;
  const std::size_t nd = std::max(a.size(), b.size());
  p.out.assign(nd, 1);
  p.stride_a.assign(nd, 0);
  p.stride_b.assign(nd, 0);
  const auto sa = contiguous_strides(a);
  const auto sb = contiguous_strides(b);
  for (std::size_t d = 0; d < nd; ++d) {
    const std::size_t offset_a = nd - a.size();
    const std::size_t offset_b = nd - b.size();
    const std::size_t ea = d >= offset_a ? a[d - offset_a] : 1;
    const std::size_t eb = d >= offset_b ? b[d - offset_b] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                           " are not broadcastable");
    }
    p.out[d] = std::max(ea, eb);
    if (d >= offset_a && ea != 1) p.stride_a[d] = sa[d - offset_a];
    if (d >= offset_b && eb != 1) p.stride_b[d] = sb[d - offset_b];
  }
  return p;
}

template <class F>
void for_each_broadcast(const Broadcast& p, F&& f) {
  const std::size_t n = shape_numel(p.out);
  if (p.same) {
    for (std::size_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t nd = p.out.size();
  std::vector<std::size_t> idx(nd, 0);
  std::size_t ia = 0;
  std::size_t ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    f(i, ia, ib);
    for (std::size_t d = nd; d-- > 0;) {
      ++idx[d];
      ia += p.stride_a[d];
      ib += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      ia -= p.stride_a[d] * p.out[d];
      ib -= p.stride_b[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul, kDiv };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
  const Broadcast plan = make_broadcast(a.shape(), b.shape(), name);
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(shape_numel(plan.out));
  for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    switch (kind) {
      case BinaryKind::kAdd: out[i] = av[ia] + bv[ib]; break;
      case BinaryKind::kSub: out[i] = av[ia] - bv[ib]; break;
      case BinaryKind::kMul: out[i] = av[ia] * bv[ib]; break;
      case BinaryKind::kDiv: out[i] = av[ia] / bv[ib]; break;
    }
  });
  Shape shape = plan.out;
  return make_op_result(std::move(shape), std::move(out), name, {a, b},
                        [plan, kind, a_impl = a.impl_ptr(), b_impl = b.impl_ptr()](std::span<const double> g,
                                                                                   GradIn gin) {
                          const auto& ad = a_impl->data;
                          const auto& bd = b_impl->data;
                          std::vector<double>* ga = gin[0];
                          std::vector<double>* gb = gin[1];
                          for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                            switch (kind) {
                              case BinaryKind::kAdd:
                                if (ga) (*ga)[ia] += g[i];
                                if (gb) (*gb)[ib] += g[i];
                                break;
                              case BinaryKind::kSub:
                                if (ga) (*ga)[ia] += g[i];
                                if (gb) (*gb)[ib] -= g[i];
                                break;
                              case BinaryKind::kMul:
                                if (ga) (*ga)[ia] += g[i] * bd[ib];
                                if (gb) (*gb)[ib] += g[i] * ad[ia];
                                break;
                              case BinaryKind::kDiv:
                                if (ga) (*ga)[ia] += g[i] / bd[ib];
                                if (gb) (*gb)[ib] -= g[i] * ad[ia] / (bd[ib] * bd[ib]);
                                break;
                            }
                          });
                        });
}

// C[m, n] += A[m, k] * B[k, n]
void gemm_accumulate(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  macs::add(static_cast<std::uint64_t>(m) * k * n);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[m, k] += dC[m, n] * B[k, n]^T
void gemm_grad_a(const double* dc, const double* b, double* da, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* dcrow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
      da[i * k + p] += acc;
    }
  }
}

// dB[k, n] += A[m, k]^T * dC[m, n]
void gemm_grad_b(const double* a, const double* dc, double* db, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* dcrow = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* dbrow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
    }
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kDiv, "div"); }

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v *= factor;
  return make_op_result(x.shape(), std::move(out), "scale", {x}, [factor](std::span<const double> g, GradIn gin) {
    if (!gin[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += factor * g[i];
  });
}

Tensor div_scalar(const Tensor& x, double divisor) {
  if (divisor == 0.0) throw ParameterError("div_scalar: division by zero");
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v /= divisor;
  return make_op_result(x.shape(), std::move(out), "div_scalar", {x},
                        [divisor](std::span<const double> g, GradIn gin) {
                          if (!gin[0]) return;
                          for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] / divisor;
                        });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  if (debug::KinkProbe::active()) {
    for (double v : out) debug::KinkProbe::record(v > 0.0);
  }
  return make_op_result(x.shape(), std::move(out), "relu", {x},
                        [x_impl = x.impl_ptr()](std::span<const double> g, GradIn gin) {
                          if (!gin[0]) return;
                          const auto& xd = x_impl->data;
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            if (xd[i] > 0.0) (*gin[0])[i] += g[i];
                          }
                        });
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, x.ndim());
  const AxisView v = axis_view(x.shape(), ax);
  const auto xv = x.values();
  std::vector<double> out(v.outer * v.inner, 0.0);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t l = 0; l < v.len; ++l) {
      const double* src = xv.data() + (o * v.len + l) * v.inner;
      double* dst = out.data() + o * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i];
    }
  }
  Shape shape = x.shape();
  if (keepdim) {
    shape[ax] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
    if (shape.empty()) shape = {1};
  }
  return make_op_result(std::move(shape), std::move(out), "sum", {x}, [v](std::span<const double> g, GradIn gin) {
    if (!gin[0]) return;
    auto& gx = *gin[0];
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t l = 0; l < v.len; ++l) {
        double* dst = gx.data() + (o * v.len + l) * v.inner;
        const double* src = g.data() + o * v.inner;
        for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

Tensor mean(const Tensor& x, int axis, bool keepdim) {
  const std::size_t ax = normalize_axis(axis, x.ndim());
  const AxisView v = axis_view(x.shape(), ax);
  const auto xv = x.values();
  const double n = static_cast<double>(v.len);
  std::vector<double> out(v.outer * v.inner, 0.0);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t l = 0; l < v.len; ++l) {
      const double* src = xv.data() + (o * v.len + l) * v.inner;
      double* dst = out.data() + o * v.inner;
      for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i];
    }
  }
  for (double& value : out) value /= n;
  Shape shape = x.shape();
  if (keepdim) {
    shape[ax] = 1;
  } else {
    shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(ax));
    if (shape.empty()) shape = {1};
  }
  return make_op_result(std::move(shape), std::move(out), "mean", {x}, [v, n](std::span<const double> g, GradIn gin) {
    if (!gin[0]) return;
    auto& gx = *gin[0];
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t l = 0; l < v.len; ++l) {
        double* dst = gx.data() + (o * v.len + l) * v.inner;
        const double* src = g.data() + o * v.inner;
        for (std::size_t i = 0; i < v.inner; ++i) dst[i] += src[i] / n;
      }
    }
  });
}

Tensor sum_all(const Tensor& x) {
  const auto xv = x.values();
  double total = 0.0;
  for (double value : xv) total += value;
  return make_op_result({1}, {total}, "sum_all", {x}, [](std::span<const double> g, GradIn gin) {
    if (!gin[0]) return;
    for (double& value : *gin[0]) value += g[0];
  });
}

Tensor mean_all(const Tensor& x) {
  const auto xv = x.values();
  const double n = static_cast<double>(xv.size());
  double total = 0.0;
  for (double value : xv) total += value;
  return make_op_result({1}, {total / n}, "mean_all", {x}, [n](std::span<const double> g, GradIn gin) {
    if (!gin[0]) return;
    for (double& value : *gin[0]) value += g[0] / n;
  });
}

Tensor softmax(const Tensor& x, int axis) {
  const std::size_t ax = normalize_axis(axis, x.ndim());
  const AxisView v = axis_view(x.shape(), ax);
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.len * v.inner + i;
      double peak = xv[base];
      for (std::size_t l = 1; l < v.len; ++l) peak = std::max(peak, xv[base + l * v.inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < v.len; ++l) {
        const double e = std::exp(xv[base + l * v.inner] - peak);
        out[base + l * v.inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < v.len; ++l) out[base + l * v.inner] /= total;
    }
  }
  std::vector<double> saved = out;
  return make_op_result(x.shape(), std::move(out), "softmax", {x},
                        [v, y = std::move(saved)](std::span<const double> g, GradIn gin) {
                          if (!gin[0]) return;
                          auto& gx = *gin[0];
                          for (std::size_t o = 0; o < v.outer; ++o) {
                            for (std::size_t i = 0; i < v.inner; ++i) {
                              const std::size_t base = o * v.len * v.inner + i;
                              double dot = 0.0;
                              for (std::size_t l = 0; l < v.len; ++l) {
                                dot += g[base + l * v.inner] * y[base + l * v.inner];
                              }
                              for (std::size_t l = 0; l < v.len; ++l) {
                                const std::size_t at = base + l * v.inner;
                                gx[at] += y[at] * (g[at] - dot);
                              }
                            }
                          }
                        });
}

Tensor norm_last(const Tensor& x) {
  const std::size_t c = x.size(-1);
  const std::size_t rows = x.numel() / c;
  const auto xv = x.values();
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < c; ++j) ss += xv[r * c + j] * xv[r * c + j];
    out[r] = std::sqrt(ss);
    if (debug::KinkProbe::active()) debug::KinkProbe::record(ss > 0.0);
  }
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  if (shape.empty()) shape = {1};
  std::vector<double> norms = out;
  return make_op_result(std::move(shape), std::move(out), "norm_last", {x},
                        [c, rows, x_impl = x.impl_ptr(), n = std::move(norms)](std::span<const double> g,
                                                                                GradIn gin) {
                          if (!gin[0]) return;
                          auto& gx = *gin[0];
                          const auto& xd = x_impl->data;
                          for (std::size_t r = 0; r < rows; ++r) {
                            if (n[r] == 0.0) continue;
                            const double f = g[r] / n[r];
                            for (std::size_t j = 0; j < c; ++j) gx[r * c + j] += f * xd[r * c + j];
                          }
                        });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_op_result(std::move(shape), std::move(out), "reshape", {x}, [](std::span<const double> g, GradIn gin) {
    if (!gin[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
  });
}

Tensor narrow(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const std::size_t ax = normalize_axis(axis, x.ndim());
  const AxisView v = axis_view(x.shape(), ax);
  if (length == 0 || start + length > v.len) {
    throw DimensionError("narrow: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") exceeds extent " + std::to_string(v.len) + " of shape " + shape_str(x.shape()));
  }
  const auto xv = x.values();
  std::vector<double> out(v.outer * length * v.inner);
  for (std::size_t o = 0; o < v.outer; ++o) {
    const double* src = xv.data() + (o * v.len + start) * v.inner;
    std::copy(src, src + length * v.inner, out.begin() + static_cast<std::ptrdiff_t>(o * length * v.inner));
  }
  Shape shape = x.shape();
  shape[ax] = length;
  return make_op_result(std::move(shape), std::move(out), "narrow", {x},
                        [v, start, length](std::span<const double> g, GradIn gin) {
                          if (!gin[0]) return;
                          auto& gx = *gin[0];
                          for (std::size_t o = 0; o < v.outer; ++o) {
                            double* dst = gx.data() + (o * v.len + start) * v.inner;
                            const double* src = g.data() + o * length * v.inner;
                            for (std::size_t i = 0; i < length * v.inner; ++i) dst[i] += src[i];
                          }
                        });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ParameterError("concat: no inputs");
  const std::size_t ax = normalize_axis(axis, parts.front().ndim());
  Shape shape = parts.front().shape();
  std::vector<std::size_t> lengths;
  std::size_t total = 0;
  for (const Tensor& t : parts) {
    const Shape& s = t.shape();
    bool ok = s.size() == shape.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == ax || s[d] == shape[d];
    if (!ok) {
      throw DimensionError("concat: shape " + shape_str(s) + " does not match " + shape_str(shape) +
                           " off axis " + std::to_string(ax));
    }
    lengths.push_back(s[ax]);
    total += s[ax];
  }
  shape[ax] = total;
  const AxisView v = axis_view(shape, ax);
  std::vector<double> out(shape_numel(shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto src = parts[p].values();
    for (std::size_t o = 0; o < v.outer; ++o) {
      std::copy_n(src.data() + o * lengths[p] * v.inner, lengths[p] * v.inner,
                  out.data() + (o * total + offset) * v.inner);
    }
    offset += lengths[p];
  }
  return make_op_result(std::move(shape), std::move(out), "concat", parts,
                        [v, total, lengths](std::span<const double> g, GradIn gin) {
                          std::size_t offset = 0;
                          for (std::size_t p = 0; p < lengths.size(); ++p) {
                            if (gin[p]) {
                              auto& gp = *gin[p];
                              for (std::size_t o = 0; o < v.outer; ++o) {
                                const double* src = g.data() + (o * total + offset) * v.inner;
                                double* dst = gp.data() + o * lengths[p] * v.inner;
                                for (std::size_t i = 0; i < lengths[p] * v.inner; ++i) dst[i] += src[i];
                              }
                            }
                            offset += lengths[p];
                          }
                        });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() < 2) {
    throw DimensionError("matmul needs operands of rank >= 2, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.size(-2);
  const std::size_t k = a.size(-1);
  const std::size_t n = b.size(-1);
  if (b.size(-2) != k) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  const auto av = a.values();
  const auto bv = b.values();

  if (batch_b.empty()) {
    // Shared right operand: fold a's batch dims into its rows.
    const std::size_t rows = a.numel() / k;
    std::vector<double> out(rows * n, 0.0);
    gemm_accumulate(av.data(), bv.data(), out.data(), rows, k, n);
    Shape shape = a.shape();
    shape.back() = n;
    return make_op_result(std::move(shape), std::move(out), "matmul", {a, b},
                          [rows, k, n, a_impl = a.impl_ptr(), b_impl = b.impl_ptr()](std::span<const double> g,
                                                                                     GradIn gin) {
                            if (gin[0]) gemm_grad_a(g.data(), b_impl->data.data(), gin[0]->data(), rows, k, n);
                            if (gin[1]) gemm_grad_b(a_impl->data.data(), g.data(), gin[1]->data(), rows, k, n);
                          });
  }

  Broadcast plan;
  try {
    plan = make_broadcast(batch_a.empty() ? Shape{1} : batch_a, batch_b, "matmul");
  } catch (const DimensionError&) {
    throw DimensionError("matmul: batch dimensions of " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " are not broadcastable");
  }
  plan.same = false;
  const std::size_t batches = shape_numel(plan.out);
  std::vector<double> out(batches * m * n, 0.0);
  for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    gemm_accumulate(av.data() + ia * m * k, bv.data() + ib * k * n, out.data() + i * m * n, m, k, n);
  });
  Shape shape = plan.out;
  shape.push_back(m);
  shape.push_back(n);
  return make_op_result(std::move(shape), std::move(out), "matmul", {a, b},
                        [plan, m, k, n, a_impl = a.impl_ptr(), b_impl = b.impl_ptr()](std::span<const double> g,
                                                                                      GradIn gin) {
                          const double* ad = a_impl->data.data();
                          const double* bd = b_impl->data.data();
                          for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                            const double* gi = g.data() + i * m * n;
                            if (gin[0]) gemm_grad_a(gi, bd + ib * k * n, gin[0]->data() + ia * m * k, m, k, n);
                            if (gin[1]) gemm_grad_b(ad + ia * m * k, gi, gin[1]->data() + ib * k * n, m, k, n);
                          });
                        });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.ndim() != 2 || bias.ndim() != 1 || bias.size(0) != weight.size(1)) {
    throw DimensionError("linear: weight " + shape_str(weight.shape()) + " and bias " + shape_str(bias.shape()) +
                         " are inconsistent");
  }
  return add(matmul(x, weight), bias);
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, std::vector<double>& running_mean,
                  std::vector<double>& running_var, const BatchNormOptions& options) {
  if (!(options.eps > 0.0)) throw ParameterError("batch_norm: eps must be positive");
  const std::size_t features = x.size(-1);
  if (gamma.numel() != features || beta.numel() != features || running_mean.size() != features ||
      running_var.size() != features) {
    throw DimensionError("batch_norm: parameters do not match " + std::to_string(features) + " features of " +
                         shape_str(x.shape()));
  }
  const std::size_t count = x.numel() / features;
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();

  std::vector<double> mu(features, 0.0);
  std::vector<double> var(features, 0.0);
  if (options.training) {
    for (std::size_t r = 0; r < count; ++r) {
      for (std::size_t f = 0; f < features; ++f) mu[f] += xv[r * features + f];
    }
    for (double& m : mu) m /= static_cast<double>(count);
    for (std::size_t r = 0; r < count; ++r) {
      for (std::size_t f = 0; f < features; ++f) {
        const double d = xv[r * features + f] - mu[f];
        var[f] += d * d;
      }
    }
    for (double& s : var) s /= static_cast<double>(count);
    if (options.update_running_stats) {
      const double unbias = count > 1 ? static_cast<double>(count) / static_cast<double>(count - 1) : 1.0;
      for (std::size_t f = 0; f < features; ++f) {
        running_mean[f] = (1.0 - options.momentum) * running_mean[f] + options.momentum * mu[f];
        running_var[f] = (1.0 - options.momentum) * running_var[f] + options.momentum * var[f] * unbias;
      }
    }
  } else {
    mu = running_mean;
    var = running_var;
  }

  std::vector<double> inv_std(features);
  for (std::size_t f = 0; f < features; ++f) inv_std[f] = 1.0 / std::sqrt(var[f] + options.eps);
  std::vector<double> xhat(xv.size());
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < count; ++r) {
    for (std::size_t f = 0; f < features; ++f) {
      const std::size_t i = r * features + f;
      xhat[i] = (xv[i] - mu[f]) * inv_std[f];
      out[i] = gv[f] * xhat[i] + bv[f];
    }
  }
  return make_op_result(
      x.shape(), std::move(out), "batch_norm", {x, gamma, beta},
      [features, count, training = options.training, inv_std = std::move(inv_std), xhat = std::move(xhat),
       g_impl = gamma.impl_ptr()](std::span<const double> g, GradIn gin) {
        const auto& gam = g_impl->data;
        std::vector<double> sum_g(features, 0.0);
        std::vector<double> sum_gx(features, 0.0);
        for (std::size_t r = 0; r < count; ++r) {
          for (std::size_t f = 0; f < features; ++f) {
            const std::size_t i = r * features + f;
            sum_g[f] += g[i];
            sum_gx[f] += g[i] * xhat[i];
          }
        }
        if (gin[1]) {
          for (std::size_t f = 0; f < features; ++f) (*gin[1])[f] += sum_gx[f];
        }
        if (gin[2]) {
          for (std::size_t f = 0; f < features; ++f) (*gin[2])[f] += sum_g[f];
        }
        if (!gin[0]) return;
        auto& gx = *gin[0];
        const double n = static_cast<double>(count);
        for (std::size_t r = 0; r < count; ++r) {
          for (std::size_t f = 0; f < features; ++f) {
            const std::size_t i = r * features + f;
            if (training) {
              gx[i] += gam[f] * inv_std[f] * (g[i] - sum_g[f] / n - xhat[i] * sum_gx[f] / n);
            } else {
              gx[i] += gam[f] * inv_std[f] * g[i];
            }
          }
        }
      });
}

Tensor cosine_similarity_matrix(const Tensor& h) {
  if (h.ndim() < 2) throw DimensionError("cosine_similarity_matrix needs rank >= 2, got " + shape_str(h.shape()));
  const std::size_t w = h.size(-2);
  const std::size_t d = h.size(-1);
  const std::size_t groups = h.numel() / (w * d);
  const auto hv = h.values();

  std::vector<double> gram(groups * w * w, 0.0);
  for (std::size_t grp = 0; grp < groups; ++grp) {
    const double* hg = hv.data() + grp * w * d;
    double* gg = gram.data() + grp * w * w;
    macs::add(static_cast<std::uint64_t>(w) * w * d);
    for (std::size_t i = 0; i < w; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) acc += hg[i * d + c] * hg[j * d + c];
        gg[i * w + j] = acc;
      }
    }
  }
  std::vector<double> norms(groups * w);
  std::vector<double> floored(groups * w);
  for (std::size_t grp = 0; grp < groups; ++grp) {
    for (std::size_t i = 0; i < w; ++i) {
      const double nrm = std::sqrt(gram[grp * w * w + i * w + i]);
      norms[grp * w + i] = nrm;
      floored[grp * w + i] = std::max(nrm, kCosineNormFloor);
    }
  }
  std::vector<double> out(groups * w * w);
  for (std::size_t grp = 0; grp < groups; ++grp) {
    for (std::size_t i = 0; i < w; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        out[grp * w * w + i * w + j] =
            gram[grp * w * w + i * w + j] / (floored[grp * w + i] * floored[grp * w + j]);
      }
    }
  }
  Shape shape(h.shape().begin(), h.shape().end() - 1);
  shape.push_back(w);
  return make_op_result(
      std::move(shape), std::move(out), "cosine_similarity", {h},
      [w, d, groups, h_impl = h.impl_ptr(), gram = std::move(gram), norms = std::move(norms),
       floored = std::move(floored)](std::span<const double> g, GradIn gin) {
        if (!gin[0]) return;
        const auto& hd = h_impl->data;
        auto& gh = *gin[0];
        std::vector<double> dgram(w * w);
        std::vector<double> dnorm(w);
        for (std::size_t grp = 0; grp < groups; ++grp) {
          const double* gs = g.data() + grp * w * w;
          const double* gm = gram.data() + grp * w * w;
          const double* fl = floored.data() + grp * w;
          const double* nr = norms.data() + grp * w;
          std::fill(dnorm.begin(), dnorm.end(), 0.0);
          for (std::size_t i = 0; i < w; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
              const double denom = fl[i] * fl[j];
              dgram[i * w + j] = gs[i * w + j] / denom;
              const double term = gs[i * w + j] * gm[i * w + j] / denom;
              // S_ij depends on the floored norms of both rows.
              if (nr[i] > kCosineNormFloor) dnorm[i] -= term / fl[i];
              if (nr[j] > kCosineNormFloor) dnorm[j] -= term / fl[j];
            }
          }
          for (std::size_t i = 0; i < w; ++i) {
            if (nr[i] > kCosineNormFloor) dgram[i * w + i] += dnorm[i] / (2.0 * nr[i]);
          }
          const double* hg = hd.data() + grp * w * d;
          double* out = gh.data() + grp * w * d;
          for (std::size_t i = 0; i < w; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
              const double coeff = dgram[i * w + j] + dgram[j * w + i];
              if (coeff == 0.0) continue;
              for (std::size_t c = 0; c < d; ++c) out[i * d + c] += coeff * hg[j * d + c];
            }
          }
        }
      });
}

Tensor topk_mask(const Tensor& s, std::size_t k) {
  if (s.ndim() < 2 || s.size(-1) != s.size(-2)) {
    throw DimensionError("topk_mask needs square trailing matrices, got " + shape_str(s.shape()));
  }
  const std::size_t w = s.size(-1);
  if (k < 1 || k > w) {
    throw ParameterError("topk_mask: k=" + std::to_string(k) + " must lie in [1, " + std::to_string(w) + "]");
  }
  const auto sv = s.values();
  const std::size_t rows = s.numel() / w;
  std::vector<double> out(sv.size(), 0.0);
  std::vector<std::size_t> order(w);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = sv.data() + r * w;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [row](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
    for (std::size_t i = 0; i < k; ++i) out[r * w + order[i]] = 1.0;
  }
  return Tensor(s.shape(), std::move(out));
}

SparseMatrix SparseMatrix::from_dense(std::size_t rows, std::size_t cols, std::span<const double> dense) {
  if (dense.size() != rows * cols) throw DimensionError("SparseMatrix::from_dense: size mismatch");
  SparseMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.row_ptr.reserve(rows + 1);
  m.row_ptr.push_back(0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (dense[i * cols + j] != 0.0) {
        m.col_idx.push_back(j);
        m.values.push_back(dense[i * cols + j]);
      }
    }
    m.row_ptr.push_back(m.values.size());
  }
  return m;
}

SparseMatrix SparseMatrix::row_normalized(std::size_t rows, std::size_t cols, std::span<const double> mask) {
  SparseMatrix m = from_dense(rows, cols, mask);
  for (std::size_t i = 0; i < rows; ++i) {
    double total = 0.0;
    for (std::size_t p = m.row_ptr[i]; p < m.row_ptr[i + 1]; ++p) total += m.values[p];
    if (total == 0.0) continue;
    for (std::size_t p = m.row_ptr[i]; p < m.row_ptr[i + 1]; ++p) m.values[p] /= total;
  }
  return m;
}

std::vector<double> SparseMatrix::to_dense() const {
  std::vector<double> dense(rows * cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t p = row_ptr[i]; p < row_ptr[i + 1]; ++p) dense[i * cols + col_idx[p]] = values[p];
  }
  return dense;
}

Tensor sparse_aggregate(const Tensor& x, std::span<const SparseMatrix> matrices) {
  if (x.ndim() < 2) throw DimensionError("sparse_aggregate needs rank >= 2, got " + shape_str(x.shape()));
  const std::size_t n = x.size(-2);
  const std::size_t f = x.size(-1);
  const std::size_t groups = x.numel() / (n * f);
  if (matrices.empty() || (matrices.size() != 1 && matrices.size() != groups)) {
    throw DimensionError("sparse_aggregate: " + std::to_string(matrices.size()) + " matrices for " +
                         std::to_string(groups) + " groups of " + shape_str(x.shape()));
  }
  const std::size_t rows = matrices[0].rows;
  for (const SparseMatrix& a : matrices) {
    if (a.cols != n || a.rows != rows) {
      throw DimensionError("sparse_aggregate: matrix " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                           " does not fit " + shape_str(x.shape()));
    }
  }
  std::vector<SparseMatrix> kept(matrices.begin(), matrices.end());
  const auto xv = x.values();
  std::vector<double> out(groups * rows * f, 0.0);
  for (std::size_t grp = 0; grp < groups; ++grp) {
    const SparseMatrix& a = kept.size() == 1 ? kept[0] : kept[grp];
    macs::add(static_cast<std::uint64_t>(a.nnz()) * f);
    const double* xg = xv.data() + grp * n * f;
    double* yg = out.data() + grp * rows * f;
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t p = a.row_ptr[i]; p < a.row_ptr[i + 1]; ++p) {
        const double coeff = a.values[p];
        const double* src = xg + a.col_idx[p] * f;
        for (std::size_t c = 0; c < f; ++c) yg[i * f + c] += coeff * src[c];
      }
    }
  }
  Shape shape = x.shape();
  shape[shape.size() - 2] = rows;
  return make_op_result(std::move(shape), std::move(out), "sparse_aggregate", {x},
                        [n, f, rows, groups, kept = std::move(kept)](std::span<const double> g, GradIn gin) {
                          if (!gin[0]) return;
                          auto& gx = *gin[0];
                          for (std::size_t grp = 0; grp < groups; ++grp) {
                            const SparseMatrix& a = kept.size() == 1 ? kept[0] : kept[grp];
                            const double* gy = g.data() + grp * rows * f;
                            double* dx = gx.data() + grp * n * f;
                            for (std::size_t i = 0; i < rows; ++i) {
                              for (std::size_t p = a.row_ptr[i]; p < a.row_ptr[i + 1]; ++p) {
                                const double coeff = a.values[p];
                                double* dst = dx + a.col_idx[p] * f;
                                for (std::size_t c = 0; c < f; ++c) dst[c] += coeff * gy[i * f + c];
                              }
                            }
                          }
                        });
}

}  // namespace masc
