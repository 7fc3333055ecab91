#include "heba/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <utility>

#include "heba/errors.hpp"

namespace heba {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

using NodePtr = std::shared_ptr<detail::Node>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

int normalize_axis(int axis, int rank, const Shape& shape) {
  if (axis < 0) axis += rank;
  require(axis >= 0 && axis < rank,
          "axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
  return axis;
}

bool is_suffix(const Shape& suffix, const Shape& full) {
  if (suffix.size() > full.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), full.rbegin());
}

// Copies src (laid out as in_shape) into the axis order given by axes.
Eigen::ArrayXd permute_copy(const Eigen::ArrayXd& src, const Shape& in_shape,
                            const std::vector<int>& axes) {
  const int r = static_cast<int>(in_shape.size());
  Shape out_shape(r);
  for (int d = 0; d < r; ++d) out_shape[d] = in_shape[axes[d]];
  const auto in_strides = row_major_strides(in_shape);
  std::vector<Index> step(r);
  for (int d = 0; d < r; ++d) step[d] = in_strides[axes[d]];

  const Index n = static_cast<Index>(src.size());
  Eigen::ArrayXd out(n);
  std::vector<Index> counter(r, 0);
  Index src_off = 0;
  for (Index i = 0; i < n; ++i) {
    out[i] = src[src_off];
    for (int d = r - 1; d >= 0; --d) {
      if (++counter[d] < out_shape[d]) {
        src_off += step[d];
        break;
      }
      counter[d] = 0;
      src_off -= step[d] * (out_shape[d] - 1);
    }
  }
  return out;
}

double norm_cdf(double x) { return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double norm_pdf(double x) {
  static const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool same = sa == sb;
  require(same || is_suffix(sb, sa),
          "add: shape " + shape_str(sb) + " is neither equal to nor a trailing suffix of " +
              shape_str(sa));
  NodePtr an = a.node(), bn = b.node();
  const Index bs = b.numel();
  const Index rep = a.numel() / bs;

  Eigen::ArrayXd out = an->values;
  for (Index r = 0; r < rep; ++r) out.segment(r * bs, bs) += bn->values;

  auto backward_fn = [an, bn, bs, rep](detail::Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      an->grad += self.grad;
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (Index r = 0; r < rep; ++r) bn->grad += self.grad.segment(r * bs, bs);
    }
  };
  return Tensor::make_result(sa, std::move(out), {an, bn}, std::move(backward_fn));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(),
          "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  NodePtr an = a.node(), bn = b.node();
  Eigen::ArrayXd out = an->values * bn->values;
  auto backward_fn = [an, bn](detail::Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      an->grad += self.grad * bn->values;
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      bn->grad += self.grad * an->values;
    }
  };
  return Tensor::make_result(a.shape(), std::move(out), {an, bn}, std::move(backward_fn));
}

Tensor scale(const Tensor& x, double factor) {
  NodePtr xn = x.node();
  Eigen::ArrayXd out = xn->values * factor;
  auto backward_fn = [xn, factor](detail::Node& self) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      xn->grad += self.grad * factor;
    }
  };
  return Tensor::make_result(x.shape(), std::move(out), {xn}, std::move(backward_fn));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2,
          "matmul: expected rank-2 operands, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  require(a.dim(1) == b.dim(0), "matmul: inner dimensions mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  NodePtr an = a.node(), bn = b.node();

  Eigen::ArrayXd out(m * n);
  {
    ConstMatMap A(an->values.data(), m, k);
    ConstMatMap B(bn->values.data(), k, n);
    MatMap C(out.data(), m, n);
    C.noalias() = A * B;
  }
  auto backward_fn = [an, bn, m, k, n](detail::Node& self) {
    ConstMatMap G(self.grad.data(), m, n);
    if (an->requires_grad) {
      an->ensure_grad();
      MatMap GA(an->grad.data(), m, k);
      ConstMatMap B(bn->values.data(), k, n);
      GA.noalias() += G * B.transpose();
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      MatMap GB(bn->grad.data(), k, n);
      ConstMatMap A(an->values.data(), m, k);
      GB.noalias() += A.transpose() * G;
    }
  };
  return Tensor::make_result({m, n}, std::move(out), {an, bn}, std::move(backward_fn));
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  require(a.rank() == 3 && b.rank() == 3,
          "bmm: expected rank-3 operands, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(1),
          "bmm: incompatible shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const Index g = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  NodePtr an = a.node(), bn = b.node();

  Eigen::ArrayXd out(g * m * n);
  for (Index i = 0; i < g; ++i) {
    ConstMatMap A(an->values.data() + i * m * k, m, k);
    ConstMatMap B(bn->values.data() + i * k * n, k, n);
    MatMap C(out.data() + i * m * n, m, n);
    C.noalias() = A * B;
  }
  auto backward_fn = [an, bn, g, m, k, n](detail::Node& self) {
    for (Index i = 0; i < g; ++i) {
      ConstMatMap G(self.grad.data() + i * m * n, m, n);
      if (an->requires_grad) {
        an->ensure_grad();
        MatMap GA(an->grad.data() + i * m * k, m, k);
        ConstMatMap B(bn->values.data() + i * k * n, k, n);
        GA.noalias() += G * B.transpose();
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        MatMap GB(bn->grad.data() + i * k * n, k, n);
        ConstMatMap A(an->values.data() + i * m * k, m, k);
        GB.noalias() += A.transpose() * G;
      }
    }
  };
  return Tensor::make_result({g, m, n}, std::move(out), {an, bn}, std::move(backward_fn));
}

Tensor transpose(const Tensor& x) {
  require(x.rank() == 2, "transpose: expected rank-2, got " + shape_str(x.shape()));
  return permute(x, {1, 0});
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  require(shape_numel(new_shape) == x.numel(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
  NodePtr xn = x.node();
  Eigen::ArrayXd out = xn->values;
  auto backward_fn = [xn](detail::Node& self) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      xn->grad += self.grad;
    }
  };
  return Tensor::make_result(std::move(new_shape), std::move(out), {xn}, std::move(backward_fn));
}

Tensor permute(const Tensor& x, const std::vector<int>& axes) {
  const Shape& in_shape = x.shape();
  const int r = x.rank();
  require(static_cast<int>(axes.size()) == r,
          "permute: axes count " + std::to_string(axes.size()) + " does not match rank of " +
              shape_str(in_shape));
  std::vector<bool> seen(r, false);
  for (int a : axes) {
    require(a >= 0 && a < r && !seen[a], "permute: invalid axis permutation");
    seen[a] = true;
  }
  Shape out_shape(r);
  for (int d = 0; d < r; ++d) out_shape[d] = in_shape[axes[d]];
  std::vector<int> inverse(r);
  for (int d = 0; d < r; ++d) inverse[axes[d]] = d;

  NodePtr xn = x.node();
  Eigen::ArrayXd out = permute_copy(xn->values, in_shape, axes);
  auto backward_fn = [xn, out_shape, inverse](detail::Node& self) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      xn->grad += permute_copy(self.grad, out_shape, inverse);
    }
  };
  return Tensor::make_result(out_shape, std::move(out), {xn}, std::move(backward_fn));
}

Tensor slice(const Tensor& x, int axis, Index start, Index length) {
  const Shape& s = x.shape();
  axis = normalize_axis(axis, x.rank(), s);
  require(length > 0 && start >= 0 && start + length <= s[axis],
          "slice: range [" + std::to_string(start) + "," + std::to_string(start + length) +
              ") out of bounds for axis " + std::to_string(axis) + " of " + shape_str(s));
  Index outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s[d];
  for (int d = axis + 1; d < x.rank(); ++d) inner *= s[d];
  const Index span = s[axis];

  Shape out_shape = s;
  out_shape[axis] = length;
  NodePtr xn = x.node();
  Eigen::ArrayXd out(outer * length * inner);
  for (Index o = 0; o < outer; ++o) {
    out.segment(o * length * inner, length * inner) =
        xn->values.segment((o * span + start) * inner, length * inner);
  }
  auto backward_fn = [xn, outer, inner, span, start, length](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (Index o = 0; o < outer; ++o) {
      xn->grad.segment((o * span + start) * inner, length * inner) +=
          self.grad.segment(o * length * inner, length * inner);
    }
  };
  return Tensor::make_result(std::move(out_shape), std::move(out), {xn}, std::move(backward_fn));
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  require(sa.size() == sb.size(),
          "concat: rank mismatch " + shape_str(sa) + " vs " + shape_str(sb));
  axis = normalize_axis(axis, a.rank(), sa);
  for (int d = 0; d < a.rank(); ++d) {
    require(d == axis || sa[d] == sb[d],
            "concat: shapes " + shape_str(sa) + " and " + shape_str(sb) +
                " differ outside axis " + std::to_string(axis));
  }
  Index outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= sa[d];
  for (int d = axis + 1; d < a.rank(); ++d) inner *= sa[d];
  const Index la = sa[axis], lb = sb[axis];

  Shape out_shape = sa;
  out_shape[axis] = la + lb;
  NodePtr an = a.node(), bn = b.node();
  Eigen::ArrayXd out(outer * (la + lb) * inner);
  for (Index o = 0; o < outer; ++o) {
    out.segment(o * (la + lb) * inner, la * inner) = an->values.segment(o * la * inner, la * inner);
    out.segment(o * (la + lb) * inner + la * inner, lb * inner) =
        bn->values.segment(o * lb * inner, lb * inner);
  }
  auto backward_fn = [an, bn, outer, inner, la, lb](detail::Node& self) {
    for (Index o = 0; o < outer; ++o) {
      if (an->requires_grad) {
        an->ensure_grad();
        an->grad.segment(o * la * inner, la * inner) +=
            self.grad.segment(o * (la + lb) * inner, la * inner);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        bn->grad.segment(o * lb * inner, lb * inner) +=
            self.grad.segment(o * (la + lb) * inner + la * inner, lb * inner);
      }
    }
  };
  return Tensor::make_result(std::move(out_shape), std::move(out), {an, bn},
                             std::move(backward_fn));
}

Tensor tile0(const Tensor& x, Index times) {
  require(times > 0, "tile0: repeat count must be positive");
  NodePtr xn = x.node();
  const Index n = x.numel();
  Shape out_shape;
  out_shape.push_back(times);
  for (Index d : x.shape()) out_shape.push_back(d);

  Eigen::ArrayXd out(times * n);
  for (Index t = 0; t < times; ++t) out.segment(t * n, n) = xn->values;
  auto backward_fn = [xn, times, n](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (Index t = 0; t < times; ++t) xn->grad += self.grad.segment(t * n, n);
  };
  return Tensor::make_result(std::move(out_shape), std::move(out), {xn}, std::move(backward_fn));
}

Tensor embedding(const Tensor& table, const std::vector<Index>& ids, Shape id_shape) {
  require(table.rank() >= 2, "embedding: table must have rank >= 2, got " +
                                 shape_str(table.shape()));
  require(static_cast<Index>(ids.size()) == shape_numel(id_shape),
          "embedding: id count does not match id shape " + shape_str(id_shape));
  const Index vocab = table.dim(0);
  const Index row = table.numel() / vocab;
  for (Index id : ids) {
    if (id < 0 || id >= vocab) {
      throw InvariantError("embedding: token id " + std::to_string(id) +
                           " out of range [0," + std::to_string(vocab) + ")");
    }
  }
  NodePtr tn = table.node();
  Shape out_shape = id_shape;
  for (std::size_t d = 1; d < table.shape().size(); ++d) out_shape.push_back(table.shape()[d]);

  Eigen::ArrayXd out(static_cast<Index>(ids.size()) * row);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out.segment(static_cast<Index>(i) * row, row) = tn->values.segment(ids[i] * row, row);
  }
  auto backward_fn = [tn, ids, row](detail::Node& self) {
    if (!tn->requires_grad) return;
    tn->ensure_grad();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      tn->grad.segment(ids[i] * row, row) += self.grad.segment(static_cast<Index>(i) * row, row);
    }
  };
  return Tensor::make_result(std::move(out_shape), std::move(out), {tn}, std::move(backward_fn));
}

Tensor take_per_row(const Tensor& x, const std::vector<Index>& idx, Index k) {
  require(x.rank() == 2, "take_per_row: expected rank-2 input, got " + shape_str(x.shape()));
  const Index rows = x.dim(0), cols = x.dim(1);
  require(k > 0 && static_cast<Index>(idx.size()) == rows * k,
          "take_per_row: index count " + std::to_string(idx.size()) + " does not match " +
              std::to_string(rows) + " rows x k=" + std::to_string(k));
  for (Index j : idx) {
    if (j < 0 || j >= cols) {
      throw InvariantError("take_per_row: column index " + std::to_string(j) +
                           " out of range [0," + std::to_string(cols) + ")");
    }
  }
  NodePtr xn = x.node();
  Eigen::ArrayXd out(rows * k);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < k; ++j) out[i * k + j] = xn->values[i * cols + idx[i * k + j]];
  }
  auto backward_fn = [xn, idx, rows, cols, k](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (Index i = 0; i < rows; ++i) {
      for (Index j = 0; j < k; ++j) xn->grad[i * cols + idx[i * k + j]] += self.grad[i * k + j];
    }
  };
  return Tensor::make_result({rows, k}, std::move(out), {xn}, std::move(backward_fn));
}

Tensor sum(const Tensor& x) {
  NodePtr xn = x.node();
  Eigen::ArrayXd out(1);
  out[0] = xn->values.sum();
  auto backward_fn = [xn](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    xn->grad += self.grad[0];
  };
  return Tensor::make_result({1}, std::move(out), {xn}, std::move(backward_fn));
}

Tensor mean(const Tensor& x) {
  NodePtr xn = x.node();
  const double inv_n = 1.0 / static_cast<double>(x.numel());
  Eigen::ArrayXd out(1);
  out[0] = xn->values.sum() * inv_n;
  auto backward_fn = [xn, inv_n](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    xn->grad += self.grad[0] * inv_n;
  };
  return Tensor::make_result({1}, std::move(out), {xn}, std::move(backward_fn));
}

Tensor gelu(const Tensor& x) {
  NodePtr xn = x.node();
  const Index n = x.numel();
  Eigen::ArrayXd out(n);
  for (Index i = 0; i < n; ++i) out[i] = xn->values[i] * norm_cdf(xn->values[i]);
  auto backward_fn = [xn, n](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (Index i = 0; i < n; ++i) {
      const double v = xn->values[i];
      xn->grad[i] += self.grad[i] * (norm_cdf(v) + v * norm_pdf(v));
    }
  };
  return Tensor::make_result(x.shape(), std::move(out), {xn}, std::move(backward_fn));
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (eps <= 0) throw InvariantError("layer_norm: eps must be positive");
  const Index d = x.dim(-1);
  require(gamma.shape() == Shape{d} && beta.shape() == Shape{d},
          "layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()) +
              " must both be [" + std::to_string(d) + "] for input " + shape_str(x.shape()));
  const Index rows = x.numel() / d;
  NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node();

  Eigen::ArrayXd out(rows * d);
  Eigen::ArrayXd xhat(rows * d);
  Eigen::ArrayXd inv_std(rows);
  for (Index r = 0; r < rows; ++r) {
    auto seg = xn->values.segment(r * d, d);
    const double mu = seg.mean();
    const double var = (seg - mu).square().sum() / static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    xhat.segment(r * d, d) = (seg - mu) * inv;
    out.segment(r * d, d) = gn->values * xhat.segment(r * d, d) + bn->values;
  }
  auto backward_fn = [xn, gn, bn, rows, d, xhat = std::move(xhat),
                      inv_std = std::move(inv_std)](detail::Node& self) {
    for (Index r = 0; r < rows; ++r) {
      auto g = self.grad.segment(r * d, d);
      auto xh = xhat.segment(r * d, d);
      if (gn->requires_grad) {
        gn->ensure_grad();
        gn->grad += g * xh;
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        bn->grad += g;
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        const Eigen::ArrayXd gg = g * gn->values;
        const double m1 = gg.mean();
        const double m2 = (gg * xh).mean();
        xn->grad.segment(r * d, d) += inv_std[r] * (gg - m1 - xh * m2);
      }
    }
  };
  return Tensor::make_result(x.shape(), std::move(out), {xn, gn, bn}, std::move(backward_fn));
}

Tensor softmax(const Tensor& x) {
  const Index k = x.dim(-1);
  const Index rows = x.numel() / k;
  NodePtr xn = x.node();
  Eigen::ArrayXd out(rows * k);
  for (Index r = 0; r < rows; ++r) {
    auto seg = xn->values.segment(r * k, k);
    Eigen::ArrayXd e = (seg - seg.maxCoeff()).exp();
    out.segment(r * k, k) = e / e.sum();
  }
  auto backward_fn = [xn, rows, k](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (Index r = 0; r < rows; ++r) {
      auto y = self.values.segment(r * k, k);
      auto g = self.grad.segment(r * k, k);
      const double dot = (g * y).sum();
      xn->grad.segment(r * k, k) += y * (g - dot);
    }
  };
  return Tensor::make_result(x.shape(), std::move(out), {xn}, std::move(backward_fn));
}

Tensor log_softmax(const Tensor& x) {
  const Index k = x.dim(-1);
  const Index rows = x.numel() / k;
  NodePtr xn = x.node();
  Eigen::ArrayXd out(rows * k);
  for (Index r = 0; r < rows; ++r) {
    auto seg = xn->values.segment(r * k, k);
    const double mx = seg.maxCoeff();
    const double lse = mx + std::log((seg - mx).exp().sum());
    out.segment(r * k, k) = seg - lse;
  }
  auto backward_fn = [xn, rows, k](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (Index r = 0; r < rows; ++r) {
      auto logp = self.values.segment(r * k, k);
      auto g = self.grad.segment(r * k, k);
      const double gsum = g.sum();
      xn->grad.segment(r * k, k) += g - logp.exp() * gsum;
    }
  };
  return Tensor::make_result(x.shape(), std::move(out), {xn}, std::move(backward_fn));
}

Tensor conv2d_depthwise(const Tensor& x, const Tensor& k) {
  require(x.rank() == 4, "conv2d_depthwise: input must be [B,C,H,W], got " + shape_str(x.shape()));
  require(k.rank() == 3 && k.dim(1) == 3 && k.dim(2) == 3,
          "conv2d_depthwise: kernel must be [C,3,3], got " + shape_str(k.shape()));
  require(x.dim(1) == k.dim(0),
          "conv2d_depthwise: channel mismatch, input " + shape_str(x.shape()) + " vs kernel " +
              shape_str(k.shape()));
  const Index bsz = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  NodePtr xn = x.node(), kn = k.node();

  Eigen::ArrayXd out = Eigen::ArrayXd::Zero(x.numel());
  const double* xp = xn->values.data();
  const double* kp = kn->values.data();
  double* op = out.data();
  for (Index b = 0; b < bsz; ++b) {
    for (Index c = 0; c < ch; ++c) {
      const double* plane = xp + (b * ch + c) * h * w;
      const double* kc = kp + c * 9;
      double* oplane = op + (b * ch + c) * h * w;
      for (Index i = 0; i < h; ++i) {
        for (Index j = 0; j < w; ++j) {
          double acc = 0.0;
          for (Index u = -1; u <= 1; ++u) {
            const Index ii = i + u;
            if (ii < 0 || ii >= h) continue;
            for (Index v = -1; v <= 1; ++v) {
              const Index jj = j + v;
              if (jj < 0 || jj >= w) continue;
              acc += plane[ii * w + jj] * kc[(u + 1) * 3 + (v + 1)];
            }
          }
          oplane[i * w + j] = acc;
        }
      }
    }
  }
  auto backward_fn = [xn, kn, bsz, ch, h, w](detail::Node& self) {
    const double* gp = self.grad.data();
    if (xn->requires_grad) xn->ensure_grad();
    if (kn->requires_grad) kn->ensure_grad();
    for (Index b = 0; b < bsz; ++b) {
      for (Index c = 0; c < ch; ++c) {
        const double* gplane = gp + (b * ch + c) * h * w;
        const double* plane = xn->values.data() + (b * ch + c) * h * w;
        const double* kc = kn->values.data() + c * 9;
        for (Index i = 0; i < h; ++i) {
          for (Index j = 0; j < w; ++j) {
            const double g = gplane[i * w + j];
            for (Index u = -1; u <= 1; ++u) {
              const Index ii = i + u;
              if (ii < 0 || ii >= h) continue;
              for (Index v = -1; v <= 1; ++v) {
                const Index jj = j + v;
                if (jj < 0 || jj >= w) continue;
                if (xn->requires_grad) {
                  xn->grad[(b * ch + c) * h * w + ii * w + jj] += g * kc[(u + 1) * 3 + (v + 1)];
                }
                if (kn->requires_grad) {
                  kn->grad[c * 9 + (u + 1) * 3 + (v + 1)] += g * plane[ii * w + jj];
                }
              }
            }
          }
        }
      }
    }
  };
  return Tensor::make_result(x.shape(), std::move(out), {xn, kn}, std::move(backward_fn));
}

Tensor conv2d_pointwise(const Tensor& x, const Tensor& w) {
  require(x.rank() == 4, "conv2d_pointwise: input must be [B,C,H,W], got " + shape_str(x.shape()));
  require(w.rank() == 2, "conv2d_pointwise: weights must be [C_out,C_in], got " +
                             shape_str(w.shape()));
  require(x.dim(1) == w.dim(1),
          "conv2d_pointwise: C_in mismatch, input " + shape_str(x.shape()) + " vs weights " +
              shape_str(w.shape()));
  const Index bsz = x.dim(0), cin = x.dim(1), h = x.dim(2), ww = x.dim(3), cout = w.dim(0);
  const Index hw = h * ww;
  NodePtr xn = x.node(), wn = w.node();

  Eigen::ArrayXd out(bsz * cout * hw);
  {
    ConstMatMap W(wn->values.data(), cout, cin);
    for (Index b = 0; b < bsz; ++b) {
      ConstMatMap X(xn->values.data() + b * cin * hw, cin, hw);
      MatMap O(out.data() + b * cout * hw, cout, hw);
      O.noalias() = W * X;
    }
  }
  auto backward_fn = [xn, wn, bsz, cin, cout, hw](detail::Node& self) {
    ConstMatMap W(wn->values.data(), cout, cin);
    if (xn->requires_grad) xn->ensure_grad();
    if (wn->requires_grad) wn->ensure_grad();
    for (Index b = 0; b < bsz; ++b) {
      ConstMatMap G(self.grad.data() + b * cout * hw, cout, hw);
      if (xn->requires_grad) {
        MatMap GX(xn->grad.data() + b * cin * hw, cin, hw);
        GX.noalias() += W.transpose() * G;
      }
      if (wn->requires_grad) {
        ConstMatMap X(xn->values.data() + b * cin * hw, cin, hw);
        MatMap GW(wn->grad.data(), cout, cin);
        GW.noalias() += G * X.transpose();
      }
    }
  };
  return Tensor::make_result({bsz, cout, h, ww}, std::move(out), {xn, wn},
                             std::move(backward_fn));
}

Tensor l2_normalize(const Tensor& x) {
  const Index d = x.dim(-1);
  const Index rows = x.numel() / d;
  NodePtr xn = x.node();
  Eigen::ArrayXd out(rows * d);
  Eigen::ArrayXd inv_norm(rows);
  for (Index r = 0; r < rows; ++r) {
    auto seg = xn->values.segment(r * d, d);
    const double n = std::sqrt(seg.square().sum());
    if (n == 0.0) throw NumericError("l2_normalize: zero-norm row " + std::to_string(r));
    inv_norm[r] = 1.0 / n;
    out.segment(r * d, d) = seg * inv_norm[r];
  }
  auto backward_fn = [xn, rows, d, inv_norm = std::move(inv_norm)](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (Index r = 0; r < rows; ++r) {
      auto y = self.values.segment(r * d, d);
      auto g = self.grad.segment(r * d, d);
      const double dot = (g * y).sum();
      xn->grad.segment(r * d, d) += inv_norm[r] * (g - y * dot);
    }
  };
  return Tensor::make_result(x.shape(), std::move(out), {xn}, std::move(backward_fn));
}

}  // namespace heba
