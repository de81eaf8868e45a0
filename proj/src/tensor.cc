#include "scmoe/tensor.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace scmoe {

namespace {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor extent must be positive");
    n *= d;
  }
  return n;
}

std::string shape_to_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

TensorImplPtr new_impl(std::vector<int> shape) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  impl->shape = std::move(shape);
  return impl;
}

void require_2d(const Tensor& t, const char* op) {
  if (t.ndim() != 2)
    throw std::invalid_argument(std::string(op) + ": expected 2-D tensor, got " + t.shape_str());
}

bool any_requires_grad(const std::vector<TensorImplPtr>& parents) {
  for (const auto& p : parents)
    if (p->requires_grad) return true;
  return false;
}

}  // namespace

// Node factory: links parents and marks requires_grad if any parent carries
// gradients. The caller fills data and installs backward_fn.
Tensor make_node(std::vector<int> shape, std::vector<TensorImplPtr> parents) {
  auto impl = new_impl(std::move(shape));
  if (any_requires_grad(parents)) {
    impl->requires_grad = true;
    impl->parents = std::move(parents);
  }
  return Tensor(std::move(impl));
}

// ---- Tensor basics ----

Tensor Tensor::zeros(const std::vector<int>& shape, bool requires_grad) {
  auto impl = new_impl(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(const std::vector<int>& shape, double value, bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

Tensor Tensor::from(const std::vector<int>& shape, std::vector<double> data, bool requires_grad) {
  if (static_cast<int64_t>(data.size()) != shape_numel(shape))
    throw std::invalid_argument("Tensor::from: data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_to_str(shape));
  Tensor t = zeros(shape, requires_grad);
  t.data() = std::move(data);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

Tensor Tensor::rand_uniform(const std::vector<int>& shape, double lo, double hi, Rng& rng,
                            bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Tensor Tensor::rand_normal(const std::vector<int>& shape, double mean, double stddev, Rng& rng,
                           bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  for (double& v : t.data()) v = rng.normal(mean, stddev);
  return t;
}

const std::vector<int>& Tensor::shape() const { return impl_->shape; }
int Tensor::ndim() const { return static_cast<int>(impl_->shape.size()); }
int Tensor::size(int axis) const { return impl_->shape.at(axis); }
int64_t Tensor::numel() const { return impl_->numel(); }
std::string Tensor::shape_str() const { return shape_to_str(impl_->shape); }

std::vector<double>& Tensor::data() { return impl_->data; }
const std::vector<double>& Tensor::data() const { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("Tensor::item: tensor is not scalar, shape " + shape_str());
  return impl_->data[0];
}

double Tensor::at(int i) const { return impl_->data.at(i); }

double Tensor::at(int i, int j) const {
  require_2d(*this, "at");
  return impl_->data[static_cast<size_t>(i) * size(1) + j];
}

void Tensor::set(int i, int j, double v) {
  require_2d(*this, "set");
  impl_->data[static_cast<size_t>(i) * size(1) + j] = v;
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool rg) { impl_->requires_grad = rg; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::vector<double>& Tensor::grad() {
  impl_->ensure_grad();
  return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;  // copy of current values, no history
  impl->requires_grad = false;
  return Tensor(impl);
}

Tensor Tensor::clone() const {
  Tensor t = zeros(shape(), impl_->requires_grad);
  t.data() = impl_->data;
  return t;
}

// ---- elementwise ----

namespace {

enum class EwKind { kAdd, kSub, kMul, kDiv };

Tensor elementwise(EwKind kind, const Tensor& a, const Tensor& b, const char* name) {
  const bool a_scalar = a.numel() == 1;
  const bool b_scalar = b.numel() == 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape())
    throw std::invalid_argument(std::string(name) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  const std::vector<int>& out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
  Tensor out = make_node(out_shape, {a.impl_ptr(), b.impl_ptr()});

  const auto& ad = a.data();
  const auto& bd = b.data();
  auto& od = out.data();
  const size_t n = od.size();
  for (size_t i = 0; i < n; ++i) {
    const double x = ad[a_scalar ? 0 : i];
    const double y = bd[b_scalar ? 0 : i];
    switch (kind) {
      case EwKind::kAdd: od[i] = x + y; break;
      case EwKind::kSub: od[i] = x - y; break;
      case EwKind::kMul: od[i] = x * y; break;
      case EwKind::kDiv: od[i] = x / y; break;
    }
  }

  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    TensorImpl* ai = a.impl();
    TensorImpl* bi = b.impl();
    out.impl()->backward_fn = [kind, oi, ai, bi, a_scalar, b_scalar]() {
      const auto& g = oi->grad;
      const size_t n = g.size();
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (size_t i = 0; i < n; ++i) {
          const double x = ai->data[a_scalar ? 0 : i];
          const double y = bi->data[b_scalar ? 0 : i];
          double d = 0;
          switch (kind) {
            case EwKind::kAdd: d = g[i]; break;
            case EwKind::kSub: d = g[i]; break;
            case EwKind::kMul: d = g[i] * y; break;
            case EwKind::kDiv: d = g[i] / y; break;
          }
          (void)x;
          ai->grad[a_scalar ? 0 : i] += d;
        }
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (size_t i = 0; i < n; ++i) {
          const double x = ai->data[a_scalar ? 0 : i];
          const double y = bi->data[b_scalar ? 0 : i];
          double d = 0;
          switch (kind) {
            case EwKind::kAdd: d = g[i]; break;
            case EwKind::kSub: d = -g[i]; break;
            case EwKind::kMul: d = g[i] * x; break;
            case EwKind::kDiv: d = -g[i] * x / (y * y); break;
          }
          bi->grad[b_scalar ? 0 : i] += d;
        }
      }
    };
  }
  return out;
}

Tensor unary(const Tensor& a, const std::function<double(double)>& f,
             const std::function<double(double, double)>& dfdx_from_x_y) {
  Tensor out = make_node(a.shape(), {a.impl_ptr()});
  const auto& ad = a.data();
  auto& od = out.data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = f(ad[i]);
  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    TensorImpl* ai = a.impl();
    out.impl()->backward_fn = [oi, ai, dfdx_from_x_y]() {
      ai->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i)
        ai->grad[i] += oi->grad[i] * dfdx_from_x_y(ai->data[i], oi->data[i]);
    };
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(EwKind::kAdd, a, b, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(EwKind::kSub, a, b, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(EwKind::kMul, a, b, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return elementwise(EwKind::kDiv, a, b, "div"); }

Tensor add(const Tensor& a, double c) { return add(a, Tensor::scalar(c)); }
Tensor mul(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }
Tensor neg(const Tensor& a) { return mul(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor swish(const Tensor& a) {
  return unary(a,
               [](double x) { return x / (1.0 + std::exp(-x)); },
               [](double x, double) {
                 const double s = 1.0 / (1.0 + std::exp(-x));
                 return s * (1.0 + x * (1.0 - s));
               });
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const int m = a.size(0), k = a.size(1), k2 = b.size(0), n = b.size(1);
  if (k != k2)
    throw std::invalid_argument("matmul: inner extents differ, " + a.shape_str() + " vs " +
                                b.shape_str());
  Tensor out = make_node({m, n}, {a.impl_ptr(), b.impl_ptr()});
  const double* A = a.data().data();
  const double* B = b.data().data();
  double* C = out.data().data();
  for (int i = 0; i < m; ++i) {
    double* crow = C + static_cast<size_t>(i) * n;
    const double* arow = A + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = B + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    TensorImpl* ai = a.impl();
    TensorImpl* bi = b.impl();
    out.impl()->backward_fn = [oi, ai, bi, m, k, n]() {
      const double* G = oi->grad.data();
      if (ai->requires_grad) {
        ai->ensure_grad();
        // dA = G * B^T
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            double acc = 0;
            const double* grow = G + static_cast<size_t>(i) * n;
            const double* brow = bi->data.data() + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ai->grad[static_cast<size_t>(i) * k + p] += acc;
          }
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        // dB = A^T * G
        for (int i = 0; i < m; ++i) {
          const double* arow = ai->data.data() + static_cast<size_t>(i) * k;
          const double* grow = G + static_cast<size_t>(i) * n;
          for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            double* brow = bi->grad.data() + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
        }
      }
    };
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const int r = a.size(0), c = a.size(1);
  Tensor out = make_node({c, r}, {a.impl_ptr()});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      out.data()[static_cast<size_t>(j) * r + i] = a.data()[static_cast<size_t>(i) * c + j];
  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    TensorImpl* ai = a.impl();
    out.impl()->backward_fn = [oi, ai, r, c]() {
      ai->ensure_grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          ai->grad[static_cast<size_t>(i) * c + j] += oi->grad[static_cast<size_t>(j) * r + i];
    };
  }
  return out;
}

// ---- structural ----

Tensor rows_gather(const Tensor& a, const std::vector<int>& row_ids) {
  require_2d(a, "rows_gather");
  const int c = a.size(1);
  const int n = static_cast<int>(row_ids.size());
  for (int id : row_ids)
    if (id < 0 || id >= a.size(0))
      throw std::out_of_range("rows_gather: row index " + std::to_string(id) + " out of " +
                              a.shape_str());
  Tensor out = make_node({n, c}, {a.impl_ptr()});
  for (int i = 0; i < n; ++i)
    std::copy_n(a.data().begin() + static_cast<size_t>(row_ids[i]) * c, c,
                out.data().begin() + static_cast<size_t>(i) * c);
  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    TensorImpl* ai = a.impl();
    out.impl()->backward_fn = [oi, ai, row_ids, c]() {
      ai->ensure_grad();
      for (size_t i = 0; i < row_ids.size(); ++i)
        for (int j = 0; j < c; ++j)
          ai->grad[static_cast<size_t>(row_ids[i]) * c + j] += oi->grad[i * c + j];
    };
  }
  return out;
}

Tensor rows_scatter(const Tensor& rows, const std::vector<int>& row_ids, int total_rows) {
  require_2d(rows, "rows_scatter");
  if (rows.size(0) != static_cast<int>(row_ids.size()))
    throw std::invalid_argument("rows_scatter: row count mismatch");
  const int c = rows.size(1);
  for (int id : row_ids)
    if (id < 0 || id >= total_rows) throw std::out_of_range("rows_scatter: row index out of range");
  Tensor out = make_node({total_rows, c}, {rows.impl_ptr()});
  for (size_t i = 0; i < row_ids.size(); ++i)
    for (int j = 0; j < c; ++j)
      out.data()[static_cast<size_t>(row_ids[i]) * c + j] += rows.data()[i * c + j];
  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    TensorImpl* ri = rows.impl();
    out.impl()->backward_fn = [oi, ri, row_ids, c]() {
      ri->ensure_grad();
      for (size_t i = 0; i < row_ids.size(); ++i)
        for (int j = 0; j < c; ++j)
          ri->grad[i * c + j] += oi->grad[static_cast<size_t>(row_ids[i]) * c + j];
    };
  }
  return out;
}

Tensor select_per_row(const Tensor& a, const std::vector<int>& col_ids) {
  require_2d(a, "select_per_row");
  const int n = a.size(0), c = a.size(1);
  if (static_cast<int>(col_ids.size()) != n)
    throw std::invalid_argument("select_per_row: need one column index per row");
  for (int id : col_ids)
    if (id < 0 || id >= c) throw std::out_of_range("select_per_row: column index out of range");
  Tensor out = make_node({n, 1}, {a.impl_ptr()});
  for (int i = 0; i < n; ++i) out.data()[i] = a.data()[static_cast<size_t>(i) * c + col_ids[i]];
  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    TensorImpl* ai = a.impl();
    out.impl()->backward_fn = [oi, ai, col_ids, c]() {
      ai->ensure_grad();
      for (size_t i = 0; i < col_ids.size(); ++i)
        ai->grad[i * c + col_ids[i]] += oi->grad[i];
    };
  }
  return out;
}

Tensor scale_rows(const Tensor& a, const Tensor& scale_col) {
  require_2d(a, "scale_rows");
  if (scale_col.ndim() != 2 || scale_col.size(1) != 1 || scale_col.size(0) != a.size(0))
    throw std::invalid_argument("scale_rows: scale must be [N x 1] matching rows, got " +
                                scale_col.shape_str() + " for " + a.shape_str());
  const int n = a.size(0), c = a.size(1);
  Tensor out = make_node({n, c}, {a.impl_ptr(), scale_col.impl_ptr()});
  for (int i = 0; i < n; ++i) {
    const double s = scale_col.data()[i];
    for (int j = 0; j < c; ++j)
      out.data()[static_cast<size_t>(i) * c + j] = a.data()[static_cast<size_t>(i) * c + j] * s;
  }
  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    TensorImpl* ai = a.impl();
    TensorImpl* si = scale_col.impl();
    out.impl()->backward_fn = [oi, ai, si, n, c]() {
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < c; ++j)
            ai->grad[static_cast<size_t>(i) * c + j] +=
                oi->grad[static_cast<size_t>(i) * c + j] * si->data[i];
      }
      if (si->requires_grad) {
        si->ensure_grad();
        for (int i = 0; i < n; ++i) {
          double acc = 0;
          for (int j = 0; j < c; ++j)
            acc += oi->grad[static_cast<size_t>(i) * c + j] * ai->data[static_cast<size_t>(i) * c + j];
          si->grad[i] += acc;
        }
      }
    };
  }
  return out;
}

Tensor add_row_vector(const Tensor& a, const Tensor& bias) {
  require_2d(a, "add_row_vector");
  if (bias.ndim() != 1 || bias.size(0) != a.size(1))
    throw std::invalid_argument("add_row_vector: bias " + bias.shape_str() +
                                " does not match last extent of " + a.shape_str());
  const int n = a.size(0), c = a.size(1);
  Tensor out = make_node({n, c}, {a.impl_ptr(), bias.impl_ptr()});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      out.data()[static_cast<size_t>(i) * c + j] = a.data()[static_cast<size_t>(i) * c + j] + bias.data()[j];
  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    TensorImpl* ai = a.impl();
    TensorImpl* bi = bias.impl();
    out.impl()->backward_fn = [oi, ai, bi, n, c]() {
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < c; ++j) bi->grad[j] += oi->grad[static_cast<size_t>(i) * c + j];
      }
    };
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int col0, int ncols) {
  require_2d(a, "slice_cols");
  if (col0 < 0 || ncols <= 0 || col0 + ncols > a.size(1))
    throw std::out_of_range("slice_cols: range [" + std::to_string(col0) + ", " +
                            std::to_string(col0 + ncols) + ") out of " + a.shape_str());
  const int n = a.size(0), c = a.size(1);
  Tensor out = make_node({n, ncols}, {a.impl_ptr()});
  for (int i = 0; i < n; ++i)
    std::copy_n(a.data().begin() + static_cast<size_t>(i) * c + col0, ncols,
                out.data().begin() + static_cast<size_t>(i) * ncols);
  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    TensorImpl* ai = a.impl();
    out.impl()->backward_fn = [oi, ai, n, c, col0, ncols]() {
      ai->ensure_grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < ncols; ++j)
          ai->grad[static_cast<size_t>(i) * c + col0 + j] += oi->grad[static_cast<size_t>(i) * ncols + j];
    };
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const int n = parts[0].size(0);
  int c = 0;
  std::vector<TensorImplPtr> parents;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.size(0) != n) throw std::invalid_argument("concat_cols: row count mismatch");
    c += p.size(1);
    parents.push_back(p.impl_ptr());
  }
  Tensor out = make_node({n, c}, parents);
  int off = 0;
  for (const auto& p : parts) {
    const int pc = p.size(1);
    for (int i = 0; i < n; ++i)
      std::copy_n(p.data().begin() + static_cast<size_t>(i) * pc, pc,
                  out.data().begin() + static_cast<size_t>(i) * c + off);
    off += pc;
  }
  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    std::vector<TensorImpl*> pis;
    std::vector<int> widths;
    for (const auto& p : parts) {
      pis.push_back(p.impl());
      widths.push_back(p.size(1));
    }
    out.impl()->backward_fn = [oi, pis, widths, n, c]() {
      int off = 0;
      for (size_t k = 0; k < pis.size(); ++k) {
        if (pis[k]->requires_grad) {
          pis[k]->ensure_grad();
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < widths[k]; ++j)
              pis[k]->grad[static_cast<size_t>(i) * widths[k] + j] +=
                  oi->grad[static_cast<size_t>(i) * c + off + j];
        }
        off += widths[k];
      }
    };
  }
  return out;
}

// ---- normalization ----

namespace {

struct AxisView {
  int64_t outer, len, inner;
};

AxisView axis_view(const Tensor& t, int axis) {
  int nd = t.ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd)
    throw std::invalid_argument("softmax: axis out of range for " + t.shape_str());
  AxisView v{1, t.size(axis), 1};
  for (int i = 0; i < axis; ++i) v.outer *= t.size(i);
  for (int i = axis + 1; i < nd; ++i) v.inner *= t.size(i);
  return v;
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
  const AxisView v = axis_view(a, axis);
  Tensor out = make_node(a.shape(), {a.impl_ptr()});
  const auto& x = a.data();
  auto& y = out.data();
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t in = 0; in < v.inner; ++in) {
      const int64_t base = o * v.len * v.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t l = 0; l < v.len; ++l) mx = std::max(mx, x[base + l * v.inner]);
      double z = 0;
      for (int64_t l = 0; l < v.len; ++l) {
        const double e = std::exp(x[base + l * v.inner] - mx);
        y[base + l * v.inner] = e;
        z += e;
      }
      for (int64_t l = 0; l < v.len; ++l) y[base + l * v.inner] /= z;
    }
  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    TensorImpl* ai = a.impl();
    out.impl()->backward_fn = [oi, ai, v]() {
      ai->ensure_grad();
      for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t in = 0; in < v.inner; ++in) {
          const int64_t base = o * v.len * v.inner + in;
          double dot = 0;
          for (int64_t l = 0; l < v.len; ++l)
            dot += oi->grad[base + l * v.inner] * oi->data[base + l * v.inner];
          for (int64_t l = 0; l < v.len; ++l)
            ai->grad[base + l * v.inner] +=
                oi->data[base + l * v.inner] * (oi->grad[base + l * v.inner] - dot);
        }
    };
  }
  return out;
}

Tensor log_softmax(const Tensor& a, int axis) {
  const AxisView v = axis_view(a, axis);
  Tensor out = make_node(a.shape(), {a.impl_ptr()});
  const auto& x = a.data();
  auto& y = out.data();
  for (int64_t o = 0; o < v.outer; ++o)
    for (int64_t in = 0; in < v.inner; ++in) {
      const int64_t base = o * v.len * v.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (int64_t l = 0; l < v.len; ++l) mx = std::max(mx, x[base + l * v.inner]);
      double z = 0;
      for (int64_t l = 0; l < v.len; ++l) z += std::exp(x[base + l * v.inner] - mx);
      const double lz = mx + std::log(z);
      for (int64_t l = 0; l < v.len; ++l) y[base + l * v.inner] = x[base + l * v.inner] - lz;
    }
  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    TensorImpl* ai = a.impl();
    out.impl()->backward_fn = [oi, ai, v]() {
      ai->ensure_grad();
      for (int64_t o = 0; o < v.outer; ++o)
        for (int64_t in = 0; in < v.inner; ++in) {
          const int64_t base = o * v.len * v.inner + in;
          double gsum = 0;
          for (int64_t l = 0; l < v.len; ++l) gsum += oi->grad[base + l * v.inner];
          for (int64_t l = 0; l < v.len; ++l)
            ai->grad[base + l * v.inner] +=
                oi->grad[base + l * v.inner] - std::exp(oi->data[base + l * v.inner]) * gsum;
        }
    };
  }
  return out;
}

Tensor masked_softmax(const Tensor& scores, const Mask& mask) {
  require_2d(scores, "masked_softmax");
  const int n = scores.size(0), c = scores.size(1);
  if (mask.rows != n || mask.cols != c)
    throw std::invalid_argument("masked_softmax: mask " + std::to_string(mask.rows) + "x" +
                                std::to_string(mask.cols) + " does not match scores " +
                                scores.shape_str());
  Tensor out = make_node({n, c}, {scores.impl_ptr()});
  const auto& x = scores.data();
  auto& y = out.data();
  for (int i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < c; ++j)
      if (mask.at(i, j)) mx = std::max(mx, x[static_cast<size_t>(i) * c + j]);
    if (mx == -std::numeric_limits<double>::infinity())
      throw std::runtime_error("masked_softmax: query row " + std::to_string(i) +
                               " has no visible positions");
    double z = 0;
    for (int j = 0; j < c; ++j) {
      if (mask.at(i, j)) {
        const double e = std::exp(x[static_cast<size_t>(i) * c + j] - mx);
        y[static_cast<size_t>(i) * c + j] = e;
        z += e;
      } else {
        y[static_cast<size_t>(i) * c + j] = 0.0;
      }
    }
    for (int j = 0; j < c; ++j) y[static_cast<size_t>(i) * c + j] /= z;
  }
  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    TensorImpl* ai = scores.impl();
    out.impl()->backward_fn = [oi, ai, n, c]() {
      ai->ensure_grad();
      for (int i = 0; i < n; ++i) {
        double dot = 0;
        for (int j = 0; j < c; ++j)
          dot += oi->grad[static_cast<size_t>(i) * c + j] * oi->data[static_cast<size_t>(i) * c + j];
        for (int j = 0; j < c; ++j)
          ai->grad[static_cast<size_t>(i) * c + j] +=
              oi->data[static_cast<size_t>(i) * c + j] *
              (oi->grad[static_cast<size_t>(i) * c + j] - dot);
      }
    };
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const int nd = x.ndim();
  const int d = x.size(nd - 1);
  if (gamma.ndim() != 1 || gamma.size(0) != d || beta.ndim() != 1 || beta.size(0) != d)
    throw std::invalid_argument("layer_norm: gamma/beta " + gamma.shape_str() + "/" +
                                beta.shape_str() + " do not match last extent of " + x.shape_str());
  const int64_t rows = x.numel() / d;
  Tensor out = make_node(x.shape(), {x.impl_ptr(), gamma.impl_ptr(), beta.impl_ptr()});
  // cached per-row statistics for the backward pass
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto& xd = x.data();
  auto& yd = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const int64_t base = r * d;
    double mu = 0;
    for (int j = 0; j < d; ++j) mu += xd[base + j];
    mu /= d;
    double var = 0;
    for (int j = 0; j < d; ++j) {
      const double c = xd[base + j] - mu;
      var += c * c;
    }
    var /= d;
    const double istd = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = istd;
    for (int j = 0; j < d; ++j) {
      const double xh = (xd[base + j] - mu) * istd;
      (*xhat)[base + j] = xh;
      yd[base + j] = gamma.data()[j] * xh + beta.data()[j];
    }
  }
  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    TensorImpl* xi = x.impl();
    TensorImpl* gi = gamma.impl();
    TensorImpl* bi = beta.impl();
    out.impl()->backward_fn = [oi, xi, gi, bi, xhat, inv_std, rows, d]() {
      for (int64_t r = 0; r < rows; ++r) {
        const int64_t base = r * d;
        if (bi->requires_grad) {
          bi->ensure_grad();
          for (int j = 0; j < d; ++j) bi->grad[j] += oi->grad[base + j];
        }
        if (gi->requires_grad) {
          gi->ensure_grad();
          for (int j = 0; j < d; ++j) gi->grad[j] += oi->grad[base + j] * (*xhat)[base + j];
        }
        if (xi->requires_grad) {
          xi->ensure_grad();
          double mean_dy = 0, mean_dy_xh = 0;
          for (int j = 0; j < d; ++j) {
            const double dxh = oi->grad[base + j] * gi->data[j];
            mean_dy += dxh;
            mean_dy_xh += dxh * (*xhat)[base + j];
          }
          mean_dy /= d;
          mean_dy_xh /= d;
          for (int j = 0; j < d; ++j) {
            const double dxh = oi->grad[base + j] * gi->data[j];
            xi->grad[base + j] +=
                (*inv_std)[r] * (dxh - mean_dy - (*xhat)[base + j] * mean_dy_xh);
          }
        }
      }
    };
  }
  return out;
}

// ---- gated / conv ----

Tensor glu(const Tensor& x) {
  require_2d(x, "glu");
  const int c = x.size(1);
  if (c % 2 != 0) throw std::invalid_argument("glu: last extent must be even, got " + x.shape_str());
  Tensor a = slice_cols(x, 0, c / 2);
  Tensor b = slice_cols(x, c / 2, c / 2);
  return mul(a, sigmoid(b));
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& kernel, PadMode mode) {
  require_2d(x, "depthwise_conv1d");
  require_2d(kernel, "depthwise_conv1d");
  const int t = x.size(0), d = x.size(1), k = kernel.size(0);
  if (kernel.size(1) != d)
    throw std::invalid_argument("depthwise_conv1d: kernel channels " + kernel.shape_str() +
                                " do not match input " + x.shape_str());
  if (mode == PadMode::kSame && k % 2 == 0)
    throw std::invalid_argument("depthwise_conv1d: same padding requires odd kernel size");
  // Shift of input index relative to output index for tap 0.
  const int shift = (mode == PadMode::kCausal) ? (k - 1) : (k - 1) / 2;
  Tensor out = make_node({t, d}, {x.impl_ptr(), kernel.impl_ptr()});
  for (int i = 0; i < t; ++i)
    for (int kk = 0; kk < k; ++kk) {
      const int src = i - shift + kk;
      if (src < 0 || src >= t) continue;
      for (int j = 0; j < d; ++j)
        out.data()[static_cast<size_t>(i) * d + j] +=
            x.data()[static_cast<size_t>(src) * d + j] * kernel.data()[static_cast<size_t>(kk) * d + j];
    }
  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    TensorImpl* xi = x.impl();
    TensorImpl* ki = kernel.impl();
    out.impl()->backward_fn = [oi, xi, ki, t, d, k, shift]() {
      for (int i = 0; i < t; ++i)
        for (int kk = 0; kk < k; ++kk) {
          const int src = i - shift + kk;
          if (src < 0 || src >= t) continue;
          for (int j = 0; j < d; ++j) {
            const double g = oi->grad[static_cast<size_t>(i) * d + j];
            if (xi->requires_grad) {
              xi->ensure_grad();
              xi->grad[static_cast<size_t>(src) * d + j] += g * ki->data[static_cast<size_t>(kk) * d + j];
            }
            if (ki->requires_grad) {
              ki->ensure_grad();
              ki->grad[static_cast<size_t>(kk) * d + j] += g * xi->data[static_cast<size_t>(src) * d + j];
            }
          }
        }
    };
  }
  return out;
}

Tensor conv1d_strided(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride) {
  require_2d(x, "conv1d_strided");
  if (weight.ndim() != 3)
    throw std::invalid_argument("conv1d_strided: weight must be [K x Cin x Cout], got " +
                                weight.shape_str());
  const int t = x.size(0), cin = x.size(1);
  const int k = weight.size(0), wcin = weight.size(1), cout = weight.size(2);
  if (wcin != cin)
    throw std::invalid_argument("conv1d_strided: input channels mismatch, " + x.shape_str() +
                                " vs " + weight.shape_str());
  if (bias.ndim() != 1 || bias.size(0) != cout)
    throw std::invalid_argument("conv1d_strided: bias shape mismatch");
  if (stride < 1) throw std::invalid_argument("conv1d_strided: stride must be >= 1");
  // Causal left pad of K-1 frames; rightmost tap of output frame t' is input t'*stride.
  const int tout = (t - 1) / stride + 1;
  Tensor out = make_node({tout, cout}, {x.impl_ptr(), weight.impl_ptr(), bias.impl_ptr()});
  for (int i = 0; i < tout; ++i) {
    for (int co = 0; co < cout; ++co)
      out.data()[static_cast<size_t>(i) * cout + co] = bias.data()[co];
    for (int kk = 0; kk < k; ++kk) {
      const int src = i * stride - (k - 1) + kk;
      if (src < 0 || src >= t) continue;
      for (int ci = 0; ci < cin; ++ci) {
        const double xv = x.data()[static_cast<size_t>(src) * cin + ci];
        const size_t wbase = (static_cast<size_t>(kk) * cin + ci) * cout;
        for (int co = 0; co < cout; ++co)
          out.data()[static_cast<size_t>(i) * cout + co] += xv * weight.data()[wbase + co];
      }
    }
  }
  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    TensorImpl* xi = x.impl();
    TensorImpl* wi = weight.impl();
    TensorImpl* bi = bias.impl();
    out.impl()->backward_fn = [oi, xi, wi, bi, t, cin, k, cout, stride]() {
      const int tout = (t - 1) / stride + 1;
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (int i = 0; i < tout; ++i)
          for (int co = 0; co < cout; ++co) bi->grad[co] += oi->grad[static_cast<size_t>(i) * cout + co];
      }
      for (int i = 0; i < tout; ++i)
        for (int kk = 0; kk < k; ++kk) {
          const int src = i * stride - (k - 1) + kk;
          if (src < 0 || src >= t) continue;
          for (int ci = 0; ci < cin; ++ci) {
            const size_t wbase = (static_cast<size_t>(kk) * cin + ci) * cout;
            if (xi->requires_grad) {
              xi->ensure_grad();
              double acc = 0;
              for (int co = 0; co < cout; ++co)
                acc += oi->grad[static_cast<size_t>(i) * cout + co] * wi->data[wbase + co];
              xi->grad[static_cast<size_t>(src) * cin + ci] += acc;
            }
            if (wi->requires_grad) {
              wi->ensure_grad();
              const double xv = xi->data[static_cast<size_t>(src) * cin + ci];
              for (int co = 0; co < cout; ++co)
                wi->grad[wbase + co] += oi->grad[static_cast<size_t>(i) * cout + co] * xv;
            }
          }
        }
    };
  }
  return out;
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
  Tensor out = make_node({1}, {a.impl_ptr()});
  double acc = 0;
  for (double v : a.data()) acc += v;
  out.data()[0] = acc;
  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    TensorImpl* ai = a.impl();
    out.impl()->backward_fn = [oi, ai]() {
      ai->ensure_grad();
      for (double& g : ai->grad) g += oi->grad[0];
    };
  }
  return out;
}

Tensor mean(const Tensor& a) {
  const double n = static_cast<double>(a.numel());
  Tensor out = make_node({1}, {a.impl_ptr()});
  double acc = 0;
  for (double v : a.data()) acc += v;
  out.data()[0] = acc / n;
  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    TensorImpl* ai = a.impl();
    out.impl()->backward_fn = [oi, ai, n]() {
      ai->ensure_grad();
      for (double& g : ai->grad) g += oi->grad[0] / n;
    };
  }
  return out;
}

// ---- regularization ----

Tensor dropout(const Tensor& a, double p, Rng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must be in [0, 1)");
  if (!training || p == 0.0) return a;
  Tensor out = make_node(a.shape(), {a.impl_ptr()});
  auto keep = std::make_shared<std::vector<double>>(a.numel());
  const double scale = 1.0 / (1.0 - p);
  for (int64_t i = 0; i < a.numel(); ++i) {
    (*keep)[i] = rng.bernoulli(1.0 - p) ? scale : 0.0;
    out.data()[i] = a.data()[i] * (*keep)[i];
  }
  if (out.requires_grad()) {
    TensorImpl* oi = out.impl();
    TensorImpl* ai = a.impl();
    out.impl()->backward_fn = [oi, ai, keep]() {
      ai->ensure_grad();
      for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += oi->grad[i] * (*keep)[i];
    };
  }
  return out;
}

// ---- attention ----

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Mask& mask,
                        int heads) {
  require_2d(q, "masked_attention");
  require_2d(k, "masked_attention");
  require_2d(v, "masked_attention");
  const int d = q.size(1);
  if (k.size(1) != d || v.size(1) != d)
    throw std::invalid_argument("masked_attention: q/k/v widths differ");
  if (k.size(0) != v.size(0))
    throw std::invalid_argument("masked_attention: k/v lengths differ");
  if (heads < 1 || d % heads != 0)
    throw std::invalid_argument("masked_attention: model width " + std::to_string(d) +
                                " not divisible by " + std::to_string(heads) + " heads");
  if (mask.rows != q.size(0) || mask.cols != k.size(0))
    throw std::invalid_argument("masked_attention: mask does not match q/k lengths");
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> parts;
  parts.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = mul(matmul(qh, transpose(kh)), scale);
    Tensor att = masked_softmax(scores, mask);
    parts.push_back(matmul(att, vh));
  }
  return heads == 1 ? parts[0] : concat_cols(parts);
}

// ---- autodiff driver ----

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined tensor");
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + loss.shape_str());
  TensorImpl* root = loss.impl();
  if (!root->requires_grad)
    throw std::runtime_error("backward: loss does not require grad (detached graph)");
  if (root->backward_done) throw std::runtime_error("backward: already run for this loss");
  root->backward_done = true;

  // Iterative post-order DFS for a deterministic reverse topological order.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, size_t>> stack;
  stack.emplace_back(root, 0);
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      TensorImpl* child = node->parents[next_child].get();
      ++next_child;
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn();
    }
  }
}

bool all_finite(const Tensor& t) {
  for (double v : t.data())
    if (!std::isfinite(v)) return false;
  return true;
}

// ---- gradient checking ----

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double step, double tol) {
  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  Tensor y = f(probe);
  if (y.numel() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
  backward(y);
  std::vector<double> autodiff = probe.grad();

  Tensor work = x.clone();
  work.set_requires_grad(false);
  GradCheckReport report;
  report.pass = true;
  for (int64_t i = 0; i < work.numel(); ++i) {
    const double orig = work.data()[i];
    work.data()[i] = orig + step;
    const double fp = f(work).item();
    work.data()[i] = orig - step;
    const double fm = f(work).item();
    work.data()[i] = orig;
    const double numeric = (fp - fm) / (2.0 * step);
    const double a = autodiff[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_index = i;
      report.autodiff_at_worst = a;
      report.numeric_at_worst = numeric;
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

GradCheckReport grad_check_params(const std::function<Tensor()>& f,
                                  const std::vector<Tensor>& params, double step, double tol) {
  Tensor y = f();
  if (y.numel() != 1) throw std::invalid_argument("grad_check_params: f must return a scalar");
  for (Tensor p : params) p.zero_grad();
  backward(y);
  std::vector<std::vector<double>> autodiff;
  for (const auto& p : params) autodiff.push_back(p.grad());

  GradCheckReport report;
  report.pass = true;
  int64_t flat = 0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    for (int64_t i = 0; i < p.numel(); ++i, ++flat) {
      const double orig = p.data()[i];
      p.data()[i] = orig + step;
      const double fp = f().item();
      p.data()[i] = orig - step;
      const double fm = f().item();
      p.data()[i] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = autodiff[pi][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_index = flat;
        report.autodiff_at_worst = a;
        report.numeric_at_worst = numeric;
      }
    }
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace scmoe
