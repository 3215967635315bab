// Copyright 2026 The mmrecall Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mmr/numcore/ops.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmr/common/errors.h"

namespace mmr::nc {
namespace {

using detail::Node;

// Gradient buffer of input i, or nullptr when that input is a constant.
double* input_grad(Node& self, std::size_t i) {
  Node& in = *self.inputs[i];
  return in.requires_grad ? in.grad_buffer().data() : nullptr;
}

const double* input_value(const Node& self, std::size_t i) {
  return self.inputs[i]->value.data();
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " +
                     shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename T>
double cosine_impl(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: dim mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw DomainError("cosine_similarity: zero-norm input");
  }
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

}  // namespace

std::size_t AttentionMask::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), true));
}

void AttentionMask::append(const AttentionMask& other) {
  valid.insert(valid.end(), other.valid.begin(), other.valid.end());
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  return cosine_impl(a, b);
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  return cosine_impl(a, b);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dims " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return Tensor::make_result(
      {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
        const double* dc = self.grad.data();
        const double* va = input_value(self, 0);
        const double* vb = input_value(self, 1);
        if (double* da = input_grad(self, 0)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              double s = 0.0;
              const double* brow = vb + p * n;
              const double* dcrow = dc + i * n;
              for (std::size_t j = 0; j < n; ++j) s += dcrow[j] * brow[j];
              da[i * k + p] += s;
            }
          }
        }
        if (double* db = input_grad(self, 1)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
              const double av = va[i * k + p];
              double* dbrow = db + p * n;
              const double* dcrow = dc + i * n;
              for (std::size_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
            }
          }
        }
      });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul_nt");
  require_rank2(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw ShapeError("matmul_nt: inner dims " + shape_string(a.shape()) +
                     " x " + shape_string(b.shape()) + "^T");
  }
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += pa[i * k + p] * pb[j * k + p];
      out[i * n + j] = s;
    }
  }
  return Tensor::make_result(
      {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
        const double* dc = self.grad.data();
        const double* va = input_value(self, 0);
        const double* vb = input_value(self, 1);
        if (double* da = input_grad(self, 0)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              const double g = dc[i * n + j];
              for (std::size_t p = 0; p < k; ++p) da[i * k + p] += g * vb[j * k + p];
            }
          }
        }
        if (double* db = input_grad(self, 1)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              const double g = dc[i * n + j];
              for (std::size_t p = 0; p < k; ++p) db[j * k + p] += g * va[i * k + p];
            }
          }
        }
      });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank2(x, "linear");
  require_rank2(weight, "linear");
  const std::size_t m = x.rows(), k = x.cols(), n = weight.cols();
  if (weight.rows() != k || bias.size() != n) {
    throw ShapeError("linear: " + shape_string(x.shape()) + " x " +
                     shape_string(weight.shape()) + " + " +
                     shape_string(bias.shape()));
  }
  std::vector<double> out(m * n);
  const double* px = x.data().data();
  const double* pw = weight.data().data();
  const double* pb = bias.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    std::copy(pb, pb + n, row);
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = px[i * k + p];
      const double* wrow = pw + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += xv * wrow[j];
    }
  }
  return Tensor::make_result(
      {m, n}, std::move(out), {x, weight, bias}, [m, k, n](Node& self) {
        const double* dc = self.grad.data();
        const double* vx = input_value(self, 0);
        const double* vw = input_value(self, 1);
        if (double* dx = input_grad(self, 0)) {
          for (std::size_t i = 0; i < m; ++i) {
            const double* dcrow = dc + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const double* wrow = vw + p * n;
              double s = 0.0;
              for (std::size_t j = 0; j < n; ++j) s += dcrow[j] * wrow[j];
              dx[i * k + p] += s;
            }
          }
        }
        if (double* dw = input_grad(self, 1)) {
          for (std::size_t i = 0; i < m; ++i) {
            const double* dcrow = dc + i * n;
            for (std::size_t p = 0; p < k; ++p) {
              const double xv = vx[i * k + p];
              double* dwrow = dw + p * n;
              for (std::size_t j = 0; j < n; ++j) dwrow[j] += xv * dcrow[j];
            }
          }
        }
        if (double* db = input_grad(self, 2)) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) db[j] += dc[i * n + j];
          }
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const std::size_t n = self.grad.size();
    for (std::size_t in = 0; in < 2; ++in) {
      if (double* d = input_grad(self, in)) {
        for (std::size_t i = 0; i < n; ++i) d[i] += self.grad[i];
      }
    }
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_rank2(a, "add_row");
  const std::size_t m = a.rows(), n = a.cols();
  if (row.size() != n) throw ShapeError("add_row: row length mismatch");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = a.data()[i * n + j] + row.data()[j];
    }
  }
  return Tensor::make_result(a.shape(), std::move(out), {a, row},
                             [m, n](Node& self) {
                               const double* g = self.grad.data();
                               if (double* da = input_grad(self, 0)) {
                                 for (std::size_t i = 0; i < m * n; ++i) da[i] += g[i];
                               }
                               if (double* dr = input_grad(self, 1)) {
                                 for (std::size_t i = 0; i < m; ++i) {
                                   for (std::size_t j = 0; j < n; ++j) {
                                     dr[j] += g[i * n + j];
                                   }
                                 }
                               }
                             });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  return Tensor::make_result(a.shape(), std::move(out), {a},
                             [factor](Node& self) {
                               double* d = input_grad(self, 0);
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                 d[i] += factor * self.grad[i];
                               }
                             });
}

Tensor gelu(const Tensor& a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a.data()[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(kC * (x + kA * x * x * x)));
  }
  return Tensor::make_result(a.shape(), std::move(out), {a}, [](Node& self) {
    double* d = input_grad(self, 0);
    const double* xs = input_value(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double x = xs[i];
      const double t = std::tanh(kC * (x + kA * x * x * x));
      const double dt = (1.0 - t * t) * kC * (1.0 + 3.0 * kA * x * x);
      d[i] += self.grad[i] * (0.5 * (1.0 + t) + 0.5 * x * dt);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                  double eps) {
  require_rank2(x, "layer_norm");
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.size() != n || shift.size() != n) {
    throw ShapeError("layer_norm: gain/shift length mismatch");
  }
  std::vector<double> out(m * n);
  std::vector<double> xhat(m * n);
  std::vector<double> inv_std(m);
  const double* px = x.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = px + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[i * n + j] = (row[j] - mean) * inv_std[i];
      out[i * n + j] = xhat[i * n + j] * gain.data()[j] + shift.data()[j];
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gain, shift},
      [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const double* g = self.grad.data();
        const double* gain_v = input_value(self, 1);
        double* dx = input_grad(self, 0);
        double* dgain = input_grad(self, 1);
        double* dshift = input_grad(self, 2);
        std::vector<double> dxhat(n);
        for (std::size_t i = 0; i < m; ++i) {
          double mean_d = 0.0, mean_dx = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double gi = g[i * n + j];
            if (dgain) dgain[j] += gi * xhat[i * n + j];
            if (dshift) dshift[j] += gi;
            dxhat[j] = gi * gain_v[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xhat[i * n + j];
          }
          if (!dx) continue;
          mean_d /= static_cast<double>(n);
          mean_dx /= static_cast<double>(n);
          for (std::size_t j = 0; j < n; ++j) {
            dx[i * n + j] +=
                inv_std[i] * (dxhat[j] - mean_d - xhat[i * n + j] * mean_dx);
          }
        }
      });
}

Tensor softmax_rows(const Tensor& m) {
  require_rank2(m, "softmax_rows");
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = m.data().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(row[j] - mx);
      z += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  return Tensor::make_result(m.shape(), out, {m}, [r, c, out](Node& self) {
    double* d = input_grad(self, 0);
    const double* g = self.grad.data();
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * out[i * c + j];
      for (std::size_t j = 0; j < c; ++j) {
        d[i * c + j] += out[i * c + j] * (g[i * c + j] - dot);
      }
    }
  });
}

Tensor l2_normalize_rows(const Tensor& m) {
  require_rank2(m, "l2_normalize_rows");
  const std::size_t r = m.rows(), c = m.cols();
  std::vector<double> out(r * c);
  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = m.data().data() + i * c;
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += row[j] * row[j];
    if (s == 0.0) throw DomainError("l2_normalize_rows: zero-norm row");
    norms[i] = std::sqrt(s);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] / norms[i];
  }
  return Tensor::make_result(
      m.shape(), out, {m}, [r, c, out, norms = std::move(norms)](Node& self) {
        double* d = input_grad(self, 0);
        const double* g = self.grad.data();
        for (std::size_t i = 0; i < r; ++i) {
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * out[i * c + j];
          for (std::size_t j = 0; j < c; ++j) {
            d[i * c + j] += (g[i * c + j] - out[i * c + j] * dot) / norms[i];
          }
        }
      });
}

Tensor mean_rows(const Tensor& m) {
  require_rank2(m, "mean_rows");
  const std::size_t r = m.rows(), c = m.cols();
  if (r == 0) throw ShapeError("mean_rows: no rows");
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j] += m.data()[i * c + j];
  }
  for (double& v : out) v /= static_cast<double>(r);
  return Tensor::make_result({1, c}, std::move(out), {m}, [r, c](Node& self) {
    double* d = input_grad(self, 0);
    const double inv = 1.0 / static_cast<double>(r);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) d[i * c + j] += self.grad[j] * inv;
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.cols() != c) throw ShapeError("concat_rows: column mismatch");
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return Tensor::make_result({total, c}, std::move(out), std::move(inputs),
                             [](Node& self) {
                               std::size_t offset = 0;
                               for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                                 const std::size_t n = self.inputs[k]->value.size();
                                 if (double* d = input_grad(self, k)) {
                                   for (std::size_t i = 0; i < n; ++i) {
                                     d[i] += self.grad[offset + i];
                                   }
                                 }
                                 offset += n;
                               }
                             });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t r = parts[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.rows() != r) throw ShapeError("concat_cols: row mismatch");
    widths.push_back(p.cols());
    total += p.cols();
  }
  std::vector<double> out(r * total);
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < r; ++i) {
      std::copy_n(p.data().data() + i * w, w, out.data() + i * total + col);
    }
    col += w;
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return Tensor::make_result(
      {r, total}, std::move(out), std::move(inputs),
      [r, total, widths = std::move(widths)](Node& self) {
        std::size_t col = 0;
        for (std::size_t k = 0; k < widths.size(); ++k) {
          const std::size_t w = widths[k];
          if (double* d = input_grad(self, k)) {
            for (std::size_t i = 0; i < r; ++i) {
              for (std::size_t j = 0; j < w; ++j) {
                d[i * w + j] += self.grad[i * total + col + j];
              }
            }
          }
          col += w;
        }
      });
}

Tensor slice_rows(const Tensor& m, std::size_t begin, std::size_t count) {
  require_rank2(m, "slice_rows");
  const std::size_t c = m.cols();
  if (begin + count > m.rows()) throw ShapeError("slice_rows: out of range");
  std::vector<double> out(m.data().begin() + begin * c,
                          m.data().begin() + (begin + count) * c);
  return Tensor::make_result({count, c}, std::move(out), {m},
                             [begin, c](Node& self) {
                               double* d = input_grad(self, 0) + begin * c;
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                 d[i] += self.grad[i];
                               }
                             });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  require_rank2(table, "gather_rows");
  const std::size_t c = table.cols();
  std::vector<double> out(ids.size() * c);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= table.rows()) throw DomainError("gather_rows: id out of range");
    std::copy_n(table.data().data() + ids[i] * c, c, out.data() + i * c);
  }
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  return Tensor::make_result({ids.size(), c}, std::move(out), {table},
                             [c, idx = std::move(idx)](Node& self) {
                               double* d = input_grad(self, 0);
                               for (std::size_t i = 0; i < idx.size(); ++i) {
                                 for (std::size_t j = 0; j < c; ++j) {
                                   d[idx[i] * c + j] += self.grad[i * c + j];
                                 }
                               }
                             });
}

Tensor sum_all(const Tensor& m) {
  double s = 0.0;
  for (double v : m.data()) s += v;
  return Tensor::make_result({1, 1}, {s}, {m}, [](Node& self) {
    double* d = input_grad(self, 0);
    const std::size_t n = self.inputs[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) d[i] += self.grad[0];
  });
}

Tensor sum_squares(const Tensor& m) {
  double s = 0.0;
  for (double v : m.data()) s += v * v;
  return Tensor::make_result({1, 1}, {s}, {m}, [](Node& self) {
    double* d = input_grad(self, 0);
    const double* x = input_value(self, 0);
    const std::size_t n = self.inputs[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) d[i] += 2.0 * x[i] * self.grad[0];
  });
}

Tensor add_scalars(std::span<const Tensor> scalars) {
  if (scalars.empty()) return Tensor::scalar(0.0);
  double s = 0.0;
  for (const auto& t : scalars) s += t.item();
  std::vector<Tensor> inputs(scalars.begin(), scalars.end());
  return Tensor::make_result({1, 1}, {s}, std::move(inputs), [](Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      if (double* d = input_grad(self, k)) d[0] += self.grad[0];
    }
  });
}

Tensor additive_margin(const Tensor& s, double gamma, double margin) {
  require_rank2(s, "additive_margin");
  const std::size_t r = s.rows(), c = s.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      const double v = s.data()[i * c + j];
      out[i * c + j] = gamma * (i == j ? v - margin : v);
    }
  }
  return Tensor::make_result(s.shape(), std::move(out), {s}, [gamma](Node& self) {
    double* d = input_grad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += gamma * self.grad[i];
  });
}

Tensor cross_entropy_rows(const Tensor& logits,
                          std::span<const std::size_t> targets) {
  require_rank2(logits, "cross_entropy_rows");
  const std::size_t r = logits.rows(), c = logits.cols();
  if (targets.size() != r) throw ShapeError("cross_entropy_rows: target count");
  if (r == 0) throw DomainError("cross_entropy_rows: empty batch");
  std::vector<double> probs(r * c);
  double total = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (targets[i] >= c) throw ShapeError("cross_entropy_rows: target range");
    const double* row = logits.data().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(row[j] - mx);
      z += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    total += (mx + std::log(z)) - row[targets[i]];
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  return Tensor::make_result(
      {1, 1}, {total / static_cast<double>(r)}, {logits},
      [r, c, probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
        double* d = input_grad(self, 0);
        const double g = self.grad[0] / static_cast<double>(r);
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) {
            const double onehot = (j == tgt[i]) ? 1.0 : 0.0;
            d[i * c + j] += g * (probs[i * c + j] - onehot);
          }
        }
      });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 std::size_t heads, const AttentionMask& mask) {
  require_rank2(q, "attention");
  require_rank2(k, "attention");
  require_rank2(v, "attention");
  const std::size_t n = q.rows(), m = k.rows(), d = q.cols();
  if (k.cols() != d || v.cols() != d || v.rows() != m) {
    throw ShapeError("attention: q/k/v dims disagree");
  }
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("attention: dim " + std::to_string(d) +
                     " not divisible by heads " + std::to_string(heads));
  }
  if (mask.size() != m) throw ShapeError("attention: mask length mismatch");

  const std::size_t dh = d / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<std::size_t> keys;
  for (std::size_t j = 0; j < m; ++j) {
    if (mask.valid[j]) keys.push_back(j);
  }
  const std::size_t nk = keys.size();
  const double* pq = q.data().data();
  const double* pk = k.data().data();
  const double* pv = v.data().data();

  // probs[(h * n + i) * nk + t] for key keys[t].
  std::vector<double> probs(heads * n * nk);
  std::vector<double> out(n * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t c0 = h * dh;
    for (std::size_t i = 0; i < n; ++i) {
      if (nk == 0) continue;
      double* p = probs.data() + (h * n + i) * nk;
      double mx = -INFINITY;
      for (std::size_t t = 0; t < nk; ++t) {
        const double* kr = pk + keys[t] * d + c0;
        const double* qr = pq + i * d + c0;
        double s = 0.0;
        for (std::size_t c = 0; c < dh; ++c) s += qr[c] * kr[c];
        p[t] = s * scale_factor;
        mx = std::max(mx, p[t]);
      }
      double z = 0.0;
      for (std::size_t t = 0; t < nk; ++t) {
        p[t] = std::exp(p[t] - mx);
        z += p[t];
      }
      double* orow = out.data() + i * d + c0;
      for (std::size_t t = 0; t < nk; ++t) {
        p[t] /= z;
        const double* vr = pv + keys[t] * d + c0;
        for (std::size_t c = 0; c < dh; ++c) orow[c] += p[t] * vr[c];
      }
    }
  }

  return Tensor::make_result(
      {n, d}, std::move(out), {q, k, v},
      [n, d, heads, dh, scale_factor, keys = std::move(keys),
       probs = std::move(probs)](Node& self) {
        const std::size_t nk = keys.size();
        if (nk == 0) return;
        const double* g = self.grad.data();
        const double* pq = input_value(self, 0);
        const double* pk = input_value(self, 1);
        const double* pv = input_value(self, 2);
        double* dq = input_grad(self, 0);
        double* dk = input_grad(self, 1);
        double* dv = input_grad(self, 2);
        std::vector<double> dp(nk);
        for (std::size_t h = 0; h < heads; ++h) {
          const std::size_t c0 = h * dh;
          for (std::size_t i = 0; i < n; ++i) {
            const double* p = probs.data() + (h * n + i) * nk;
            const double* grow = g + i * d + c0;
            double dot = 0.0;
            for (std::size_t t = 0; t < nk; ++t) {
              const std::size_t j = keys[t];
              const double* vr = pv + j * d + c0;
              double s = 0.0;
              for (std::size_t c = 0; c < dh; ++c) s += grow[c] * vr[c];
              dp[t] = s;
              dot += p[t] * s;
              if (dv) {
                double* dvr = dv + j * d + c0;
                for (std::size_t c = 0; c < dh; ++c) dvr[c] += p[t] * grow[c];
              }
            }
            for (std::size_t t = 0; t < nk; ++t) {
              const double ds = p[t] * (dp[t] - dot) * scale_factor;
              const std::size_t j = keys[t];
              if (dq) {
                double* dqr = dq + i * d + c0;
                const double* kr = pk + j * d + c0;
                for (std::size_t c = 0; c < dh; ++c) dqr[c] += ds * kr[c];
              }
              if (dk) {
                double* dkr = dk + j * d + c0;
                const double* qr = pq + i * d + c0;
                for (std::size_t c = 0; c < dh; ++c) dkr[c] += ds * qr[c];
              }
            }
          }
        }
      });
}

Tensor multi_head_attention(const Tensor& q_tokens, const Tensor& kv_tokens,
                            const AttentionMask& mask,
                            const AttentionParams& params, std::size_t heads) {
  if (q_tokens.cols() != kv_tokens.cols()) {
    throw ShapeError("multi_head_attention: token dims disagree");
  }
  if (mask.size() != kv_tokens.rows()) {
    throw ShapeError("multi_head_attention: mask length " +
                     std::to_string(mask.size()) + " vs kv length " +
                     std::to_string(kv_tokens.rows()));
  }
  const Tensor q = linear(q_tokens, params.wq, params.bq);
  const Tensor k = matmul(kv_tokens, params.wk);
  const Tensor v = linear(kv_tokens, params.wv, params.bv);
  const Tensor a = attention(q, k, v, heads, mask);
  return linear(a, params.wo, params.bo);
}

}  // namespace mmr::nc
