#include "ecg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ecg/random.hpp"

namespace ecg::nn {

namespace {

TensorPtr make_node(Shape shape, std::vector<TensorPtr> parents) {
  auto t = Tensor::create(std::move(shape));
  for (const auto& p : parents) t->requires_grad |= p->requires_grad;
  t->parents = std::move(parents);
  return t;
}

void seal(const TensorPtr& t) { quantize(t->value); }

void expect_rank(const TensorPtr& t, std::size_t rank, const char* what) {
  if (t->shape.size() != rank)
    throw ShapeMismatch(std::string(what) + " expected rank " +
                        std::to_string(rank) + ", got " + shape_str(t->shape));
}

// C[n,u] += A[n,d] x W[d,u]
void mm_acc(const double* a, const double* w, double* c, std::size_t n,
            std::size_t d, std::size_t u) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * d;
    double* crow = c + i * u;
    for (std::size_t k = 0; k < d; ++k) {
      const double av = arow[k];
      if (av == 0.0) continue;
      const double* wrow = w + k * u;
      for (std::size_t j = 0; j < u; ++j) crow[j] += av * wrow[j];
    }
  }
}

// C[n,d] += A[n,u] x W^T where W is [d,u]
void mm_acc_bt(const double* a, const double* w, double* c, std::size_t n,
               std::size_t u, std::size_t d) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * u;
    double* crow = c + i * d;
    for (std::size_t k = 0; k < d; ++k) {
      const double* wrow = w + k * u;
      double acc = 0.0;
      for (std::size_t j = 0; j < u; ++j) acc += arow[j] * wrow[j];
      crow[k] += acc;
    }
  }
}

// W[d,u] += A^T[n,d] x B[n,u]
void mm_acc_at(const double* a, const double* b, double* w, std::size_t n,
               std::size_t d, std::size_t u) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * d;
    const double* brow = b + i * u;
    for (std::size_t k = 0; k < d; ++k) {
      const double av = arow[k];
      if (av == 0.0) continue;
      double* wrow = w + k * u;
      for (std::size_t j = 0; j < u; ++j) wrow[j] += av * brow[j];
    }
  }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TensorPtr conv1d(const TensorPtr& input, const TensorPtr& kernels,
                 const TensorPtr& bias) {
  expect_rank(input, 3, "conv1d input");
  expect_rank(kernels, 3, "conv1d kernels");
  expect_rank(bias, 1, "conv1d bias");
  const std::size_t b = input->shape[0], L = input->shape[1],
                    ci = input->shape[2];
  const std::size_t k = kernels->shape[0], co = kernels->shape[2];
  if (kernels->shape[1] != ci)
    throw ShapeMismatch("conv1d kernels " + shape_str(kernels->shape) +
                        " vs input channels " + std::to_string(ci));
  if (bias->shape[0] != co)
    throw ShapeMismatch("conv1d bias " + shape_str(bias->shape));
  if (k < 1) throw ShapeMismatch("conv1d kernel size must be >= 1");

  const long pad_left = static_cast<long>((k - 1) / 2);
  auto out = make_node({b, L, co}, {input, kernels, bias});

  const double* in = input->value.data();
  const double* kw = kernels->value.data();
  const double* bv = bias->value.data();
  double* ov = out->value.data();
  for (std::size_t bi = 0; bi < b; ++bi) {
    for (std::size_t t = 0; t < L; ++t) {
      double* orow = ov + (bi * L + t) * co;
      for (std::size_t j = 0; j < co; ++j) orow[j] = bv[j];
      for (std::size_t kk = 0; kk < k; ++kk) {
        const long s = static_cast<long>(t) + static_cast<long>(kk) - pad_left;
        if (s < 0 || s >= static_cast<long>(L)) continue;
        const double* irow = in + (bi * L + static_cast<std::size_t>(s)) * ci;
        const double* krow = kw + kk * ci * co;
        for (std::size_t c = 0; c < ci; ++c) {
          const double a = irow[c];
          if (a == 0.0) continue;
          const double* kr = krow + c * co;
          for (std::size_t j = 0; j < co; ++j) orow[j] += a * kr[j];
        }
      }
    }
  }
  seal(out);

  std::weak_ptr<Tensor> wout = out;
  out->backward_fn = [wout, input, kernels, bias, b, L, ci, k, co, pad_left]() {
    auto out_t = wout.lock();
    const double* g = out_t->grad.data();
    const double* in = input->value.data();
    const double* kw = kernels->value.data();
    if (bias->requires_grad) {
      double* db = bias->grad.data();
      for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t t = 0; t < L; ++t) {
          const double* grow = g + (bi * L + t) * co;
          for (std::size_t j = 0; j < co; ++j) db[j] += grow[j];
        }
    }
    if (kernels->requires_grad) {
      double* dk = kernels->grad.data();
      for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t t = 0; t < L; ++t) {
          const double* grow = g + (bi * L + t) * co;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const long s =
                static_cast<long>(t) + static_cast<long>(kk) - pad_left;
            if (s < 0 || s >= static_cast<long>(L)) continue;
            const double* irow =
                in + (bi * L + static_cast<std::size_t>(s)) * ci;
            double* krow = dk + kk * ci * co;
            for (std::size_t c = 0; c < ci; ++c) {
              const double a = irow[c];
              if (a == 0.0) continue;
              double* kr = krow + c * co;
              for (std::size_t j = 0; j < co; ++j) kr[j] += a * grow[j];
            }
          }
        }
    }
    if (input->requires_grad) {
      double* di = input->grad.data();
      for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t t = 0; t < L; ++t) {
          const double* grow = g + (bi * L + t) * co;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const long s =
                static_cast<long>(t) + static_cast<long>(kk) - pad_left;
            if (s < 0 || s >= static_cast<long>(L)) continue;
            double* irow = di + (bi * L + static_cast<std::size_t>(s)) * ci;
            const double* krow = kw + kk * ci * co;
            for (std::size_t c = 0; c < ci; ++c) {
              const double* kr = krow + c * co;
              double acc = 0.0;
              for (std::size_t j = 0; j < co; ++j) acc += kr[j] * grow[j];
              irow[c] += acc;
            }
          }
        }
    }
  };
  return out;
}

TensorPtr batch_norm1d(const TensorPtr& input, const TensorPtr& gamma,
                       const TensorPtr& beta, Mode mode, BatchNormState& state,
                       double momentum, double epsilon) {
  expect_rank(input, 3, "batch_norm1d input");
  const std::size_t b = input->shape[0], L = input->shape[1],
                    c = input->shape[2];
  if (gamma->size() != c || beta->size() != c)
    throw ShapeMismatch("batch_norm1d gamma/beta vs " + std::to_string(c) +
                        " channels");
  if (state.running_mean.empty()) {
    state.running_mean.assign(c, 0.0);
    state.running_var.assign(c, 1.0);
  }
  const std::size_t n = b * L;
  auto out = make_node(input->shape, {input, gamma, beta});

  const double* in = input->value.data();
  const double* gv = gamma->value.data();
  const double* bv = beta->value.data();
  double* ov = out->value.data();

  std::vector<double> mean(c, 0.0), var(c, 0.0), inv_std(c, 0.0);
  if (mode == Mode::train) {
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = in + i * c;
      for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += row[ch];
    }
    for (std::size_t ch = 0; ch < c; ++ch) mean[ch] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = in + i * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double d = row[ch] - mean[ch];
        var[ch] += d * d;
      }
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      var[ch] /= static_cast<double>(n);
      inv_std[ch] = 1.0 / std::sqrt(var[ch] + epsilon);
      state.running_mean[ch] =
          momentum * state.running_mean[ch] + (1.0 - momentum) * mean[ch];
      state.running_var[ch] =
          momentum * state.running_var[ch] + (1.0 - momentum) * var[ch];
    }
    state.initialized = true;
  } else {
    mean = state.running_mean;
    var = state.running_var;
    for (std::size_t ch = 0; ch < c; ++ch)
      inv_std[ch] = 1.0 / std::sqrt(var[ch] + epsilon);
  }

  auto xhat = std::make_shared<std::vector<double>>(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = in + i * c;
    double* xrow = xhat->data() + i * c;
    double* orow = ov + i * c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      xrow[ch] = (row[ch] - mean[ch]) * inv_std[ch];
      orow[ch] = gv[ch] * xrow[ch] + bv[ch];
    }
  }
  seal(out);

  std::weak_ptr<Tensor> wout = out;
  const bool train = mode == Mode::train;
  out->backward_fn = [wout, input, gamma, beta, xhat, inv_std, n, c, train]() {
    auto out_t = wout.lock();
    const double* g = out_t->grad.data();
    const double* gv = gamma->value.data();
    const double* xh = xhat->data();

    std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* grow = g + i * c;
      const double* xrow = xh + i * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        sum_g[ch] += grow[ch];
        sum_gx[ch] += grow[ch] * xrow[ch];
      }
    }
    if (gamma->requires_grad)
      for (std::size_t ch = 0; ch < c; ++ch) gamma->grad[ch] += sum_gx[ch];
    if (beta->requires_grad)
      for (std::size_t ch = 0; ch < c; ++ch) beta->grad[ch] += sum_g[ch];
    if (!input->requires_grad) return;

    double* di = input->grad.data();
    if (train) {
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = g + i * c;
        const double* xrow = xh + i * c;
        double* drow = di + i * c;
        for (std::size_t ch = 0; ch < c; ++ch) {
          drow[ch] += gv[ch] * inv_std[ch] *
                      (grow[ch] - inv_n * sum_g[ch] -
                       inv_n * xrow[ch] * sum_gx[ch]);
        }
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        const double* grow = g + i * c;
        double* drow = di + i * c;
        for (std::size_t ch = 0; ch < c; ++ch)
          drow[ch] += gv[ch] * inv_std[ch] * grow[ch];
      }
    }
  };
  return out;
}

TensorPtr relu(const TensorPtr& input) {
  auto out = make_node(input->shape, {input});
  for (std::size_t i = 0; i < input->size(); ++i)
    out->value[i] = input->value[i] > 0.0 ? input->value[i] : 0.0;
  seal(out);
  std::weak_ptr<Tensor> wout = out;
  out->backward_fn = [wout, input]() {
    if (!input->requires_grad) return;
    auto out_t = wout.lock();
    for (std::size_t i = 0; i < input->size(); ++i)
      if (input->value[i] > 0.0) input->grad[i] += out_t->grad[i];
  };
  return out;
}

TensorPtr concat_channels(const TensorPtr& a, const TensorPtr& b) {
  expect_rank(a, 3, "concat_channels a");
  expect_rank(b, 3, "concat_channels b");
  if (a->shape[0] != b->shape[0] || a->shape[1] != b->shape[1])
    throw ShapeMismatch("concat_channels " + shape_str(a->shape) + " vs " +
                        shape_str(b->shape));
  const std::size_t n = a->shape[0] * a->shape[1];
  const std::size_t c1 = a->shape[2], c2 = b->shape[2];
  auto out = make_node({a->shape[0], a->shape[1], c1 + c2}, {a, b});
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(out->value.data() + i * (c1 + c2), a->value.data() + i * c1,
                c1 * sizeof(double));
    std::memcpy(out->value.data() + i * (c1 + c2) + c1,
                b->value.data() + i * c2, c2 * sizeof(double));
  }
  seal(out);
  std::weak_ptr<Tensor> wout = out;
  out->backward_fn = [wout, a, b, n, c1, c2]() {
    auto out_t = wout.lock();
    const double* g = out_t->grad.data();
    if (a->requires_grad)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c1; ++ch)
          a->grad[i * c1 + ch] += g[i * (c1 + c2) + ch];
    if (b->requires_grad)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c2; ++ch)
          b->grad[i * c2 + ch] += g[i * (c1 + c2) + c1 + ch];
  };
  return out;
}

TensorPtr avg_pool1d(const TensorPtr& input, std::size_t pool,
                     std::size_t stride) {
  expect_rank(input, 3, "avg_pool1d input");
  const std::size_t b = input->shape[0], L = input->shape[1],
                    c = input->shape[2];
  if (pool < 1 || stride < 1)
    throw ShapeMismatch("avg_pool1d pool/stride must be >= 1");
  if (pool > L)
    throw PoolLargerThanInput("pool " + std::to_string(pool) + " > length " +
                              std::to_string(L));
  const std::size_t lo = (L - pool) / stride + 1;
  auto out = make_node({b, lo, c}, {input});
  const double inv = 1.0 / static_cast<double>(pool);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t j = 0; j < lo; ++j) {
      double* orow = out->value.data() + (bi * lo + j) * c;
      for (std::size_t p = 0; p < pool; ++p) {
        const double* irow =
            input->value.data() + (bi * L + j * stride + p) * c;
        for (std::size_t ch = 0; ch < c; ++ch) orow[ch] += irow[ch];
      }
      for (std::size_t ch = 0; ch < c; ++ch) orow[ch] *= inv;
    }
  seal(out);
  std::weak_ptr<Tensor> wout = out;
  out->backward_fn = [wout, input, b, L, c, lo, pool, stride, inv]() {
    if (!input->requires_grad) return;
    auto out_t = wout.lock();
    const double* g = out_t->grad.data();
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t j = 0; j < lo; ++j) {
        const double* grow = g + (bi * lo + j) * c;
        for (std::size_t p = 0; p < pool; ++p) {
          double* irow = input->grad.data() + (bi * L + j * stride + p) * c;
          for (std::size_t ch = 0; ch < c; ++ch) irow[ch] += grow[ch] * inv;
        }
      }
  };
  return out;
}

TensorPtr mean_over_time(const TensorPtr& input) {
  expect_rank(input, 3, "mean_over_time input");
  const std::size_t b = input->shape[0], T = input->shape[1],
                    c = input->shape[2];
  auto out = make_node({b, c}, {input});
  const double inv = 1.0 / static_cast<double>(T);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t t = 0; t < T; ++t) {
      const double* irow = input->value.data() + (bi * T + t) * c;
      double* orow = out->value.data() + bi * c;
      for (std::size_t ch = 0; ch < c; ++ch) orow[ch] += irow[ch] * inv;
    }
  seal(out);
  std::weak_ptr<Tensor> wout = out;
  out->backward_fn = [wout, input, b, T, c, inv]() {
    if (!input->requires_grad) return;
    auto out_t = wout.lock();
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t t = 0; t < T; ++t) {
        double* irow = input->grad.data() + (bi * T + t) * c;
        const double* grow = out_t->grad.data() + bi * c;
        for (std::size_t ch = 0; ch < c; ++ch) irow[ch] += grow[ch] * inv;
      }
  };
  return out;
}

TensorPtr gru_forward(const TensorPtr& inputs, const GruWeights& w,
                      const TensorPtr& h0) {
  expect_rank(inputs, 3, "gru inputs");
  expect_rank(h0, 2, "gru h0");
  const std::size_t b = inputs->shape[0], T = inputs->shape[1],
                    d = inputs->shape[2];
  const std::size_t u = h0->shape[1];
  if (T < 1) throw ShapeMismatch("gru needs T >= 1");
  if (h0->shape[0] != b) throw ShapeMismatch("gru h0 batch mismatch");
  auto check = [&](const TensorPtr& t, std::size_t r, std::size_t cdim,
                   const char* name) {
    if (t->shape.size() != 2 || t->shape[0] != r || t->shape[1] != cdim)
      throw ShapeMismatch(std::string("gru ") + name + " " +
                          shape_str(t->shape));
  };
  check(w.wz, d, u, "wz"); check(w.wr, d, u, "wr"); check(w.wh, d, u, "wh");
  check(w.uz, u, u, "uz"); check(w.ur, u, u, "ur"); check(w.uh, u, u, "uh");
  if (w.bz->size() != u || w.br->size() != u || w.bh->size() != u)
    throw ShapeMismatch("gru bias size");

  auto out = make_node({b, T, u}, {inputs, w.wz, w.uz, w.bz, w.wr, w.ur, w.br,
                                   w.wh, w.uh, w.bh, h0});

  const std::size_t bu = b * u;
  // Saved activations for BPTT: gates and candidate per step, plus every
  // state including h0.
  auto zs = std::make_shared<std::vector<double>>(T * bu);
  auto rs = std::make_shared<std::vector<double>>(T * bu);
  auto cs = std::make_shared<std::vector<double>>(T * bu);
  auto hs = std::make_shared<std::vector<double>>((T + 1) * bu);
  std::copy(h0->value.begin(), h0->value.end(), hs->begin());

  std::vector<double> az(bu), ar(bu), ah(bu), rh(bu);
  for (std::size_t t = 0; t < T; ++t) {
    const double* h_prev = hs->data() + t * bu;
    double* z = zs->data() + t * bu;
    double* r = rs->data() + t * bu;
    double* cc = cs->data() + t * bu;
    double* h_t = hs->data() + (t + 1) * bu;

    for (std::size_t i = 0; i < bu; ++i) {
      az[i] = w.bz->value[i % u];
      ar[i] = w.br->value[i % u];
      ah[i] = w.bh->value[i % u];
    }
    // x rows are not contiguous across the batch; gather per batch entry.
    for (std::size_t bi = 0; bi < b; ++bi) {
      const double* xrow = inputs->value.data() + (bi * T + t) * d;
      mm_acc(xrow, w.wz->value.data(), az.data() + bi * u, 1, d, u);
      mm_acc(xrow, w.wr->value.data(), ar.data() + bi * u, 1, d, u);
      mm_acc(xrow, w.wh->value.data(), ah.data() + bi * u, 1, d, u);
    }
    mm_acc(h_prev, w.uz->value.data(), az.data(), b, u, u);
    mm_acc(h_prev, w.ur->value.data(), ar.data(), b, u, u);
    for (std::size_t i = 0; i < bu; ++i) {
      z[i] = sigmoid(az[i]);
      r[i] = sigmoid(ar[i]);
      rh[i] = r[i] * h_prev[i];
    }
    mm_acc(rh.data(), w.uh->value.data(), ah.data(), b, u, u);
    for (std::size_t i = 0; i < bu; ++i) {
      cc[i] = std::tanh(ah[i]);
      h_t[i] = (1.0 - z[i]) * h_prev[i] + z[i] * cc[i];
    }
  }
  // out is [b, T, u]; hs is [T+1][b,u]. Transpose into the output layout.
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t t = 0; t < T; ++t)
      std::memcpy(out->value.data() + (bi * T + t) * u,
                  hs->data() + (t + 1) * bu + bi * u, u * sizeof(double));
  seal(out);

  std::weak_ptr<Tensor> wout = out;
  out->backward_fn = [wout, inputs, w, h0, zs, rs, cs, hs, b, T, d, u]() {
    auto out_t = wout.lock();
    const std::size_t bu = b * u;
    std::vector<double> carry(bu, 0.0), g(bu), dz(bu), daz(bu), dc(bu),
        dah(bu), dhp(bu), drh(bu), dr(bu), dar(bu), rh(bu);

    for (std::size_t t = T; t-- > 0;) {
      const double* z = zs->data() + t * bu;
      const double* r = rs->data() + t * bu;
      const double* cc = cs->data() + t * bu;
      const double* h_prev = hs->data() + t * bu;

      for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t j = 0; j < u; ++j)
          g[bi * u + j] =
              carry[bi * u + j] + out_t->grad[(bi * T + t) * u + j];

      for (std::size_t i = 0; i < bu; ++i) {
        dz[i] = g[i] * (cc[i] - h_prev[i]);
        daz[i] = dz[i] * z[i] * (1.0 - z[i]);
        dc[i] = g[i] * z[i];
        dah[i] = dc[i] * (1.0 - cc[i] * cc[i]);
        dhp[i] = g[i] * (1.0 - z[i]);
        rh[i] = r[i] * h_prev[i];
      }
      std::fill(drh.begin(), drh.end(), 0.0);
      mm_acc_bt(dah.data(), w.uh->value.data(), drh.data(), b, u, u);
      for (std::size_t i = 0; i < bu; ++i) {
        dr[i] = drh[i] * h_prev[i];
        dhp[i] += drh[i] * r[i];
        dar[i] = dr[i] * r[i] * (1.0 - r[i]);
      }
      mm_acc_bt(daz.data(), w.uz->value.data(), dhp.data(), b, u, u);
      mm_acc_bt(dar.data(), w.ur->value.data(), dhp.data(), b, u, u);

      if (inputs->requires_grad) {
        for (std::size_t bi = 0; bi < b; ++bi) {
          double* dxrow = inputs->grad.data() + (bi * T + t) * d;
          mm_acc_bt(daz.data() + bi * u, w.wz->value.data(), dxrow, 1, u, d);
          mm_acc_bt(dar.data() + bi * u, w.wr->value.data(), dxrow, 1, u, d);
          mm_acc_bt(dah.data() + bi * u, w.wh->value.data(), dxrow, 1, u, d);
        }
      }
      for (std::size_t bi = 0; bi < b; ++bi) {
        const double* xrow = inputs->value.data() + (bi * T + t) * d;
        if (w.wz->requires_grad)
          mm_acc_at(xrow, daz.data() + bi * u, w.wz->grad.data(), 1, d, u);
        if (w.wr->requires_grad)
          mm_acc_at(xrow, dar.data() + bi * u, w.wr->grad.data(), 1, d, u);
        if (w.wh->requires_grad)
          mm_acc_at(xrow, dah.data() + bi * u, w.wh->grad.data(), 1, d, u);
      }
      if (w.uz->requires_grad)
        mm_acc_at(h_prev, daz.data(), w.uz->grad.data(), b, u, u);
      if (w.ur->requires_grad)
        mm_acc_at(h_prev, dar.data(), w.ur->grad.data(), b, u, u);
      if (w.uh->requires_grad)
        mm_acc_at(rh.data(), dah.data(), w.uh->grad.data(), b, u, u);
      for (std::size_t i = 0; i < bu; ++i) {
        const std::size_t j = i % u;
        if (w.bz->requires_grad) w.bz->grad[j] += daz[i];
        if (w.br->requires_grad) w.br->grad[j] += dar[i];
        if (w.bh->requires_grad) w.bh->grad[j] += dah[i];
      }
      carry = dhp;
    }
    if (h0->requires_grad)
      for (std::size_t i = 0; i < bu; ++i) h0->grad[i] += carry[i];
  };
  return out;
}

TensorPtr attention_pool(const TensorPtr& states, const TensorPtr& score_w,
                         const TensorPtr& score_b,
                         std::vector<double>* weights_out) {
  expect_rank(states, 3, "attention states");
  const std::size_t b = states->shape[0], T = states->shape[1],
                    u = states->shape[2];
  if (T < 1) throw ShapeMismatch("attention needs T >= 1");
  if (score_w->size() != u)
    throw ShapeMismatch("attention score_w " + shape_str(score_w->shape));
  if (score_b->size() != 1)
    throw ShapeMismatch("attention score_b must be scalar");

  auto out = make_node({b, u}, {states, score_w, score_b});
  auto alpha = std::make_shared<std::vector<double>>(b * T);

  for (std::size_t bi = 0; bi < b; ++bi) {
    double mx = -1e300;
    std::vector<double> e(T);
    for (std::size_t t = 0; t < T; ++t) {
      const double* h = states->value.data() + (bi * T + t) * u;
      double s = score_b->value[0];
      for (std::size_t j = 0; j < u; ++j) s += score_w->value[j] * h[j];
      e[t] = s;
      mx = std::max(mx, s);
    }
    double denom = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      e[t] = std::exp(e[t] - mx);
      denom += e[t];
    }
    double* orow = out->value.data() + bi * u;
    for (std::size_t t = 0; t < T; ++t) {
      const double a = e[t] / denom;
      (*alpha)[bi * T + t] = a;
      const double* h = states->value.data() + (bi * T + t) * u;
      for (std::size_t j = 0; j < u; ++j) orow[j] += a * h[j];
    }
  }
  seal(out);
  if (weights_out) *weights_out = *alpha;

  std::weak_ptr<Tensor> wout = out;
  out->backward_fn = [wout, states, score_w, score_b, alpha, b, T, u]() {
    auto out_t = wout.lock();
    for (std::size_t bi = 0; bi < b; ++bi) {
      const double* g = out_t->grad.data() + bi * u;
      std::vector<double> dalpha(T, 0.0);
      for (std::size_t t = 0; t < T; ++t) {
        const double* h = states->value.data() + (bi * T + t) * u;
        double acc = 0.0;
        for (std::size_t j = 0; j < u; ++j) acc += g[j] * h[j];
        dalpha[t] = acc;
      }
      double dot = 0.0;
      for (std::size_t t = 0; t < T; ++t)
        dot += (*alpha)[bi * T + t] * dalpha[t];
      for (std::size_t t = 0; t < T; ++t) {
        const double a = (*alpha)[bi * T + t];
        const double de = a * (dalpha[t] - dot);
        const double* h = states->value.data() + (bi * T + t) * u;
        if (states->requires_grad) {
          double* dh = states->grad.data() + (bi * T + t) * u;
          for (std::size_t j = 0; j < u; ++j)
            dh[j] += a * g[j] + de * score_w->value[j];
        }
        if (score_w->requires_grad)
          for (std::size_t j = 0; j < u; ++j) score_w->grad[j] += de * h[j];
        if (score_b->requires_grad) score_b->grad[0] += de;
      }
    }
  };
  return out;
}

TensorPtr dense(const TensorPtr& input, const TensorPtr& weight,
                const TensorPtr& bias) {
  expect_rank(input, 2, "dense input");
  expect_rank(weight, 2, "dense weight");
  const std::size_t b = input->shape[0], d = input->shape[1],
                    o = weight->shape[1];
  if (weight->shape[0] != d)
    throw ShapeMismatch("dense weight " + shape_str(weight->shape) +
                        " vs input " + shape_str(input->shape));
  if (bias->size() != o) throw ShapeMismatch("dense bias size");
  auto out = make_node({b, o}, {input, weight, bias});
  for (std::size_t bi = 0; bi < b; ++bi) {
    double* orow = out->value.data() + bi * o;
    for (std::size_t j = 0; j < o; ++j) orow[j] = bias->value[j];
  }
  mm_acc(input->value.data(), weight->value.data(), out->value.data(), b, d, o);
  seal(out);
  std::weak_ptr<Tensor> wout = out;
  out->backward_fn = [wout, input, weight, bias, b, d, o]() {
    auto out_t = wout.lock();
    const double* g = out_t->grad.data();
    if (input->requires_grad)
      mm_acc_bt(g, weight->value.data(), input->grad.data(), b, o, d);
    if (weight->requires_grad)
      mm_acc_at(input->value.data(), g, weight->grad.data(), b, d, o);
    if (bias->requires_grad)
      for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t j = 0; j < o; ++j) bias->grad[j] += g[bi * o + j];
  };
  return out;
}

TensorPtr softmax(const TensorPtr& logits) {
  expect_rank(logits, 2, "softmax logits");
  const std::size_t b = logits->shape[0], k = logits->shape[1];
  auto out = make_node(logits->shape, {logits});
  for (std::size_t bi = 0; bi < b; ++bi) {
    const double* x = logits->value.data() + bi * k;
    double* p = out->value.data() + bi * k;
    double mx = x[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, x[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[j] = std::exp(x[j] - mx);
      denom += p[j];
    }
    for (std::size_t j = 0; j < k; ++j) p[j] /= denom;
  }
  seal(out);
  std::weak_ptr<Tensor> wout = out;
  out->backward_fn = [wout, logits, b, k]() {
    if (!logits->requires_grad) return;
    auto out_t = wout.lock();
    for (std::size_t bi = 0; bi < b; ++bi) {
      const double* p = out_t->value.data() + bi * k;
      const double* g = out_t->grad.data() + bi * k;
      double dot = 0.0;
      for (std::size_t j = 0; j < k; ++j) dot += p[j] * g[j];
      double* dx = logits->grad.data() + bi * k;
      for (std::size_t j = 0; j < k; ++j) dx[j] += p[j] * (g[j] - dot);
    }
  };
  return out;
}

std::pair<TensorPtr, TensorPtr> softmax_cross_entropy(
    const TensorPtr& logits, const std::vector<double>& one_hot_targets) {
  expect_rank(logits, 2, "cross entropy logits");
  const std::size_t b = logits->shape[0], k = logits->shape[1];
  if (one_hot_targets.size() != b * k)
    throw ShapeMismatch("targets size " +
                        std::to_string(one_hot_targets.size()) + " vs " +
                        shape_str(logits->shape));
  auto probs = softmax(logits);

  auto loss = make_node({1}, {logits});
  double total = 0.0;
  for (std::size_t bi = 0; bi < b; ++bi) {
    const double* x = logits->value.data() + bi * k;
    double mx = x[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, x[j]);
    double lse = 0.0;
    for (std::size_t j = 0; j < k; ++j) lse += std::exp(x[j] - mx);
    lse = std::log(lse);
    for (std::size_t j = 0; j < k; ++j) {
      const double t = one_hot_targets[bi * k + j];
      if (t != 0.0) total -= t * (x[j] - mx - lse);
    }
  }
  loss->value[0] = total / static_cast<double>(b);
  seal(loss);

  auto targets = std::make_shared<std::vector<double>>(one_hot_targets);
  std::weak_ptr<Tensor> wloss = loss;
  loss->backward_fn = [wloss, logits, probs, targets, b, k]() {
    if (!logits->requires_grad) return;
    auto loss_t = wloss.lock();
    const double g = loss_t->grad[0];
    const double inv_b = 1.0 / static_cast<double>(b);
    for (std::size_t i = 0; i < b * k; ++i)
      logits->grad[i] += g * inv_b * (probs->value[i] - (*targets)[i]);
  };
  return {probs, loss};
}

TensorPtr nll_from_probs(const TensorPtr& probs,
                         const std::vector<double>& one_hot_targets) {
  expect_rank(probs, 2, "nll probs");
  const std::size_t b = probs->shape[0], k = probs->shape[1];
  if (one_hot_targets.size() != b * k)
    throw ShapeMismatch("targets size vs " + shape_str(probs->shape));
  auto loss = make_node({1}, {probs});
  double total = 0.0;
  for (std::size_t i = 0; i < b * k; ++i) {
    const double t = one_hot_targets[i];
    if (t != 0.0) total -= t * std::log(std::max(probs->value[i], 1e-300));
  }
  loss->value[0] = total / static_cast<double>(b);
  seal(loss);

  auto targets = std::make_shared<std::vector<double>>(one_hot_targets);
  std::weak_ptr<Tensor> wloss = loss;
  loss->backward_fn = [wloss, probs, targets, b, k]() {
    if (!probs->requires_grad) return;
    auto loss_t = wloss.lock();
    const double g = loss_t->grad[0];
    const double inv_b = 1.0 / static_cast<double>(b);
    for (std::size_t i = 0; i < b * k; ++i) {
      const double t = (*targets)[i];
      if (t != 0.0)
        probs->grad[i] -=
            g * inv_b * t / std::max(probs->value[i], 1e-300);
    }
  };
  return loss;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  if (a->shape != b->shape)
    throw ShapeMismatch("add " + shape_str(a->shape) + " vs " +
                        shape_str(b->shape));
  auto out = make_node(a->shape, {a, b});
  for (std::size_t i = 0; i < a->size(); ++i)
    out->value[i] = a->value[i] + b->value[i];
  seal(out);
  std::weak_ptr<Tensor> wout = out;
  out->backward_fn = [wout, a, b]() {
    auto out_t = wout.lock();
    if (a->requires_grad)
      for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out_t->grad[i];
    if (b->requires_grad)
      for (std::size_t i = 0; i < b->size(); ++i) b->grad[i] += out_t->grad[i];
  };
  return out;
}

TensorPtr scale(const TensorPtr& a, double factor) {
  auto out = make_node(a->shape, {a});
  for (std::size_t i = 0; i < a->size(); ++i)
    out->value[i] = a->value[i] * factor;
  seal(out);
  std::weak_ptr<Tensor> wout = out;
  out->backward_fn = [wout, a, factor]() {
    if (!a->requires_grad) return;
    auto out_t = wout.lock();
    for (std::size_t i = 0; i < a->size(); ++i)
      a->grad[i] += out_t->grad[i] * factor;
  };
  return out;
}

TensorPtr sum_all(const TensorPtr& a) {
  auto out = make_node({1}, {a});
  double total = 0.0;
  for (double v : a->value) total += v;
  out->value[0] = total;
  seal(out);
  std::weak_ptr<Tensor> wout = out;
  out->backward_fn = [wout, a]() {
    if (!a->requires_grad) return;
    auto out_t = wout.lock();
    for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out_t->grad[0];
  };
  return out;
}

TensorPtr dropout(const TensorPtr& input, double rate, Mode mode,
                  std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0)
    throw InvalidValue("dropout rate must be in [0, 1)");
  if (mode == Mode::infer || rate == 0.0) return input;

  auto out = make_node(input->shape, {input});
  auto mask = std::make_shared<std::vector<double>>(input->size());
  RandomEngine rng(seed);
  const double keep_scale = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < input->size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out->value[i] = input->value[i] * (*mask)[i];
  }
  seal(out);
  std::weak_ptr<Tensor> wout = out;
  out->backward_fn = [wout, input, mask]() {
    if (!input->requires_grad) return;
    auto out_t = wout.lock();
    for (std::size_t i = 0; i < input->size(); ++i)
      input->grad[i] += out_t->grad[i] * (*mask)[i];
  };
  return out;
}

void adam_step(std::span<Parameter> params, const AdamConfig& cfg) {
  for (auto& p : params) {
    auto& t = *p.tensor;
    t.ensure_grad();
    if (p.adam_m.size() != t.size() || p.adam_v.size() != t.size())
      throw ShapeMismatch("adam state size for " + p.name);
    p.step_count += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.step_count));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.step_count));
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double g = t.grad[i];
      p.adam_m[i] = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * g;
      p.adam_v[i] = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * g * g;
      const double mh = p.adam_m[i] / bc1;
      const double vh = p.adam_v[i] / bc2;
      t.value[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.epsilon);
    }
    quantize(t.value);
  }
}

double gradient_check(const std::function<TensorPtr()>& loss_fn,
                      std::span<const TensorPtr> params) {
  for (const auto& p : params) p->zero_grad();
  auto loss = loss_fn();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p->grad);

  double max_err = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& t = *params[pi];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double x0 = t.value[i];
      const double h = 1e-5 * std::max(1.0, std::abs(x0));
      t.value[i] = x0 + h;
      const double f_plus = loss_fn()->value[0];
      t.value[i] = x0 - h;
      const double f_minus = loss_fn()->value[0];
      t.value[i] = x0;
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      const double err = std::abs(analytic[pi][i] - numeric) /
                         std::max(1.0, std::abs(numeric));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace ecg::nn
