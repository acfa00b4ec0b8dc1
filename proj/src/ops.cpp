#include "brst/ops.hpp"

#include <algorithm>
#include <cmath>

#include "brst/errors.hpp"

namespace brst {

namespace detail {

Tensor make_op_node(Array value, const char* op, std::vector<Tensor> inputs, std::function<void(Node&)> backward) {
  bool track = false;
  if (active_tape()) {
    for (const Tensor& t : inputs) {
      if (t.requires_grad()) {
        track = true;
        break;
      }
    }
  }
  Tensor out(std::move(value), track);
  if (track) {
    Node& n = *out.node();
    n.op = op;
    n.parents.reserve(inputs.size());
    for (const Tensor& t : inputs) n.parents.push_back(t.node());
    n.backward = std::move(backward);
    active_tape()->record(out.node());
  }
  return out;
}

}  // namespace detail

using detail::make_op_node;

static void require_2d(const Tensor& t, const char* op) {
  if (t.value().ndim() != 2) throw ShapeError(std::string(op) + ": expected 2-D array, got " + t.value().shape_str());
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  Array c = matmul_value(a.value(), b.value());
  return make_op_node(std::move(c), "matmul", {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    if (pa.requires_grad) {
      // dA = dC * B^T
      Array bt = transpose_value(pb.value);
      Array da = matmul_value(n.grad, bt);
      Array& g = pa.ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += da[i];
    }
    if (pb.requires_grad) {
      // dB = A^T * dC
      Array at = transpose_value(pa.value);
      Array db = matmul_value(at, n.grad);
      Array& g = pb.ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += db[i];
    }
  });
}

Tensor transpose(const Tensor& a) {
  return make_op_node(transpose_value(a.value()), "transpose", {a}, [](Node& n) {
    Node& pa = *n.parents[0];
    if (!pa.requires_grad) return;
    Array gt = transpose_value(n.grad);
    Array& g = pa.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += gt[i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("add: shape mismatch " + a.value().shape_str() + " vs " + b.value().shape_str());
  }
  Array c = a.value();
  for (int64_t i = 0; i < c.numel(); ++i) c[i] += b.value()[i];
  return make_op_node(std::move(c), "add", {a, b}, [](Node& n) {
    for (auto& p : n.parents) {
      if (!p->requires_grad) continue;
      Array& g = p->ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
  });
}

Tensor add_row_bias(const Tensor& a, const Tensor& bias) {
  require_2d(a, "add_row_bias");
  const int64_t rows = a.value().rows(), cols = a.value().cols();
  if (bias.value().numel() != cols) {
    throw ShapeError("add_row_bias: bias length " + std::to_string(bias.value().numel()) + " vs " + std::to_string(cols) + " columns");
  }
  Array c = a.value();
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < cols; ++j) c[r * cols + j] += bias.value()[j];
  }
  return make_op_node(std::move(c), "add_row_bias", {a, bias}, [rows, cols](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    if (pa.requires_grad) {
      Array& g = pa.ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
    }
    if (pb.requires_grad) {
      Array& g = pb.ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < cols; ++j) g[j] += n.grad[r * cols + j];
      }
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  Array v = a.value();
  for (int64_t i = 0; i < v.numel(); ++i) v[i] *= c;
  return make_op_node(std::move(v), "scale", {a}, [c](Node& n) {
    Node& pa = *n.parents[0];
    if (!pa.requires_grad) return;
    Array& g = pa.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += c * n.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (!a.value().same_shape(b.value())) {
    throw ShapeError("mul: shape mismatch " + a.value().shape_str() + " vs " + b.value().shape_str());
  }
  Array c = a.value();
  for (int64_t i = 0; i < c.numel(); ++i) c[i] *= b.value()[i];
  return make_op_node(std::move(c), "mul", {a, b}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    if (pa.requires_grad) {
      Array& g = pa.ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      Array& g = pb.ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * pa.value[i];
    }
  });
}

Tensor relu(const Tensor& a) {
  Array v = a.value();
  for (int64_t i = 0; i < v.numel(); ++i) v[i] = v[i] > 0.0 ? v[i] : 0.0;
  return make_op_node(std::move(v), "relu", {a}, [](Node& n) {
    Node& pa = *n.parents[0];
    if (!pa.requires_grad) return;
    Array& g = pa.ensure_grad();
    // subgradient at 0 is 0
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += pa.value[i] > 0.0 ? n.grad[i] : 0.0;
  });
}

Tensor dropout(const Tensor& a, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  if (rate == 0.0) return a;
  Array v = a.value();
  auto mask = std::make_shared<std::vector<double>>(static_cast<size_t>(v.numel()));
  const double keep = 1.0 - rate;
  for (int64_t i = 0; i < v.numel(); ++i) {
    const double m = rng.uniform() < rate ? 0.0 : 1.0 / keep;
    (*mask)[static_cast<size_t>(i)] = m;
    v[i] *= m;
  }
  return make_op_node(std::move(v), "dropout", {a}, [mask](Node& n) {
    Node& pa = *n.parents[0];
    if (!pa.requires_grad) return;
    Array& g = pa.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i] * (*mask)[static_cast<size_t>(i)];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const Array& xv = x.value();
  if (xv.ndim() < 1) throw ShapeError("layer_norm: scalar input");
  const int64_t d = xv.shape().back();
  if (gain.value().numel() != d || bias.value().numel() != d) {
    throw ShapeError("layer_norm: gain/bias must match last extent " + std::to_string(d));
  }
  const int64_t n_rows = xv.numel() / d;
  Array out(xv.shape());
  auto xhat = std::make_shared<Array>(xv.shape());
  auto inv_sigma = std::make_shared<std::vector<double>>(static_cast<size_t>(n_rows));
  for (int64_t r = 0; r < n_rows; ++r) {
    const double* row = xv.data() + r * d;
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[static_cast<size_t>(r)] = is;
    for (int64_t j = 0; j < d; ++j) {
      const double xh = (row[j] - mean) * is;
      (*xhat)[r * d + j] = xh;
      out[r * d + j] = gain.value()[j] * xh + bias.value()[j];
    }
  }
  return make_op_node(std::move(out), "layer_norm", {x, gain, bias}, [d, n_rows, xhat, inv_sigma](Node& n) {
    Node& px = *n.parents[0];
    Node& pg = *n.parents[1];
    Node& pb = *n.parents[2];
    if (pg.requires_grad) {
      Array& g = pg.ensure_grad();
      for (int64_t r = 0; r < n_rows; ++r) {
        for (int64_t j = 0; j < d; ++j) g[j] += n.grad[r * d + j] * (*xhat)[r * d + j];
      }
    }
    if (pb.requires_grad) {
      Array& g = pb.ensure_grad();
      for (int64_t r = 0; r < n_rows; ++r) {
        for (int64_t j = 0; j < d; ++j) g[j] += n.grad[r * d + j];
      }
    }
    if (px.requires_grad) {
      Array& g = px.ensure_grad();
      for (int64_t r = 0; r < n_rows; ++r) {
        const double is = (*inv_sigma)[static_cast<size_t>(r)];
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int64_t j = 0; j < d; ++j) {
          const double dxhat = n.grad[r * d + j] * pg.value[j];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * (*xhat)[r * d + j];
        }
        const double inv_d = 1.0 / static_cast<double>(d);
        for (int64_t j = 0; j < d; ++j) {
          const double dxhat = n.grad[r * d + j] * pg.value[j];
          g[r * d + j] += is * (dxhat - inv_d * sum_dxhat - (*xhat)[r * d + j] * inv_d * sum_dxhat_xhat);
        }
      }
    }
  });
}

Tensor softmax_log(const Tensor& x, int axis) {
  const Array& xv = x.value();
  const int64_t nd = xv.ndim();
  if (axis < 0) axis += static_cast<int>(nd);
  if (axis < 0 || axis >= nd) throw ShapeError("softmax_log: axis out of range for shape " + xv.shape_str());
  const int64_t len = xv.dim(axis);
  int64_t inner = 1;
  for (int64_t i = axis + 1; i < nd; ++i) inner *= xv.dim(static_cast<int>(i));
  const int64_t outer = xv.numel() / (len * inner);

  Array out(xv.shape());
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * len * inner + in;
      double mx = xv[base];
      for (int64_t k = 1; k < len; ++k) mx = std::max(mx, xv[base + k * inner]);
      double sum = 0.0;
      for (int64_t k = 0; k < len; ++k) sum += std::exp(xv[base + k * inner] - mx);
      const double lse = mx + std::log(sum);
      for (int64_t k = 0; k < len; ++k) out[base + k * inner] = xv[base + k * inner] - lse;
    }
  }
  auto saved = std::make_shared<Array>(out);
  return make_op_node(std::move(out), "softmax_log", {x}, [len, inner, saved](Node& n) {
    Node& px = *n.parents[0];
    if (!px.requires_grad) return;
    Array& g = px.ensure_grad();
    const int64_t outer = n.value.numel() / (len * inner);
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = o * len * inner + in;
        double gsum = 0.0;
        for (int64_t k = 0; k < len; ++k) gsum += n.grad[base + k * inner];
        for (int64_t k = 0; k < len; ++k) {
          g[base + k * inner] += n.grad[base + k * inner] - std::exp((*saved)[base + k * inner]) * gsum;
        }
      }
    }
  });
}

static Tensor softmax_rows_impl(const Tensor& x, const std::vector<uint8_t>* allowed) {
  require_2d(x, "softmax_rows");
  const int64_t rows = x.value().rows(), cols = x.value().cols();
  if (allowed && static_cast<int64_t>(allowed->size()) != rows * cols) {
    throw ShapeError("masked_softmax_rows: mask size mismatch");
  }
  Array out({rows, cols});
  for (int64_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < cols; ++j) {
      if (allowed && !(*allowed)[static_cast<size_t>(r * cols + j)]) continue;
      mx = std::max(mx, x.value()[r * cols + j]);
    }
    if (!std::isfinite(mx)) throw NumericError("masked_softmax_rows: row " + std::to_string(r) + " has no allowed entries");
    double sum = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
      if (allowed && !(*allowed)[static_cast<size_t>(r * cols + j)]) continue;
      sum += std::exp(x.value()[r * cols + j] - mx);
    }
    for (int64_t j = 0; j < cols; ++j) {
      const bool ok = !allowed || (*allowed)[static_cast<size_t>(r * cols + j)];
      out[r * cols + j] = ok ? std::exp(x.value()[r * cols + j] - mx) / sum : 0.0;
    }
  }
  auto probs = std::make_shared<Array>(out);
  return make_op_node(std::move(out), "softmax_rows", {x}, [rows, cols, probs](Node& n) {
    Node& px = *n.parents[0];
    if (!px.requires_grad) return;
    Array& g = px.ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (int64_t j = 0; j < cols; ++j) dot += n.grad[r * cols + j] * (*probs)[r * cols + j];
      for (int64_t j = 0; j < cols; ++j) {
        const double p = (*probs)[r * cols + j];
        g[r * cols + j] += p * (n.grad[r * cols + j] - dot);
      }
    }
  });
}

Tensor softmax_rows(const Tensor& x) { return softmax_rows_impl(x, nullptr); }

Tensor masked_softmax_rows(const Tensor& x, const std::vector<uint8_t>& allowed) {
  return softmax_rows_impl(x, &allowed);
}

Tensor slice_cols(const Tensor& a, int64_t start, int64_t width) {
  require_2d(a, "slice_cols");
  const int64_t rows = a.value().rows(), cols = a.value().cols();
  if (start < 0 || width <= 0 || start + width > cols) {
    throw ShapeError("slice_cols: invalid range [" + std::to_string(start) + ", " + std::to_string(start + width) + ") for " + std::to_string(cols) + " columns");
  }
  Array out({rows, width});
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t j = 0; j < width; ++j) out[r * width + j] = a.value()[r * cols + start + j];
  }
  return make_op_node(std::move(out), "slice_cols", {a}, [rows, cols, start, width](Node& n) {
    Node& pa = *n.parents[0];
    if (!pa.requires_grad) return;
    Array& g = pa.ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t j = 0; j < width; ++j) g[r * cols + start + j] += n.grad[r * width + j];
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const int64_t rows = parts[0].value().rows();
  int64_t total = 0;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_cols");
    if (p.value().rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    total += p.value().cols();
  }
  Array out({rows, total});
  std::vector<int64_t> offsets(parts.size());
  int64_t off = 0;
  for (size_t i = 0; i < parts.size(); ++i) {
    offsets[i] = off;
    const Array& v = parts[i].value();
    for (int64_t r = 0; r < rows; ++r) {
      for (int64_t j = 0; j < v.cols(); ++j) out[r * total + off + j] = v[r * v.cols() + j];
    }
    off += v.cols();
  }
  return make_op_node(std::move(out), "concat_cols", parts, [rows, total, offsets](Node& n) {
    for (size_t i = 0; i < n.parents.size(); ++i) {
      Node& p = *n.parents[i];
      if (!p.requires_grad) continue;
      Array& g = p.ensure_grad();
      const int64_t w = p.value.cols();
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t j = 0; j < w; ++j) g[r * w + j] += n.grad[r * total + offsets[i] + j];
      }
    }
  });
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (int64_t i = 0; i < a.value().numel(); ++i) s += a.value()[i];
  return make_op_node(Array({1}, {s}), "sum_all", {a}, [](Node& n) {
    Node& pa = *n.parents[0];
    if (!pa.requires_grad) return;
    Array& g = pa.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[0];
  });
}

Tensor pick_nll(const Tensor& logprobs, const std::vector<int>& ids, double label_smoothing) {
  require_2d(logprobs, "pick_nll");
  const int64_t rows = logprobs.value().rows(), cols = logprobs.value().cols();
  if (static_cast<int64_t>(ids.size()) != rows) {
    throw ShapeError("pick_nll: " + std::to_string(ids.size()) + " targets for " + std::to_string(rows) + " rows");
  }
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw ConfigError("pick_nll: label_smoothing must be in [0, 1)");
  for (int id : ids) {
    if (id < 0 || id >= cols) throw InputError("pick_nll: target id " + std::to_string(id) + " out of range");
  }
  const double on = 1.0 - label_smoothing;
  const double off = label_smoothing / static_cast<double>(cols);
  double loss = 0.0;
  for (int64_t r = 0; r < rows; ++r) {
    loss -= on * logprobs.value()[r * cols + ids[static_cast<size_t>(r)]];
    if (label_smoothing > 0.0) {
      for (int64_t j = 0; j < cols; ++j) loss -= off * logprobs.value()[r * cols + j];
    }
  }
  auto ids_copy = std::make_shared<std::vector<int>>(ids);
  return make_op_node(Array({1}, {loss}), "pick_nll", {logprobs}, [rows, cols, on, off, label_smoothing, ids_copy](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    Array& g = p.ensure_grad();
    const double go = n.grad[0];
    for (int64_t r = 0; r < rows; ++r) {
      g[r * cols + (*ids_copy)[static_cast<size_t>(r)]] -= go * on;
      if (label_smoothing > 0.0) {
        for (int64_t j = 0; j < cols; ++j) g[r * cols + j] -= go * off;
      }
    }
  });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  require_2d(table, "embedding_lookup");
  const int64_t vocab = table.value().rows(), d = table.value().cols();
  const int64_t n = static_cast<int64_t>(ids.size());
  if (n == 0) throw InputError("embedding_lookup: empty id list");
  for (int id : ids) {
    if (id < 0 || id >= vocab) throw InputError("embedding_lookup: token id " + std::to_string(id) + " out of range [0, " + std::to_string(vocab) + ")");
  }
  Array out({n, d});
  for (int64_t r = 0; r < n; ++r) {
    const double* src = table.value().data() + static_cast<int64_t>(ids[static_cast<size_t>(r)]) * d;
    for (int64_t j = 0; j < d; ++j) out[r * d + j] = src[j];
  }
  auto ids_copy = std::make_shared<std::vector<int>>(ids);
  return make_op_node(std::move(out), "embedding_lookup", {table}, [n, d, ids_copy](Node& nd_) {
    Node& p = *nd_.parents[0];
    if (!p.requires_grad) return;
    Array& g = p.ensure_grad();
    for (int64_t r = 0; r < n; ++r) {
      double* dst = g.data() + static_cast<int64_t>((*ids_copy)[static_cast<size_t>(r)]) * d;
      for (int64_t j = 0; j < d; ++j) dst[j] += nd_.grad[r * d + j];
    }
  });
}

// im2col for 3x3 stride-2 pad-1: columns indexed by output position.
static Array im2col_s2(const Array& x, int64_t t_out, int64_t f_out) {
  const int64_t c_in = x.dim(0), t_in = x.dim(1), f_in = x.dim(2);
  Array cols({c_in * 9, t_out * f_out});
  for (int64_t c = 0; c < c_in; ++c) {
    for (int64_t dt = 0; dt < 3; ++dt) {
      for (int64_t df = 0; df < 3; ++df) {
        const int64_t row = (c * 3 + dt) * 3 + df;
        for (int64_t to = 0; to < t_out; ++to) {
          const int64_t ti = 2 * to + dt - 1;
          for (int64_t fo = 0; fo < f_out; ++fo) {
            const int64_t fi = 2 * fo + df - 1;
            double v = 0.0;
            if (ti >= 0 && ti < t_in && fi >= 0 && fi < f_in) v = x[(c * t_in + ti) * f_in + fi];
            cols[row * (t_out * f_out) + to * f_out + fo] = v;
          }
        }
      }
    }
  }
  return cols;
}

Tensor conv2d_s2(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.value().ndim() != 3) throw ShapeError("conv2d_s2: input must be (C, T, F), got " + x.value().shape_str());
  const int64_t c_in = x.value().dim(0), t_in = x.value().dim(1), f_in = x.value().dim(2);
  if (weight.value().ndim() != 2 || weight.value().cols() != c_in * 9) {
    throw ShapeError("conv2d_s2: weight must be (C_out, C_in*9), got " + weight.value().shape_str());
  }
  const int64_t c_out = weight.value().rows();
  if (bias.value().numel() != c_out) throw ShapeError("conv2d_s2: bias size mismatch");
  const int64_t t_out = (t_in + 1) / 2, f_out = (f_in + 1) / 2;

  Array cols = im2col_s2(x.value(), t_out, f_out);
  Array prod = matmul_value(weight.value(), cols);  // (C_out, t_out*f_out)
  Array out({c_out, t_out, f_out});
  for (int64_t c = 0; c < c_out; ++c) {
    for (int64_t i = 0; i < t_out * f_out; ++i) out[c * t_out * f_out + i] = prod[c * t_out * f_out + i] + bias.value()[c];
  }
  auto saved_cols = std::make_shared<Array>(std::move(cols));
  return make_op_node(std::move(out), "conv2d_s2", {x, weight, bias}, [c_in, t_in, f_in, c_out, t_out, f_out, saved_cols](Node& n) {
    Node& px = *n.parents[0];
    Node& pw = *n.parents[1];
    Node& pb = *n.parents[2];
    Array dout({c_out, t_out * f_out});
    for (int64_t i = 0; i < dout.numel(); ++i) dout[i] = n.grad[i];
    if (pb.requires_grad) {
      Array& g = pb.ensure_grad();
      for (int64_t c = 0; c < c_out; ++c) {
        for (int64_t i = 0; i < t_out * f_out; ++i) g[c] += dout[c * t_out * f_out + i];
      }
    }
    if (pw.requires_grad) {
      Array colsT = transpose_value(*saved_cols);
      Array dw = matmul_value(dout, colsT);
      Array& g = pw.ensure_grad();
      for (int64_t i = 0; i < g.numel(); ++i) g[i] += dw[i];
    }
    if (px.requires_grad) {
      Array wT = transpose_value(pw.value);
      Array dcols = matmul_value(wT, dout);  // (C_in*9, t_out*f_out)
      Array& g = px.ensure_grad();
      for (int64_t c = 0; c < c_in; ++c) {
        for (int64_t dt = 0; dt < 3; ++dt) {
          for (int64_t df = 0; df < 3; ++df) {
            const int64_t row = (c * 3 + dt) * 3 + df;
            for (int64_t to = 0; to < t_out; ++to) {
              const int64_t ti = 2 * to + dt - 1;
              if (ti < 0 || ti >= t_in) continue;
              for (int64_t fo = 0; fo < f_out; ++fo) {
                const int64_t fi = 2 * fo + df - 1;
                if (fi < 0 || fi >= f_in) continue;
                g[(c * t_in + ti) * f_in + fi] += dcols[row * (t_out * f_out) + to * f_out + fo];
              }
            }
          }
        }
      }
    }
  });
}

Tensor channels_to_rows(const Tensor& x) {
  if (x.value().ndim() != 3) throw ShapeError("channels_to_rows: input must be (C, T, F), got " + x.value().shape_str());
  const int64_t c = x.value().dim(0), t = x.value().dim(1), f = x.value().dim(2);
  Array out({t, c * f});
  for (int64_t ci = 0; ci < c; ++ci) {
    for (int64_t ti = 0; ti < t; ++ti) {
      for (int64_t fi = 0; fi < f; ++fi) out[ti * (c * f) + ci * f + fi] = x.value()[(ci * t + ti) * f + fi];
    }
  }
  return make_op_node(std::move(out), "channels_to_rows", {x}, [c, t, f](Node& n) {
    Node& px = *n.parents[0];
    if (!px.requires_grad) return;
    Array& g = px.ensure_grad();
    for (int64_t ci = 0; ci < c; ++ci) {
      for (int64_t ti = 0; ti < t; ++ti) {
        for (int64_t fi = 0; fi < f; ++fi) g[(ci * t + ti) * f + fi] += n.grad[ti * (c * f) + ci * f + fi];
      }
    }
  });
}

Tensor reshape(const Tensor& a, std::vector<int64_t> new_shape) {
  Array out(std::move(new_shape), a.value().vec());
  return make_op_node(std::move(out), "reshape", {a}, [](Node& n) {
    Node& pa = *n.parents[0];
    if (!pa.requires_grad) return;
    Array& g = pa.ensure_grad();
    for (int64_t i = 0; i < g.numel(); ++i) g[i] += n.grad[i];
  });
}

double finite_diff_check(const std::function<Tensor()>& build_loss, std::vector<Tensor> params, double h) {
  if (h <= 0.0) throw ConfigError("finite_diff_check: h must be positive");

  Tape tape;
  std::vector<Array> analytic;
  {
    TapeScope scope(tape);
    for (Tensor& p : params) p.zero_grad();
    Tensor loss = build_loss();
    if (!std::isfinite(loss.value()[0])) throw NumericError("finite_diff_check: non-finite loss value");
    tape.backward(loss);
    for (Tensor& p : params) analytic.push_back(p.ensure_grad());
  }

  auto eval = [&]() {
    Tensor loss = build_loss();  // no active tape: value-only
    const double v = loss.value()[0];
    if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite loss during perturbation");
    return v;
  };

  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Array& value = params[pi].value();
    for (int64_t i = 0; i < value.numel(); ++i) {
      const double saved = value[i];
      value[i] = saved + h;
      const double up = eval();
      value[i] = saved - h;
      const double down = eval();
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[pi][i] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace brst
