#include "svc/graph.hpp"

#include <cassert>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace svc {

int Graph::push(Tensor val, bool needs_grad, std::function<void(Graph&)> back) {
  Node n;
  n.val = std::move(val);
  n.needs_grad = needs_grad && track();
  if (n.needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Graph::constant(Tensor t) { return push(std::move(t), false, nullptr); }

int Graph::param(const std::string& name) {
  auto it = param_cache_.find(name);
  if (it != param_cache_.end()) return it->second;
  const ParamView v = store_->view(name);
  Tensor t(v.rows, v.cols);
  std::memcpy(t.v.data(), store_->data(v), v.size() * sizeof(Real));
  const size_t off = v.offset;
  int id = push(std::move(t), true, nullptr);
  if (nodes_[id].needs_grad) {
    std::vector<Real>* gout = grad_out_;
    nodes_[id].back = [id, off, gout](Graph& g) {
      const Tensor& gr = g.grad(id);
      for (size_t i = 0; i < gr.size(); ++i) (*gout)[off + i] += gr.v[i];
    };
  }
  param_cache_[name] = id;
  return id;
}

int Graph::gather_param_rows(const std::string& name, std::vector<int> idx) {
  const ParamView v = store_->view(name);
  Tensor out(static_cast<int>(idx.size()), v.cols);
  const Real* base = store_->data(v);
  for (size_t i = 0; i < idx.size(); ++i)
    std::memcpy(out.row(static_cast<int>(i)), base + static_cast<size_t>(idx[i]) * v.cols,
                v.cols * sizeof(Real));
  int id = push(std::move(out), true, nullptr);
  if (nodes_[id].needs_grad) {
    std::vector<Real>* gout = grad_out_;
    const size_t off = v.offset;
    const int cols = v.cols;
    nodes_[id].back = [id, off, cols, gout, idx = std::move(idx)](Graph& g) {
      const Tensor& gr = g.grad(id);
      for (size_t i = 0; i < idx.size(); ++i) {
        const Real* src = gr.row(static_cast<int>(i));
        Real* dst = gout->data() + off + static_cast<size_t>(idx[i]) * cols;
        for (int c = 0; c < cols; ++c) dst[c] += src[c];
      }
    };
  }
  return id;
}

int Graph::add(int a, int b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  assert(ta.same_shape(tb));
  Tensor out = ta;
  for (size_t i = 0; i < out.size(); ++i) out.v[i] += tb.v[i];
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  int id = push(std::move(out), ng, nullptr);
  if (nodes_[id].needs_grad)
    nodes_[id].back = [id, a, b](Graph& g) {
      const Tensor& gr = g.grad(id);
      if (g.nodes_[a].needs_grad) {
        Tensor& ga = g.grad(a);
        for (size_t i = 0; i < gr.size(); ++i) ga.v[i] += gr.v[i];
      }
      if (g.nodes_[b].needs_grad) {
        Tensor& gb = g.grad(b);
        for (size_t i = 0; i < gr.size(); ++i) gb.v[i] += gr.v[i];
      }
    };
  return id;
}

int Graph::scale(int a, Real s) {
  const Tensor& ta = value(a);
  Tensor out = ta;
  for (auto& x : out.v) x *= s;
  int id = push(std::move(out), nodes_[a].needs_grad, nullptr);
  if (nodes_[id].needs_grad)
    nodes_[id].back = [id, a, s](Graph& g) {
      const Tensor& gr = g.grad(id);
      Tensor& ga = g.grad(a);
      for (size_t i = 0; i < gr.size(); ++i) ga.v[i] += s * gr.v[i];
    };
  return id;
}

int Graph::mul(int a, int b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  assert(ta.same_shape(tb));
  Tensor out = ta;
  for (size_t i = 0; i < out.size(); ++i) out.v[i] *= tb.v[i];
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  int id = push(std::move(out), ng, nullptr);
  if (nodes_[id].needs_grad)
    nodes_[id].back = [id, a, b](Graph& g) {
      const Tensor& gr = g.grad(id);
      const Tensor& ta2 = g.value(a);
      const Tensor& tb2 = g.value(b);
      Tensor& ga = g.grad(a);
      Tensor& gb = g.grad(b);
      for (size_t i = 0; i < gr.size(); ++i) {
        ga.v[i] += gr.v[i] * tb2.v[i];
        gb.v[i] += gr.v[i] * ta2.v[i];
      }
    };
  return id;
}

int Graph::silu_op(int a) {
  const Tensor& ta = value(a);
  Tensor out(ta.rows, ta.cols);
  for (size_t i = 0; i < out.size(); ++i) out.v[i] = silu(ta.v[i]);
  int id = push(std::move(out), nodes_[a].needs_grad, nullptr);
  if (nodes_[id].needs_grad)
    nodes_[id].back = [id, a](Graph& g) {
      const Tensor& gr = g.grad(id);
      const Tensor& x = g.value(a);
      Tensor& ga = g.grad(a);
      for (size_t i = 0; i < gr.size(); ++i) {
        const Real s = 1.0 / (1.0 + std::exp(-x.v[i]));
        ga.v[i] += gr.v[i] * (s + x.v[i] * s * (1.0 - s));
      }
    };
  return id;
}

int Graph::matmul(int a, int b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.cols != tb.rows) throw std::invalid_argument("matmul shape mismatch");
  Tensor out(ta.rows, tb.cols);
  matmul_acc(ta, tb, out);
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  int id = push(std::move(out), ng, nullptr);
  if (nodes_[id].needs_grad)
    nodes_[id].back = [id, a, b](Graph& g) {
      const Tensor& gr = g.grad(id);
      if (g.nodes_[a].needs_grad) matmul_nt_acc(gr, g.value(b), g.grad(a));
      if (g.nodes_[b].needs_grad) matmul_tn_acc(g.value(a), gr, g.grad(b));
    };
  return id;
}

int Graph::matmul_nt(int a, int b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  if (ta.cols != tb.cols) throw std::invalid_argument("matmul_nt shape mismatch");
  Tensor out(ta.rows, tb.rows);
  matmul_nt_acc(ta, tb, out);
  bool ng = nodes_[a].needs_grad || nodes_[b].needs_grad;
  int id = push(std::move(out), ng, nullptr);
  if (nodes_[id].needs_grad)
    nodes_[id].back = [id, a, b](Graph& g) {
      const Tensor& gr = g.grad(id);  // (m, n): d a(m,k) = gr * b ; d b(n,k) = gr^T * a
      if (g.nodes_[a].needs_grad) matmul_acc(gr, g.value(b), g.grad(a));
      if (g.nodes_[b].needs_grad) matmul_tn_acc(gr, g.value(a), g.grad(b));
    };
  return id;
}

int Graph::rmsnorm(int a, int gain) {
  const Tensor& x = value(a);
  const Tensor& gn = value(gain);
  assert(gn.rows == 1 && gn.cols == x.cols);
  Tensor out(x.rows, x.cols);
  for (int r = 0; r < x.rows; ++r)
    rmsnorm_row(x.row(r), gn.row(0), out.row(r), x.cols);
  bool ng = nodes_[a].needs_grad || nodes_[gain].needs_grad;
  int id = push(std::move(out), ng, nullptr);
  if (nodes_[id].needs_grad)
    nodes_[id].back = [id, a, gain](Graph& g) {
      const Tensor& gr = g.grad(id);
      const Tensor& x2 = g.value(a);
      const Tensor& gn2 = g.value(gain);
      const int n = x2.cols;
      const Real eps = 1e-6;
      for (int r = 0; r < x2.rows; ++r) {
        const Real* xr = x2.row(r);
        const Real* gr_r = gr.row(r);
        Real ss = 0.0;
        for (int i = 0; i < n; ++i) ss += xr[i] * xr[i];
        const Real ms = ss / n + eps;
        const Real inv = 1.0 / std::sqrt(ms);
        // y_i = x_i * inv * g_i ; dx_j = sum_i dy_i g_i (δij inv - x_i x_j inv^3 / n)
        Real dot_dyxg = 0.0;
        for (int i = 0; i < n; ++i) dot_dyxg += gr_r[i] * gn2.v[i] * xr[i];
        if (g.nodes_[a].needs_grad) {
          Real* ga = g.grad(a).row(r);
          const Real c = dot_dyxg * inv * inv * inv / n;
          for (int j = 0; j < n; ++j)
            ga[j] += gr_r[j] * gn2.v[j] * inv - c * xr[j];
        }
        if (g.nodes_[gain].needs_grad) {
          Real* gg = g.grad(gain).row(0);
          for (int i = 0; i < n; ++i) gg[i] += gr_r[i] * xr[i] * inv;
        }
      }
    };
  return id;
}

namespace {
// dsoftmax shared by the plain and masked variants. y is the softmax output.
void softmax_backward_row(const Real* y, const Real* dy, Real* dx, int n) {
  Real s = 0.0;
  for (int i = 0; i < n; ++i) s += dy[i] * y[i];
  for (int i = 0; i < n; ++i) dx[i] += y[i] * (dy[i] - s);
}
}  // namespace

int Graph::softmax_rows(int a) {
  const Tensor& x = value(a);
  Tensor out = x;
  for (int r = 0; r < out.rows; ++r) softmax_inplace(out.row(r), out.cols);
  int id = push(std::move(out), nodes_[a].needs_grad, nullptr);
  if (nodes_[id].needs_grad)
    nodes_[id].back = [id, a](Graph& g) {
      const Tensor& y = g.value(id);
      const Tensor& gr = g.grad(id);
      Tensor& ga = g.grad(a);
      for (int r = 0; r < y.rows; ++r)
        softmax_backward_row(y.row(r), gr.row(r), ga.row(r), y.cols);
    };
  return id;
}

int Graph::attn_softmax_rows(int a, AttnMask mode, int block) {
  const Tensor& x = value(a);
  Tensor out(x.rows, x.cols);
  for (int r = 0; r < x.rows; ++r) {
    int lo = 0, hi = x.cols;  // visible key range [lo, hi)
    if (mode == AttnMask::Causal) {
      hi = r + 1;
    } else if (mode == AttnMask::BlockCausal) {
      lo = (r / block) * block;
      hi = r + 1;
    }
    std::vector<Real> tmp(x.row(r) + lo, x.row(r) + hi);
    softmax_inplace(tmp.data(), hi - lo);
    Real* orow = out.row(r);
    for (int j = lo; j < hi; ++j) orow[j] = tmp[j - lo];
  }
  int id = push(std::move(out), nodes_[a].needs_grad, nullptr);
  if (nodes_[id].needs_grad)
    nodes_[id].back = [id, a, mode, block](Graph& g) {
      const Tensor& y = g.value(id);
      const Tensor& gr = g.grad(id);
      Tensor& ga = g.grad(a);
      for (int r = 0; r < y.rows; ++r) {
        int lo = 0, hi = y.cols;
        if (mode == AttnMask::Causal) {
          hi = r + 1;
        } else if (mode == AttnMask::BlockCausal) {
          lo = (r / block) * block;
          hi = r + 1;
        }
        softmax_backward_row(y.row(r) + lo, gr.row(r) + lo, ga.row(r) + lo,
                             hi - lo);
      }
    };
  return id;
}

int Graph::gather_rows(int a, std::vector<int> idx) {
  const Tensor& x = value(a);
  Tensor out(static_cast<int>(idx.size()), x.cols);
  for (size_t i = 0; i < idx.size(); ++i)
    std::memcpy(out.row(static_cast<int>(i)), x.row(idx[i]),
                x.cols * sizeof(Real));
  int id = push(std::move(out), nodes_[a].needs_grad, nullptr);
  if (nodes_[id].needs_grad)
    nodes_[id].back = [id, a, idx = std::move(idx)](Graph& g) {
      const Tensor& gr = g.grad(id);
      Tensor& ga = g.grad(a);
      for (size_t i = 0; i < idx.size(); ++i) {
        const Real* src = gr.row(static_cast<int>(i));
        Real* dst = ga.row(idx[i]);
        for (int c = 0; c < gr.cols; ++c) dst[c] += src[c];
      }
    };
  return id;
}

int Graph::slice_cols(int a, int c0, int c1) {
  const Tensor& x = value(a);
  Tensor out(x.rows, c1 - c0);
  for (int r = 0; r < x.rows; ++r)
    std::memcpy(out.row(r), x.row(r) + c0, (c1 - c0) * sizeof(Real));
  int id = push(std::move(out), nodes_[a].needs_grad, nullptr);
  if (nodes_[id].needs_grad)
    nodes_[id].back = [id, a, c0, c1](Graph& g) {
      const Tensor& gr = g.grad(id);
      Tensor& ga = g.grad(a);
      for (int r = 0; r < gr.rows; ++r) {
        const Real* src = gr.row(r);
        Real* dst = ga.row(r) + c0;
        for (int c = 0; c < c1 - c0; ++c) dst[c] += src[c];
      }
    };
  return id;
}

int Graph::concat_cols(const std::vector<int>& parts) {
  int rows = value(parts[0]).rows;
  int cols = 0;
  bool ng = false;
  for (int p : parts) {
    assert(value(p).rows == rows);
    cols += value(p).cols;
    ng = ng || nodes_[p].needs_grad;
  }
  Tensor out(rows, cols);
  int off = 0;
  for (int p : parts) {
    const Tensor& t = value(p);
    for (int r = 0; r < rows; ++r)
      std::memcpy(out.row(r) + off, t.row(r), t.cols * sizeof(Real));
    off += t.cols;
  }
  int id = push(std::move(out), ng, nullptr);
  if (nodes_[id].needs_grad)
    nodes_[id].back = [id, parts](Graph& g) {
      const Tensor& gr = g.grad(id);
      int off2 = 0;
      for (int p : parts) {
        Tensor& gp = g.grad(p);
        if (g.nodes_[p].needs_grad) {
          for (int r = 0; r < gr.rows; ++r) {
            const Real* src = gr.row(r) + off2;
            Real* dst = gp.row(r);
            for (int c = 0; c < gp.cols; ++c) dst[c] += src[c];
          }
        }
        off2 += g.value(p).cols;
      }
    };
  return id;
}

int Graph::concat_rows(const std::vector<int>& parts) {
  int cols = value(parts[0]).cols;
  int rows = 0;
  bool ng = false;
  for (int p : parts) {
    assert(value(p).cols == cols);
    rows += value(p).rows;
    ng = ng || nodes_[p].needs_grad;
  }
  Tensor out(rows, cols);
  int off = 0;
  for (int p : parts) {
    const Tensor& t = value(p);
    std::memcpy(out.row(off), t.v.data(), t.size() * sizeof(Real));
    off += t.rows;
  }
  int id = push(std::move(out), ng, nullptr);
  if (nodes_[id].needs_grad)
    nodes_[id].back = [id, parts](Graph& g) {
      const Tensor& gr = g.grad(id);
      int off2 = 0;
      for (int p : parts) {
        if (g.nodes_[p].needs_grad) {
          Tensor& gp = g.grad(p);
          for (size_t i = 0; i < gp.size(); ++i)
            gp.v[i] += gr.v[off2 * gr.cols + i];
        }
        off2 += g.value(p).rows;
      }
    };
  return id;
}

int Graph::mean_pool2_rows(int a) {
  const Tensor& x = value(a);
  assert(x.rows % 2 == 0);
  Tensor out(x.rows / 2, x.cols);
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < x.cols; ++c)
      out.at(r, c) = 0.5 * (x.at(2 * r, c) + x.at(2 * r + 1, c));
  int id = push(std::move(out), nodes_[a].needs_grad, nullptr);
  if (nodes_[id].needs_grad)
    nodes_[id].back = [id, a](Graph& g) {
      const Tensor& gr = g.grad(id);
      Tensor& ga = g.grad(a);
      for (int r = 0; r < gr.rows; ++r)
        for (int c = 0; c < gr.cols; ++c) {
          ga.at(2 * r, c) += 0.5 * gr.at(r, c);
          ga.at(2 * r + 1, c) += 0.5 * gr.at(r, c);
        }
    };
  return id;
}

int Graph::replace_rows(int a, std::vector<int> idx, int rowvec) {
  const Tensor& x = value(a);
  const Tensor& rv = value(rowvec);
  assert(rv.rows == 1 && rv.cols == x.cols);
  Tensor out = x;
  for (int r : idx)
    std::memcpy(out.row(r), rv.row(0), x.cols * sizeof(Real));
  bool ng = nodes_[a].needs_grad || nodes_[rowvec].needs_grad;
  int id = push(std::move(out), ng, nullptr);
  if (nodes_[id].needs_grad)
    nodes_[id].back = [id, a, rowvec, idx = std::move(idx)](Graph& g) {
      const Tensor& gr = g.grad(id);
      std::vector<uint8_t> replaced(gr.rows, 0);
      for (int r : idx) replaced[r] = 1;
      if (g.nodes_[a].needs_grad) {
        Tensor& ga = g.grad(a);
        for (int r = 0; r < gr.rows; ++r) {
          if (replaced[r]) continue;
          const Real* src = gr.row(r);
          Real* dst = ga.row(r);
          for (int c = 0; c < gr.cols; ++c) dst[c] += src[c];
        }
      }
      if (g.nodes_[rowvec].needs_grad) {
        Real* gv = g.grad(rowvec).row(0);
        for (int r = 0; r < gr.rows; ++r) {
          if (!replaced[r]) continue;
          const Real* src = gr.row(r);
          for (int c = 0; c < gr.cols; ++c) gv[c] += src[c];
        }
      }
    };
  return id;
}

int Graph::ce_mean(int logits, std::vector<int> targets) {
  const Tensor& x = value(logits);
  assert(static_cast<int>(targets.size()) == x.rows);
  int count = 0;
  Real total = 0.0;
  Tensor probs(x.rows, x.cols);
  for (int r = 0; r < x.rows; ++r) {
    std::memcpy(probs.row(r), x.row(r), x.cols * sizeof(Real));
    softmax_inplace(probs.row(r), x.cols);
    if (targets[r] < 0) continue;
    ++count;
    total -= std::log(std::max(probs.at(r, targets[r]), Real(1e-300)));
  }
  if (count == 0) throw std::invalid_argument("ce_mean: no valid targets");
  Tensor out(1, 1);
  out.v[0] = total / count;
  int id = push(std::move(out), nodes_[logits].needs_grad, nullptr);
  if (nodes_[id].needs_grad)
    nodes_[id].back = [id, logits, targets = std::move(targets),
                       probs = std::move(probs), count](Graph& g) {
      const Real gscale = g.grad(id).v[0] / count;
      Tensor& gl = g.grad(logits);
      for (int r = 0; r < probs.rows; ++r) {
        if (targets[r] < 0) continue;
        const Real* pr = probs.row(r);
        Real* gr = gl.row(r);
        for (int c = 0; c < probs.cols; ++c) gr[c] += gscale * pr[c];
        gr[targets[r]] -= gscale;
      }
    };
  return id;
}

int Graph::mse_mean(int a, Tensor target) {
  const Tensor& x = value(a);
  assert(x.same_shape(target));
  Real total = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const Real d = x.v[i] - target.v[i];
    total += d * d;
  }
  Tensor out(1, 1);
  out.v[0] = total / static_cast<Real>(x.size());
  int id = push(std::move(out), nodes_[a].needs_grad, nullptr);
  if (nodes_[id].needs_grad)
    nodes_[id].back = [id, a, target = std::move(target)](Graph& g) {
      const Tensor& x2 = g.value(a);
      const Real gscale = g.grad(id).v[0] * 2.0 / static_cast<Real>(x2.size());
      Tensor& ga = g.grad(a);
      for (size_t i = 0; i < x2.size(); ++i)
        ga.v[i] += gscale * (x2.v[i] - target.v[i]);
    };
  return id;
}

int Graph::add_scalars(const std::vector<int>& terms) {
  Tensor out(1, 1);
  bool ng = false;
  for (int t : terms) {
    out.v[0] += value(t).v[0];
    ng = ng || nodes_[t].needs_grad;
  }
  int id = push(std::move(out), ng, nullptr);
  if (nodes_[id].needs_grad)
    nodes_[id].back = [id, terms](Graph& g) {
      const Real gr = g.grad(id).v[0];
      for (int t : terms)
        if (g.nodes_[t].needs_grad) g.grad(t).v[0] += gr;
    };
  return id;
}

void Graph::backward(int scalar_node) {
  if (!track()) throw StateError("backward on inference-only graph");
  assert(value(scalar_node).size() == 1);
  for (auto& n : nodes_) {
    n.grad = Tensor(n.val.rows, n.val.cols);
  }
  nodes_[scalar_node].grad.v[0] = 1.0;
  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.needs_grad && n.back) n.back(*this);
  }
}

}  // namespace svc
