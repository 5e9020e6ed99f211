#include "numkit/tape.hpp"

#include <cmath>
#include <string>

#include "common/error.hpp"

namespace shapguard::numkit {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + " shape mismatch: " + a.shape_str() + " vs " +
                     b.shape_str());
  }
}

}  // namespace

Value Tape::push(Tensor v, bool requires_grad, BackFn fn) {
  nodes_.push_back(Node{std::move(v), requires_grad, std::move(fn)});
  adjoints_.emplace_back();
  return Value{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::check(Value v) const {
  if (!v.valid() || v.id >= nodes_.size()) {
    throw ConfigError("value handle does not belong to this tape");
  }
}

Tensor& Tape::adj_buffer(std::uint32_t id) {
  Tensor& adj = adjoints_[id];
  if (adj.empty()) adj = Tensor::zeros(nodes_[id].value.shape());
  return adj;
}

Value Tape::constant(Tensor v) {
  ensure_finite(v, "constant");
  return push(std::move(v), false, nullptr);
}

Value Tape::param(Tensor v) {
  ensure_finite(v, "param");
  return push(std::move(v), true, nullptr);
}

Value Tape::add(Value a, Value b) {
  check(a);
  check(b);
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  check_same_shape(ta, tb, "add");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) += tb.at(i);
  ensure_finite(out, "add");
  const std::uint32_t ia = a.id, ib = b.id;
  return push(std::move(out), needs(a) || needs(b),
              [ia, ib](Tape& t, std::uint32_t, const Tensor& adj) {
                if (t.nodes_[ia].requires_grad) {
                  Tensor& ga = t.adj_buffer(ia);
                  for (std::size_t i = 0; i < adj.numel(); ++i) ga.at(i) += adj.at(i);
                }
                if (t.nodes_[ib].requires_grad) {
                  Tensor& gb = t.adj_buffer(ib);
                  for (std::size_t i = 0; i < adj.numel(); ++i) gb.at(i) += adj.at(i);
                }
              });
}

Value Tape::sub(Value a, Value b) {
  check(a);
  check(b);
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  check_same_shape(ta, tb, "sub");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) -= tb.at(i);
  ensure_finite(out, "sub");
  const std::uint32_t ia = a.id, ib = b.id;
  return push(std::move(out), needs(a) || needs(b),
              [ia, ib](Tape& t, std::uint32_t, const Tensor& adj) {
                if (t.nodes_[ia].requires_grad) {
                  Tensor& ga = t.adj_buffer(ia);
                  for (std::size_t i = 0; i < adj.numel(); ++i) ga.at(i) += adj.at(i);
                }
                if (t.nodes_[ib].requires_grad) {
                  Tensor& gb = t.adj_buffer(ib);
                  for (std::size_t i = 0; i < adj.numel(); ++i) gb.at(i) -= adj.at(i);
                }
              });
}

Value Tape::mul(Value a, Value b) {
  check(a);
  check(b);
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  check_same_shape(ta, tb, "mul");
  Tensor out = ta;
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) *= tb.at(i);
  ensure_finite(out, "mul");
  const std::uint32_t ia = a.id, ib = b.id;
  return push(std::move(out), needs(a) || needs(b),
              [ia, ib](Tape& t, std::uint32_t, const Tensor& adj) {
                const Tensor& va = t.nodes_[ia].value;
                const Tensor& vb = t.nodes_[ib].value;
                if (t.nodes_[ia].requires_grad) {
                  Tensor& ga = t.adj_buffer(ia);
                  for (std::size_t i = 0; i < adj.numel(); ++i)
                    ga.at(i) += adj.at(i) * vb.at(i);
                }
                if (t.nodes_[ib].requires_grad) {
                  Tensor& gb = t.adj_buffer(ib);
                  for (std::size_t i = 0; i < adj.numel(); ++i)
                    gb.at(i) += adj.at(i) * va.at(i);
                }
              });
}

Value Tape::matmul(Value a, Value b) {
  check(a);
  check(b);
  Tensor out = kernels::matmul(nodes_[a.id].value, nodes_[b.id].value);
  ensure_finite(out, "matmul");
  const std::uint32_t ia = a.id, ib = b.id;
  return push(std::move(out), needs(a) || needs(b),
              [ia, ib](Tape& t, std::uint32_t, const Tensor& adj) {
                const Tensor& va = t.nodes_[ia].value;  // m x k
                const Tensor& vb = t.nodes_[ib].value;  // k x n
                const std::size_t m = va.rows(), k = va.cols(), n = vb.cols();
                if (t.nodes_[ia].requires_grad) {
                  // dA += adj * B^T
                  Tensor& ga = t.adj_buffer(ia);
                  for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t l = 0; l < k; ++l) {
                      double acc = 0.0;
                      const double* arow = adj.data() + i * n;
                      const double* brow = vb.data() + l * n;
                      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
                      ga.at(i, l) += acc;
                    }
                }
                if (t.nodes_[ib].requires_grad) {
                  // dB += A^T * adj
                  Tensor& gb = t.adj_buffer(ib);
                  for (std::size_t i = 0; i < m; ++i) {
                    const double* xrow = va.data() + i * k;
                    const double* arow = adj.data() + i * n;
                    for (std::size_t l = 0; l < k; ++l) {
                      const double v = xrow[l];
                      double* grow = gb.data() + l * n;
                      for (std::size_t j = 0; j < n; ++j) grow[j] += v * arow[j];
                    }
                  }
                }
              });
}

Value Tape::affine(Value x, Value w, Value bias) {
  return affine(x, w, Value{}, Value{}, bias);
}

Value Tape::affine(Value x, Value w, Value h, Value u, Value bias) {
  check(x);
  check(w);
  check(bias);
  const bool recurrent = h.valid();
  if (recurrent) {
    check(h);
    check(u);
  }
  static const Tensor kEmpty;
  const Tensor& th = recurrent ? nodes_[h.id].value : kEmpty;
  const Tensor& tu = recurrent ? nodes_[u.id].value : kEmpty;
  Tensor out = kernels::affine(nodes_[x.id].value, nodes_[w.id].value, th, tu,
                               nodes_[bias.id].value);
  ensure_finite(out, "affine");
  bool rg = needs(x) || needs(w) || needs(bias);
  if (recurrent) rg = rg || needs(h) || needs(u);
  const std::uint32_t ix = x.id, iw = w.id, ib = bias.id;
  const std::uint32_t ih = recurrent ? h.id : UINT32_MAX;
  const std::uint32_t iu = recurrent ? u.id : UINT32_MAX;
  return push(
      std::move(out), rg, [ix, iw, ih, iu, ib](Tape& t, std::uint32_t, const Tensor& adj) {
        const std::size_t m = adj.rows(), n = adj.cols();
        auto back_pair = [&](std::uint32_t iin, std::uint32_t iwt) {
          const Tensor& vin = t.nodes_[iin].value;  // m x k
          const Tensor& vwt = t.nodes_[iwt].value;  // k x n
          const std::size_t k = vin.cols();
          if (t.nodes_[iin].requires_grad) {
            Tensor& g = t.adj_buffer(iin);
            for (std::size_t i = 0; i < m; ++i)
              for (std::size_t l = 0; l < k; ++l) {
                double acc = 0.0;
                const double* arow = adj.data() + i * n;
                const double* wrow = vwt.data() + l * n;
                for (std::size_t j = 0; j < n; ++j) acc += arow[j] * wrow[j];
                g.at(i, l) += acc;
              }
          }
          if (t.nodes_[iwt].requires_grad) {
            Tensor& g = t.adj_buffer(iwt);
            for (std::size_t i = 0; i < m; ++i) {
              const double* xrow = vin.data() + i * k;
              const double* arow = adj.data() + i * n;
              for (std::size_t l = 0; l < k; ++l) {
                const double v = xrow[l];
                double* grow = g.data() + l * n;
                for (std::size_t j = 0; j < n; ++j) grow[j] += v * arow[j];
              }
            }
          }
        };
        back_pair(ix, iw);
        if (ih != UINT32_MAX) back_pair(ih, iu);
        if (t.nodes_[ib].requires_grad) {
          Tensor& g = t.adj_buffer(ib);
          for (std::size_t i = 0; i < m; ++i) {
            const double* arow = adj.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) g.at(j) += arow[j];
          }
        }
      });
}

Value Tape::sigmoid(Value a) {
  check(a);
  Tensor out = nodes_[a.id].value;
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = 1.0 / (1.0 + std::exp(-out.at(i)));
  ensure_finite(out, "sigmoid");
  const std::uint32_t ia = a.id;
  return push(std::move(out), needs(a),
              [ia](Tape& t, std::uint32_t self, const Tensor& adj) {
                if (!t.nodes_[ia].requires_grad) return;
                const Tensor& s = t.nodes_[self].value;
                Tensor& g = t.adj_buffer(ia);
                for (std::size_t i = 0; i < adj.numel(); ++i)
                  g.at(i) += adj.at(i) * s.at(i) * (1.0 - s.at(i));
              });
}

Value Tape::tanh_(Value a) {
  check(a);
  Tensor out = nodes_[a.id].value;
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = std::tanh(out.at(i));
  ensure_finite(out, "tanh");
  const std::uint32_t ia = a.id;
  return push(std::move(out), needs(a),
              [ia](Tape& t, std::uint32_t self, const Tensor& adj) {
                if (!t.nodes_[ia].requires_grad) return;
                const Tensor& y = t.nodes_[self].value;
                Tensor& g = t.adj_buffer(ia);
                for (std::size_t i = 0; i < adj.numel(); ++i)
                  g.at(i) += adj.at(i) * (1.0 - y.at(i) * y.at(i));
              });
}

Value Tape::relu(Value a) {
  check(a);
  Tensor out = nodes_[a.id].value;
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = out.at(i) > 0.0 ? out.at(i) : 0.0;
  ensure_finite(out, "relu");
  const std::uint32_t ia = a.id;
  return push(std::move(out), needs(a),
              [ia](Tape& t, std::uint32_t, const Tensor& adj) {
                if (!t.nodes_[ia].requires_grad) return;
                const Tensor& x = t.nodes_[ia].value;
                Tensor& g = t.adj_buffer(ia);
                for (std::size_t i = 0; i < adj.numel(); ++i)
                  if (x.at(i) > 0.0) g.at(i) += adj.at(i);
              });
}

Value Tape::log_(Value a) {
  check(a);
  Tensor out = nodes_[a.id].value;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    if (!(out.at(i) > 0.0)) {
      throw NumericError("log domain error: input " + std::to_string(out.at(i)) +
                         " at flat index " + std::to_string(i) + " is not strictly positive");
    }
    out.at(i) = std::log(out.at(i));
  }
  ensure_finite(out, "log");
  const std::uint32_t ia = a.id;
  return push(std::move(out), needs(a),
              [ia](Tape& t, std::uint32_t, const Tensor& adj) {
                if (!t.nodes_[ia].requires_grad) return;
                const Tensor& x = t.nodes_[ia].value;
                Tensor& g = t.adj_buffer(ia);
                for (std::size_t i = 0; i < adj.numel(); ++i) g.at(i) += adj.at(i) / x.at(i);
              });
}

Value Tape::abs_(Value a) {
  check(a);
  Tensor out = nodes_[a.id].value;
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) = std::fabs(out.at(i));
  ensure_finite(out, "abs");
  const std::uint32_t ia = a.id;
  // subgradient 0 at the kink
  return push(std::move(out), needs(a),
              [ia](Tape& t, std::uint32_t, const Tensor& adj) {
                if (!t.nodes_[ia].requires_grad) return;
                const Tensor& x = t.nodes_[ia].value;
                Tensor& g = t.adj_buffer(ia);
                for (std::size_t i = 0; i < adj.numel(); ++i) {
                  if (x.at(i) > 0.0)
                    g.at(i) += adj.at(i);
                  else if (x.at(i) < 0.0)
                    g.at(i) -= adj.at(i);
                }
              });
}

Value Tape::neg(Value a) { return scale(a, -1.0); }

Value Tape::scale(Value a, double s) {
  check(a);
  Tensor out = nodes_[a.id].value;
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) *= s;
  ensure_finite(out, "scale");
  const std::uint32_t ia = a.id;
  return push(std::move(out), needs(a),
              [ia, s](Tape& t, std::uint32_t, const Tensor& adj) {
                if (!t.nodes_[ia].requires_grad) return;
                Tensor& g = t.adj_buffer(ia);
                for (std::size_t i = 0; i < adj.numel(); ++i) g.at(i) += s * adj.at(i);
              });
}

Value Tape::add_scalar(Value a, double s) {
  check(a);
  Tensor out = nodes_[a.id].value;
  for (std::size_t i = 0; i < out.numel(); ++i) out.at(i) += s;
  ensure_finite(out, "add_scalar");
  const std::uint32_t ia = a.id;
  return push(std::move(out), needs(a),
              [ia](Tape& t, std::uint32_t, const Tensor& adj) {
                if (!t.nodes_[ia].requires_grad) return;
                Tensor& g = t.adj_buffer(ia);
                for (std::size_t i = 0; i < adj.numel(); ++i) g.at(i) += adj.at(i);
              });
}

Value Tape::sum(Value a) {
  check(a);
  Tensor out = Tensor::scalar(kernels::sum(nodes_[a.id].value));
  ensure_finite(out, "sum");
  const std::uint32_t ia = a.id;
  return push(std::move(out), needs(a),
              [ia](Tape& t, std::uint32_t, const Tensor& adj) {
                if (!t.nodes_[ia].requires_grad) return;
                Tensor& g = t.adj_buffer(ia);
                const double v = adj.at(0);
                for (std::size_t i = 0; i < g.numel(); ++i) g.at(i) += v;
              });
}

Value Tape::mean(Value a) {
  check(a);
  const Tensor& ta = nodes_[a.id].value;
  if (ta.numel() == 0) throw ShapeError("mean of empty tensor");
  Tensor out = Tensor::scalar(kernels::sum(ta) / static_cast<double>(ta.numel()));
  ensure_finite(out, "mean");
  const std::uint32_t ia = a.id;
  const double inv = 1.0 / static_cast<double>(ta.numel());
  return push(std::move(out), needs(a),
              [ia, inv](Tape& t, std::uint32_t, const Tensor& adj) {
                if (!t.nodes_[ia].requires_grad) return;
                Tensor& g = t.adj_buffer(ia);
                const double v = adj.at(0) * inv;
                for (std::size_t i = 0; i < g.numel(); ++i) g.at(i) += v;
              });
}

Value Tape::sum_rows(Value a) {
  check(a);
  Tensor out = kernels::sum_rows(nodes_[a.id].value);
  ensure_finite(out, "sum_rows");
  const std::uint32_t ia = a.id;
  return push(std::move(out), needs(a),
              [ia](Tape& t, std::uint32_t, const Tensor& adj) {
                if (!t.nodes_[ia].requires_grad) return;
                const Tensor& x = t.nodes_[ia].value;
                const std::size_t m = x.rows(), n = x.cols();
                Tensor& g = t.adj_buffer(ia);
                for (std::size_t i = 0; i < m; ++i) {
                  const double v = adj.at(i);
                  double* grow = g.data() + i * n;
                  for (std::size_t j = 0; j < n; ++j) grow[j] += v;
                }
              });
}

Value Tape::normalize_rows(Value a) {
  check(a);
  const Tensor& ta = nodes_[a.id].value;
  const std::size_t m = ta.rows(), n = ta.cols();
  Tensor out = ta;
  std::vector<double> row_sums(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    const double* row = ta.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      if (!(row[j] > 0.0)) {
        throw NumericError("normalize_rows requires strictly positive entries, got " +
                           std::to_string(row[j]) + " at row " + std::to_string(i));
      }
      s += row[j];
    }
    row_sums[i] = s;
    double* orow = out.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) orow[j] /= s;
  }
  ensure_finite(out, "normalize_rows");
  const std::uint32_t ia = a.id;
  return push(std::move(out), needs(a),
              [ia, row_sums](Tape& t, std::uint32_t self, const Tensor& adj) {
                if (!t.nodes_[ia].requires_grad) return;
                const Tensor& p = t.nodes_[self].value;
                const std::size_t m2 = p.rows(), n2 = p.cols();
                Tensor& g = t.adj_buffer(ia);
                for (std::size_t i = 0; i < m2; ++i) {
                  const double* prow = p.data() + i * n2;
                  const double* arow = adj.data() + i * n2;
                  double dot = 0.0;
                  for (std::size_t j = 0; j < n2; ++j) dot += arow[j] * prow[j];
                  const double inv = 1.0 / row_sums[i];
                  double* grow = g.data() + i * n2;
                  for (std::size_t j = 0; j < n2; ++j) grow[j] += (arow[j] - dot) * inv;
                }
              });
}

Value Tape::concat_rows(Value a, Value b) {
  check(a);
  check(b);
  const Tensor& ta = nodes_[a.id].value;
  const Tensor& tb = nodes_[b.id].value;
  if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.cols()) {
    throw ShapeError("concat_rows shape mismatch: " + ta.shape_str() + " vs " +
                     tb.shape_str());
  }
  const std::size_t ma = ta.rows(), mb = tb.rows(), n = ta.cols();
  Tensor out = Tensor::zeros({ma + mb, n});
  std::copy(ta.data(), ta.data() + ta.numel(), out.data());
  std::copy(tb.data(), tb.data() + tb.numel(), out.data() + ta.numel());
  const std::uint32_t ia = a.id, ib = b.id;
  return push(std::move(out), needs(a) || needs(b),
              [ia, ib, ma, n](Tape& t, std::uint32_t, const Tensor& adj) {
                if (t.nodes_[ia].requires_grad) {
                  Tensor& g = t.adj_buffer(ia);
                  for (std::size_t i = 0; i < ma * n; ++i) g.at(i) += adj.at(i);
                }
                if (t.nodes_[ib].requires_grad) {
                  Tensor& g = t.adj_buffer(ib);
                  const std::size_t off = ma * n;
                  for (std::size_t i = 0; i < g.numel(); ++i) g.at(i) += adj.at(off + i);
                }
              });
}

Value Tape::slice_rows(Value a, std::size_t begin, std::size_t end) {
  check(a);
  const Tensor& ta = nodes_[a.id].value;
  if (ta.rank() != 2 || begin >= end || end > ta.rows()) {
    throw ShapeError("slice_rows range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") invalid for " + ta.shape_str());
  }
  const std::size_t n = ta.cols();
  Tensor out = Tensor::zeros({end - begin, n});
  std::copy(ta.data() + begin * n, ta.data() + end * n, out.data());
  const std::uint32_t ia = a.id;
  return push(std::move(out), needs(a),
              [ia, begin, n](Tape& t, std::uint32_t, const Tensor& adj) {
                if (!t.nodes_[ia].requires_grad) return;
                Tensor& g = t.adj_buffer(ia);
                const std::size_t off = begin * n;
                for (std::size_t i = 0; i < adj.numel(); ++i) g.at(off + i) += adj.at(i);
              });
}

Value Tape::reshape(Value a, std::vector<std::size_t> shape) {
  check(a);
  Tensor out = nodes_[a.id].value.reshaped(shape);
  const std::uint32_t ia = a.id;
  return push(std::move(out), needs(a),
              [ia](Tape& t, std::uint32_t, const Tensor& adj) {
                if (!t.nodes_[ia].requires_grad) return;
                Tensor& g = t.adj_buffer(ia);
                for (std::size_t i = 0; i < adj.numel(); ++i) g.at(i) += adj.at(i);
              });
}

void Tape::backward(Value loss) {
  check(loss);
  if (consumed_) {
    throw ConfigError("tape already consumed: call reset_gradients() before another backward");
  }
  const Tensor& lv = nodes_[loss.id].value;
  if (lv.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + lv.shape_str());
  }
  consumed_ = true;
  adj_buffer(loss.id).at(0) += 1.0;
  for (std::uint32_t i = loss.id + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!node.requires_grad || !node.backprop) continue;
    const Tensor& adj = adjoints_[i];
    if (adj.empty()) continue;  // not reachable from the loss
    node.backprop(*this, i, adj);
  }
}

void Tape::reset_gradients() {
  for (Tensor& t : adjoints_) t = Tensor();
  consumed_ = false;
}

const Tensor& Tape::value(Value v) const {
  check(v);
  return nodes_[v.id].value;
}

const Tensor& Tape::gradient(Value v) {
  check(v);
  if (!nodes_[v.id].requires_grad) {
    throw ConfigError("gradient requested for a non-differentiable (constant) node");
  }
  if (!consumed_) {
    throw ConfigError("gradient requested before backward");
  }
  return adj_buffer(v.id);  // zeros if the sweep never reached it
}

}  // namespace shapguard::numkit
