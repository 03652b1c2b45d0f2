#include "svrnn/spatial_rnn.hpp"

#include <algorithm>
#include <future>

#include "svrnn/layers.hpp"

namespace svrnn {

std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::left_to_right: return "lr";
    case Direction::right_to_left: return "rl";
    case Direction::top_to_bottom: return "tb";
    case Direction::bottom_to_top: return "bt";
  }
  return "?";
}

template <typename T>
GateMap<T> GateMap<T>::from_features(const Tensor<T>& features) {
  require_finite(features, "gate features");
  return GateMap{logistic(features)};
}

template <typename T>
GateMap<T> GateMap<T>::from_values(Tensor<T> values) {
  for (T v : values.values()) {
    require(v >= T(0) && v <= T(1), ErrorKind::value, "gate value outside [0, 1]");
  }
  return GateMap{std::move(values)};
}

namespace {

template <typename T>
Tensor<T> transpose_planes(const Tensor<T>& t) {
  const Shape s = t.shape();
  Tensor<T> out(Shape{s.n, s.c, s.w, s.h});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* src = t.plane(n, c);
      T* dst = out.plane(n, c);
      for (std::size_t y = 0; y < s.h; ++y) {
        for (std::size_t x = 0; x < s.w; ++x) dst[x * s.h + y] = src[y * s.w + x];
      }
    }
  }
  return out;
}

template <typename T>
inline void axpy(std::size_t n, T a, const T* __restrict x, T* __restrict y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
inline T dot(std::size_t n, const T* __restrict x, const T* __restrict y) {
  T acc = 0;
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

// Recurrence down (or up, when reverse) every column; all W lanes advance together.
template <typename T>
void column_forward(const Tensor<T>& x, const Tensor<T>* g, const ScanParams<T>& p, bool reverse,
                    Tensor<T>& h) {
  const Shape s = x.shape();
  const std::size_t d = s.c, H = s.h, W = s.w;
  std::vector<T> r(W);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t t = 0; t < H; ++t) {
      const std::size_t y = reverse ? H - 1 - t : t;
      const std::size_t yp = reverse ? y + 1 : y - 1;
      for (std::size_t c = 0; c < d; ++c) {
        std::fill(r.begin(), r.end(), p.bias[c]);
        if (t > 0) {
          for (std::size_t k = 0; k < d; ++k) {
            const T wck = p.omega(c, k);
            if (wck != T(0)) axpy(W, wck, h.plane(n, k) + yp * W, r.data());
          }
        }
        const T* xr = x.plane(n, c) + y * W;
        T* hr = h.plane(n, c) + y * W;
        if (g != nullptr) {
          const T* gr = g->plane(n, c) + y * W;
          for (std::size_t i = 0; i < W; ++i) hr[i] = xr[i] + gr[i] * r[i];
        } else {
          for (std::size_t i = 0; i < W; ++i) hr[i] = xr[i] + r[i];
        }
      }
    }
  }
}

// delta_i = xi_i + omega^T (g_{i+1} * delta_{i+1}); eps_i = delta_i * (omega h_{i-1} + b).
template <typename T>
void column_backward(const Tensor<T>& grad_out, const Tensor<T>& h, const Tensor<T>* g,
                     const ScanParams<T>& p, bool reverse, ScanGrads<T>& out) {
  const Shape s = grad_out.shape();
  const std::size_t d = s.c, H = s.h, W = s.w;
  std::vector<T> carry(d * W), u(d * W), r(W);
  for (std::size_t n = 0; n < s.n; ++n) {
    std::fill(carry.begin(), carry.end(), T(0));
    for (std::size_t step = H; step-- > 0;) {
      const std::size_t y = reverse ? H - 1 - step : step;
      const std::size_t yp = reverse ? y + 1 : y - 1;
      for (std::size_t c = 0; c < d; ++c) {
        const T* go = grad_out.plane(n, c) + y * W;
        T* delta = out.grad_x.plane(n, c) + y * W;
        const T* cr = carry.data() + c * W;
        for (std::size_t i = 0; i < W; ++i) delta[i] = go[i] + cr[i];
        T* ur = u.data() + c * W;
        if (g != nullptr) {
          std::fill(r.begin(), r.end(), p.bias[c]);
          if (step > 0) {
            for (std::size_t k = 0; k < d; ++k) {
              const T wck = p.omega(c, k);
              if (wck != T(0)) axpy(W, wck, h.plane(n, k) + yp * W, r.data());
            }
          }
          const T* gr = g->plane(n, c) + y * W;
          T* gg = out.grad_g.plane(n, c) + y * W;
          for (std::size_t i = 0; i < W; ++i) {
            gg[i] = delta[i] * r[i];
            ur[i] = gr[i] * delta[i];
          }
        } else {
          std::copy(delta, delta + W, ur);
        }
        T acc = 0;
        for (std::size_t i = 0; i < W; ++i) acc += ur[i];
        out.grad_bias[c] += acc;
        if (step > 0) {
          for (std::size_t k = 0; k < d; ++k) {
            out.grad_omega(c, k) += dot(W, ur, h.plane(n, k) + yp * W);
          }
        }
      }
      if (step == 0) break;
      std::fill(carry.begin(), carry.end(), T(0));
      for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t k = 0; k < d; ++k) {
          const T wck = p.omega(c, k);
          if (wck != T(0)) axpy(W, wck, u.data() + c * W, carry.data() + k * W);
        }
      }
    }
  }
}

template <typename T>
void check_params(const Shape& s, const ScanParams<T>& p) {
  require(p.omega.rows() == p.dim() && p.omega.cols() == p.dim(), ErrorKind::shape,
          "scan: transition matrix must be d x d with d = bias length");
  require(s.c == p.dim(), ErrorKind::shape,
          "scan: input has " + std::to_string(s.c) + " channels, parameters expect " +
              std::to_string(p.dim()));
}

template <typename T>
Tensor<T> scan_forward_impl(const Tensor<T>& x, const Tensor<T>* g, const ScanParams<T>& p,
                            ScanTape<T>* tape) {
  check_params(x.shape(), p);
  require_finite(x, "scan input");
  if (g != nullptr) {
    require(g->shape() == x.shape(), ErrorKind::shape,
            "scan: gate shape " + g->shape().str() + " differs from input " + x.shape().str());
    require_finite(*g, "scan gates");
  }
  const bool reverse =
      p.direction == Direction::right_to_left || p.direction == Direction::bottom_to_top;
  Tensor<T> h;
  if (is_horizontal(p.direction)) {
    const Tensor<T> xt = transpose_planes(x);
    Tensor<T> ht(xt.shape());
    if (g != nullptr) {
      const Tensor<T> gt = transpose_planes(*g);
      column_forward(xt, &gt, p, reverse, ht);
    } else {
      column_forward(xt, static_cast<const Tensor<T>*>(nullptr), p, reverse, ht);
    }
    h = transpose_planes(ht);
  } else {
    h = Tensor<T>(x.shape());
    column_forward(x, g, p, reverse, h);
  }
  if (tape != nullptr) {
    tape->direction = p.direction;
    tape->gated = g != nullptr;
    tape->hidden = h;
    tape->gates = g != nullptr ? *g : Tensor<T>();
    tape->valid = true;
  }
  return h;
}

}  // namespace

template <typename T>
Tensor<T> scan_forward_gated(const Tensor<T>& x, const Tensor<T>& g, const ScanParams<T>& p,
                             ScanTape<T>* tape) {
  return scan_forward_impl(x, &g, p, tape);
}

template <typename T>
Tensor<T> scan_forward_plain(const Tensor<T>& x, const ScanParams<T>& p, ScanTape<T>* tape) {
  return scan_forward_impl(x, static_cast<const Tensor<T>*>(nullptr), p, tape);
}

template <typename T>
ScanGrads<T> scan_backward(const Tensor<T>& grad_out, ScanTape<T>& tape, const ScanParams<T>& p) {
  require(tape.valid, ErrorKind::value, "scan_backward: missing or already consumed tape");
  require(tape.direction == p.direction, ErrorKind::value,
          "scan_backward: tape direction does not match parameters");
  require(grad_out.shape() == tape.hidden.shape(), ErrorKind::shape,
          "scan_backward: grad_out shape does not match the recorded scan");
  check_params(grad_out.shape(), p);
  tape.valid = false;

  const std::size_t d = p.dim();
  const bool reverse =
      p.direction == Direction::right_to_left || p.direction == Direction::bottom_to_top;
  ScanGrads<T> grads;
  grads.grad_omega = Matrix<T>(d, d);
  grads.grad_bias.assign(d, T(0));

  if (is_horizontal(p.direction)) {
    const Tensor<T> got = transpose_planes(grad_out);
    const Tensor<T> ht = transpose_planes(tape.hidden);
    grads.grad_x = Tensor<T>(got.shape());
    if (tape.gated) {
      const Tensor<T> gt = transpose_planes(tape.gates);
      grads.grad_g = Tensor<T>(got.shape());
      column_backward(got, ht, &gt, p, reverse, grads);
      grads.grad_g = transpose_planes(grads.grad_g);
    } else {
      column_backward(got, ht, static_cast<const Tensor<T>*>(nullptr), p, reverse, grads);
    }
    grads.grad_x = transpose_planes(grads.grad_x);
  } else {
    grads.grad_x = Tensor<T>(grad_out.shape());
    if (tape.gated) grads.grad_g = Tensor<T>(grad_out.shape());
    column_backward(grad_out, tape.hidden, tape.gated ? &tape.gates : nullptr, p, reverse, grads);
  }
  tape.hidden = Tensor<T>();
  tape.gates = Tensor<T>();
  return grads;
}

template <typename T>
ScanGrads<T> scan_backward_gated(const Tensor<T>& grad_out, ScanTape<T>& tape,
                                 const ScanParams<T>& p) {
  require(tape.gated, ErrorKind::value, "scan_backward_gated: tape was recorded without gates");
  return scan_backward(grad_out, tape, p);
}

template <typename T>
Integration<T> integrate_max(const Tensor<T>& h_lr, const Tensor<T>& h_rl, const Tensor<T>& h_tb,
                             const Tensor<T>& h_bt) {
  const Shape s = h_lr.shape();
  require(h_rl.shape() == s && h_tb.shape() == s && h_bt.shape() == s, ErrorKind::shape,
          "integrate_max: directional maps differ in shape");
  Integration<T> r{Tensor<T>(s), std::vector<std::uint8_t>(s.size())};
  const T* maps[4] = {h_lr.data(), h_rl.data(), h_tb.data(), h_bt.data()};
  for (std::size_t e = 0; e < s.size(); ++e) {
    T best = maps[0][e];
    std::uint8_t arg = 0;
    for (std::uint8_t k = 1; k < 4; ++k) {
      if (maps[k][e] > best) {
        best = maps[k][e];
        arg = k;
      }
    }
    r.out.data()[e] = best;
    r.winner[e] = arg;
  }
  return r;
}

template <typename T>
Tensor<T> srnn_forward(const Tensor<T>& x, const Tensor<T>* gate_features,
                       const SrnnParams<T>& params, SrnnTape<T>* tape, int workers) {
  for (std::size_t i = 0; i < 4; ++i) {
    require(params[i].direction == kDirections[i], ErrorKind::value,
            "srnn: parameters must be ordered lr, rl, tb, bt");
  }
  Tensor<T> gates;
  if (gate_features != nullptr) {
    require(gate_features->shape() == x.shape(), ErrorKind::shape,
            "srnn: gate features " + gate_features->shape().str() + " differ from input " +
                x.shape().str());
    gates = GateMap<T>::from_features(*gate_features).values;
  }
  const bool gated = gate_features != nullptr;

  std::array<Tensor<T>, 4> hidden;
  auto run = [&](std::size_t i) {
    ScanTape<T>* st = tape != nullptr ? &tape->scans[i] : nullptr;
    hidden[i] = gated ? scan_forward_gated(x, gates, params[i], st)
                      : scan_forward_plain(x, params[i], st);
  };
  if (workers > 1) {
    std::array<std::future<void>, 3> pending;
    for (std::size_t i = 1; i < 4; ++i) pending[i - 1] = std::async(std::launch::async, run, i);
    run(0);
    for (auto& f : pending) f.get();
  } else {
    for (std::size_t i = 0; i < 4; ++i) run(i);
  }

  Integration<T> merged = integrate_max(hidden[0], hidden[1], hidden[2], hidden[3]);
  if (tape != nullptr) {
    tape->gated = gated;
    tape->gates = std::move(gates);
    tape->winner = std::move(merged.winner);
    tape->valid = true;
  }
  return std::move(merged.out);
}

template <typename T>
SrnnGrads<T> srnn_backward(const Tensor<T>& grad_out, SrnnTape<T>& tape,
                           const SrnnParams<T>& params, int workers) {
  require(tape.valid, ErrorKind::value, "srnn_backward: missing or already consumed tape");
  require(grad_out.size() == tape.winner.size(), ErrorKind::shape,
          "srnn_backward: grad_out shape does not match the recorded forward pass");
  tape.valid = false;
  const Shape s = grad_out.shape();

  std::array<Tensor<T>, 4> routed;
  for (auto& r : routed) r = Tensor<T>(s);
  for (std::size_t e = 0; e < s.size(); ++e) routed[tape.winner[e]].data()[e] = grad_out.data()[e];

  std::array<ScanGrads<T>, 4> scan_grads;
  auto run = [&](std::size_t i) { scan_grads[i] = scan_backward(routed[i], tape.scans[i], params[i]); };
  if (workers > 1) {
    std::array<std::future<void>, 3> pending;
    for (std::size_t i = 1; i < 4; ++i) pending[i - 1] = std::async(std::launch::async, run, i);
    run(0);
    for (auto& f : pending) f.get();
  } else {
    for (std::size_t i = 0; i < 4; ++i) run(i);
  }

  SrnnGrads<T> grads;
  grads.grad_x = std::move(scan_grads[0].grad_x);
  for (std::size_t i = 1; i < 4; ++i) {
    const T* src = scan_grads[i].grad_x.data();
    T* dst = grads.grad_x.data();
    for (std::size_t e = 0; e < s.size(); ++e) dst[e] += src[e];
  }
  if (tape.gated) {
    grads.grad_gate_features = Tensor<T>(s);
    T* dst = grads.grad_gate_features.data();
    const T* g = tape.gates.data();
    for (std::size_t e = 0; e < s.size(); ++e) {
      T sum = scan_grads[0].grad_g.data()[e];
      for (std::size_t i = 1; i < 4; ++i) sum += scan_grads[i].grad_g.data()[e];
      dst[e] = sum * g[e] * (T(1) - g[e]);
    }
  }
  for (std::size_t i = 0; i < 4; ++i) {
    grads.grad_omega[i] = std::move(scan_grads[i].grad_omega);
    grads.grad_bias[i] = std::move(scan_grads[i].grad_bias);
  }
  tape.gates = Tensor<T>();
  return grads;
}

#define SVRNN_INSTANTIATE(T)                                                                     \
  template struct GateMap<T>;                                                                    \
  template Tensor<T> scan_forward_gated<T>(const Tensor<T>&, const Tensor<T>&,                   \
                                           const ScanParams<T>&, ScanTape<T>*);                  \
  template Tensor<T> scan_forward_plain<T>(const Tensor<T>&, const ScanParams<T>&, ScanTape<T>*); \
  template ScanGrads<T> scan_backward<T>(const Tensor<T>&, ScanTape<T>&, const ScanParams<T>&);  \
  template ScanGrads<T> scan_backward_gated<T>(const Tensor<T>&, ScanTape<T>&,                   \
                                               const ScanParams<T>&);                            \
  template Integration<T> integrate_max<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                           const Tensor<T>&);                                    \
  template Tensor<T> srnn_forward<T>(const Tensor<T>&, const Tensor<T>*, const SrnnParams<T>&,   \
                                     SrnnTape<T>*, int);                                         \
  template SrnnGrads<T> srnn_backward<T>(const Tensor<T>&, SrnnTape<T>&, const SrnnParams<T>&,   \
                                         int);

SVRNN_INSTANTIATE(float)
SVRNN_INSTANTIATE(double)

}  // namespace svrnn
