#include "mcgkt/ops.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

namespace mcgkt {

namespace {

using Eigen::MatrixXf;
using MapMat = Eigen::Map<MatrixXf>;
using MapConstMat = Eigen::Map<const MatrixXf>;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

struct ConvDims {
  Index n, cin, hin, win;
  Index cout, kh, kw;
  Index hout, wout;
  Index pad_h, pad_w;
  Index patch() const { return cin * kh * kw; }
  Index pixels() const { return hout * wout; }
};

ConvDims conv_dims(const char* op, const Shape& in, const Shape& wt, Padding padding) {
  ConvDims d{};
  d.n = in.n;
  d.cin = in.c;
  d.hin = in.h;
  d.win = in.w;
  d.cout = wt.n;
  d.kh = wt.h;
  d.kw = wt.w;
  require(wt.c == in.c, std::string(op) + ": input channels (" + std::to_string(in.c) +
                            ") do not match kernel channels (" + std::to_string(wt.c) + ")");
  if (padding == Padding::same) {
    require(d.kh % 2 == 1 && d.kw % 2 == 1,
            std::string(op) + ": same padding requires odd kernel extents, got " +
                std::to_string(d.kh) + "x" + std::to_string(d.kw));
    d.pad_h = (d.kh - 1) / 2;
    d.pad_w = (d.kw - 1) / 2;
    d.hout = d.hin;
    d.wout = d.win;
  } else {
    d.pad_h = d.pad_w = 0;
    d.hout = d.hin - d.kh + 1;
    d.wout = d.win - d.kw + 1;
    require(d.hout > 0 && d.wout > 0,
            std::string(op) + ": valid convolution produces non-positive spatial dims for input " +
                in.str() + " and kernel " + wt.str());
  }
  return d;
}

// Gathers the kh*kw input patches of one sample into a row-major [K][P]
// buffer, K = cin*kh*kw (row index r = (ci, dy, dx)), P = hout*wout. Mapped
// column-major as (P, K), column r is contiguous.
void im2col(const float* src, const ConvDims& d, float* dst) {
  const Index P = d.pixels();
  for (Index ci = 0; ci < d.cin; ++ci) {
    const float* plane = src + ci * d.hin * d.win;
    for (Index dy = 0; dy < d.kh; ++dy) {
      for (Index dx = 0; dx < d.kw; ++dx) {
        float* row = dst + ((ci * d.kh + dy) * d.kw + dx) * P;
        for (Index y = 0; y < d.hout; ++y) {
          const Index iy = y + dy - d.pad_h;
          float* out = row + y * d.wout;
          if (iy < 0 || iy >= d.hin) {
            std::memset(out, 0, sizeof(float) * d.wout);
            continue;
          }
          const Index x0 = std::max<Index>(0, d.pad_w - dx);
          const Index x1 = std::min<Index>(d.wout, d.win + d.pad_w - dx);
          if (x0 > 0) std::memset(out, 0, sizeof(float) * x0);
          if (x1 > x0)
            std::memcpy(out + x0, plane + iy * d.win + (x0 + dx - d.pad_w),
                        sizeof(float) * (x1 - x0));
          if (x1 < d.wout) std::memset(out + x1, 0, sizeof(float) * (d.wout - x1));
        }
      }
    }
  }
}

// Scatter-add transpose of im2col: accumulates a [K][P] column buffer back
// into one sample's gradient plane stack.
void col2im_add(const float* cols, const ConvDims& d, float* dst) {
  const Index P = d.pixels();
  for (Index ci = 0; ci < d.cin; ++ci) {
    float* plane = dst + ci * d.hin * d.win;
    for (Index dy = 0; dy < d.kh; ++dy) {
      for (Index dx = 0; dx < d.kw; ++dx) {
        const float* row = cols + ((ci * d.kh + dy) * d.kw + dx) * P;
        for (Index y = 0; y < d.hout; ++y) {
          const Index iy = y + dy - d.pad_h;
          if (iy < 0 || iy >= d.hin) continue;
          const Index x0 = std::max<Index>(0, d.pad_w - dx);
          const Index x1 = std::min<Index>(d.wout, d.win + d.pad_w - dx);
          const float* src_row = row + y * d.wout;
          float* dst_row = plane + iy * d.win + (dx - d.pad_w);
          for (Index x = x0; x < x1; ++x) dst_row[x] += src_row[x];
        }
      }
    }
  }
}

// Kernel tensor [cout, cin, kh, kw] reshaped as a (K, cout) matrix whose row
// order matches im2col's patch rows.
MatrixXf kernel_matrix(const Array& w, const ConvDims& d) {
  MatrixXf wt(d.patch(), d.cout);
  for (Index co = 0; co < d.cout; ++co)
    for (Index r = 0; r < d.patch(); ++r) wt(r, co) = w[co * d.patch() + r];
  return wt;
}

}  // namespace

Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor& bias,
              Padding padding) {
  const ConvDims d = conv_dims("conv2d", input.shape(), weight.shape(), padding);
  if (bias.defined())
    require(bias.shape() == Shape{1, d.cout, 1, 1},
            "conv2d: bias shape " + bias.shape().str() + " must be [1," + std::to_string(d.cout) +
                ",1,1]");

  const Index K = d.patch(), P = d.pixels();
  const MatrixXf wt = kernel_matrix(weight.values(), d);
  Array out(d.n * d.cout * P);

#pragma omp parallel for schedule(static) if (d.n > 1)
  for (Index s = 0; s < d.n; ++s) {
    std::vector<float> cols(static_cast<std::size_t>(K) * P);
    im2col(input.values().data() + s * d.cin * d.hin * d.win, d, cols.data());
    MapConstMat pm(cols.data(), P, K);
    MapMat om(out.data() + s * d.cout * P, P, d.cout);
    om.noalias() = pm * wt;
    if (bias.defined())
      om.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias.values().data(), d.cout);
  }

  std::vector<Tensor> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);

  auto backward = [d](const Array& up, std::vector<Tensor>& ins, const Tensor&) {
    Tensor& in = ins[0];
    Tensor& w = ins[1];
    Tensor* b = ins.size() > 2 ? &ins[2] : nullptr;
    const Index K = d.patch(), P = d.pixels();

    const bool need_din = in.requires_grad();
    const bool need_dw = w.requires_grad();
    MatrixXf wt;
    if (need_din) wt = kernel_matrix(w.values(), d);
    if (need_din) in.ensure_grad();

    std::vector<MatrixXf> dwt(need_dw ? d.n : 0);
    std::vector<Eigen::VectorXf> db(b && b->requires_grad() ? d.n : 0);

#pragma omp parallel for schedule(static) if (d.n > 1)
    for (Index s = 0; s < d.n; ++s) {
      MapConstMat um(up.data() + s * d.cout * P, P, d.cout);
      if (need_dw) {
        std::vector<float> cols(static_cast<std::size_t>(K) * P);
        im2col(in.values().data() + s * d.cin * d.hin * d.win, d, cols.data());
        MapConstMat pm(cols.data(), P, K);
        dwt[s].noalias() = pm.transpose() * um;
      }
      if (!db.empty()) db[s] = um.colwise().sum();
      if (need_din) {
        MatrixXf dcols(P, K);
        dcols.noalias() = um * wt.transpose();
        col2im_add(dcols.data(), d, in.ensure_grad().data() + s * d.cin * d.hin * d.win);
      }
    }

    if (need_dw) {
      MatrixXf total = MatrixXf::Zero(K, d.cout);
      for (Index s = 0; s < d.n; ++s) total += dwt[s];
      Array& g = w.ensure_grad();
      for (Index co = 0; co < d.cout; ++co)
        for (Index r = 0; r < K; ++r) g[co * K + r] += total(r, co);
    }
    if (!db.empty()) {
      Eigen::VectorXf total = Eigen::VectorXf::Zero(d.cout);
      for (Index s = 0; s < d.n; ++s) total += db[s];
      b->ensure_grad() += Eigen::Map<const Array>(total.data(), d.cout);
    }
  };

  return tape.emit(Shape{d.n, d.cout, d.hout, d.wout}, std::move(out), std::move(inputs),
                   std::move(backward));
}

Tensor maxpool2x2(Tape& tape, const Tensor& input) {
  const Shape& s = input.shape();
  require(s.h % 2 == 0 && s.w % 2 == 0,
          "maxpool2x2: spatial dims must be even, got " + s.str());
  Shape os{s.n, s.c, s.h / 2, s.w / 2};

  Array out(os.numel());
  auto argmax = std::make_shared<std::vector<Index>>(os.numel());
  const Array& v = input.values();
  for (Index p = 0; p < s.n * s.c; ++p) {
    const Index in_base = p * s.plane();
    const Index out_base = p * os.plane();
    for (Index y = 0; y < os.h; ++y) {
      for (Index x = 0; x < os.w; ++x) {
        const Index tl = in_base + (2 * y) * s.w + 2 * x;
        // row-major scan; strict > keeps the first of tied maxima
        Index best = tl;
        float bv = v[tl];
        for (Index c : {tl + 1, tl + s.w, tl + s.w + 1}) {
          if (v[c] > bv) {
            bv = v[c];
            best = c;
          }
        }
        out[out_base + y * os.w + x] = bv;
        (*argmax)[out_base + y * os.w + x] = best;
      }
    }
  }

  auto backward = [argmax](const Array& up, std::vector<Tensor>& ins, const Tensor&) {
    if (!ins[0].requires_grad()) return;
    Array& g = ins[0].ensure_grad();
    for (Index i = 0; i < up.size(); ++i) g[(*argmax)[i]] += up[i];
  };
  return tape.emit(os, std::move(out), {input}, std::move(backward));
}

Tensor upsample_nearest2x(Tape& tape, const Tensor& input) {
  const Shape& s = input.shape();
  Shape os{s.n, s.c, 2 * s.h, 2 * s.w};
  Array out(os.numel());
  const Array& v = input.values();
  for (Index p = 0; p < s.n * s.c; ++p) {
    for (Index y = 0; y < s.h; ++y) {
      for (Index x = 0; x < s.w; ++x) {
        const float val = v[p * s.plane() + y * s.w + x];
        const Index base = p * os.plane() + (2 * y) * os.w + 2 * x;
        out[base] = out[base + 1] = out[base + os.w] = out[base + os.w + 1] = val;
      }
    }
  }

  auto backward = [s, os](const Array& up, std::vector<Tensor>& ins, const Tensor&) {
    if (!ins[0].requires_grad()) return;
    Array& g = ins[0].ensure_grad();
    for (Index p = 0; p < s.n * s.c; ++p) {
      for (Index y = 0; y < s.h; ++y) {
        for (Index x = 0; x < s.w; ++x) {
          const Index base = p * os.plane() + (2 * y) * os.w + 2 * x;
          g[p * s.plane() + y * s.w + x] +=
              up[base] + up[base + 1] + up[base + os.w] + up[base + os.w + 1];
        }
      }
    }
  };
  return tape.emit(os, std::move(out), {input}, std::move(backward));
}

Tensor dense(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor& bias) {
  const Shape& s = input.shape();
  const Index din = s.c * s.h * s.w;
  const Index dout = weight.shape().n;
  require(weight.shape().c == din && weight.shape().h == 1 && weight.shape().w == 1,
          "dense: weight shape " + weight.shape().str() + " does not match input features (" +
              std::to_string(din) + ")");
  require(bias.defined() && bias.shape() == Shape{1, dout, 1, 1},
          "dense: bias must be [1," + std::to_string(dout) + ",1,1]");

  using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> X(input.values().data(), s.n, din);
  Eigen::Map<const RowMat> W(weight.values().data(), dout, din);

  Array out(s.n * dout);
  Eigen::Map<RowMat> Y(out.data(), s.n, dout);
  Y.noalias() = X * W.transpose();
  Y.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(bias.values().data(), dout);

  auto backward = [s, din, dout](const Array& up, std::vector<Tensor>& ins, const Tensor&) {
    using RM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const RM> dY(up.data(), s.n, dout);
    if (ins[0].requires_grad()) {
      Eigen::Map<const RM> W(ins[1].values().data(), dout, din);
      Eigen::Map<RM>(ins[0].ensure_grad().data(), s.n, din).noalias() += dY * W;
    }
    if (ins[1].requires_grad()) {
      Eigen::Map<const RM> X(ins[0].values().data(), s.n, din);
      Eigen::Map<RM>(ins[1].ensure_grad().data(), dout, din).noalias() += dY.transpose() * X;
    }
    if (ins[2].requires_grad()) {
      Eigen::Map<Eigen::RowVectorXf>(ins[2].ensure_grad().data(), dout) += dY.colwise().sum();
    }
  };
  return tape.emit(Shape{s.n, dout, 1, 1}, std::move(out), {input, weight, bias},
                   std::move(backward));
}

Tensor relu(Tape& tape, const Tensor& input) {
  Array out = input.values().max(0.0f);
  auto backward = [](const Array& up, std::vector<Tensor>& ins, const Tensor&) {
    if (!ins[0].requires_grad()) return;
    ins[0].ensure_grad() += up * (ins[0].values() > 0.0f).cast<float>();
  };
  return tape.emit(input.shape(), std::move(out), {input}, std::move(backward));
}

Tensor sigmoid(Tape& tape, const Tensor& input) {
  const Array& v = input.values();
  Array e = (-v.abs()).exp();
  Array out = (v >= 0.0f).select(1.0f / (1.0f + e), e / (1.0f + e));
  auto backward = [](const Array& up, std::vector<Tensor>& ins, const Tensor& out) {
    if (!ins[0].requires_grad()) return;
    const Array& y = out.values();
    ins[0].ensure_grad() += up * y * (1.0f - y);
  };
  return tape.emit(input.shape(), std::move(out), {input}, std::move(backward));
}

Tensor tanh(Tape& tape, const Tensor& input) {
  Array out = input.values().tanh();
  auto backward = [](const Array& up, std::vector<Tensor>& ins, const Tensor& out) {
    if (!ins[0].requires_grad()) return;
    const Array& y = out.values();
    ins[0].ensure_grad() += up * (1.0f - y * y);
  };
  return tape.emit(input.shape(), std::move(out), {input}, std::move(backward));
}

Tensor global_avg_pool(Tape& tape, const Tensor& input) {
  const Shape& s = input.shape();
  Array out(s.n * s.c);
  const Array& v = input.values();
  for (Index p = 0; p < s.n * s.c; ++p) {
    double acc = 0.0;
    for (Index i = 0; i < s.plane(); ++i) acc += v[p * s.plane() + i];
    out[p] = static_cast<float>(acc / static_cast<double>(s.plane()));
  }
  auto backward = [s](const Array& up, std::vector<Tensor>& ins, const Tensor&) {
    if (!ins[0].requires_grad()) return;
    Array& g = ins[0].ensure_grad();
    const float scale = 1.0f / static_cast<float>(s.plane());
    for (Index p = 0; p < s.n * s.c; ++p)
      g.segment(p * s.plane(), s.plane()) += up[p] * scale;
  };
  return tape.emit(Shape{s.n, s.c, 1, 1}, std::move(out), {input}, std::move(backward));
}

Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  require(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w,
          "concat_channels: batch/spatial shapes differ: " + sa.str() + " vs " + sb.str());
  Shape os{sa.n, sa.c + sb.c, sa.h, sa.w};
  Array out(os.numel());
  const Index pa = sa.c * sa.plane(), pb = sb.c * sb.plane();
  for (Index n = 0; n < sa.n; ++n) {
    out.segment(n * (pa + pb), pa) = a.values().segment(n * pa, pa);
    out.segment(n * (pa + pb) + pa, pb) = b.values().segment(n * pb, pb);
  }
  auto backward = [sa, sb, pa, pb](const Array& up, std::vector<Tensor>& ins, const Tensor&) {
    for (Index n = 0; n < sa.n; ++n) {
      if (ins[0].requires_grad())
        ins[0].ensure_grad().segment(n * pa, pa) += up.segment(n * (pa + pb), pa);
      if (ins[1].requires_grad())
        ins[1].ensure_grad().segment(n * pb, pb) += up.segment(n * (pa + pb) + pa, pb);
    }
  };
  return tape.emit(os, std::move(out), {a, b}, std::move(backward));
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(),
          "add: shapes differ: " + a.shape().str() + " vs " + b.shape().str());
  Array out = a.values() + b.values();
  auto backward = [](const Array& up, std::vector<Tensor>& ins, const Tensor&) {
    ins[0].accumulate_grad(up);
    ins[1].accumulate_grad(up);
  };
  return tape.emit(a.shape(), std::move(out), {a, b}, std::move(backward));
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(),
          "mul: shapes differ: " + a.shape().str() + " vs " + b.shape().str());
  Array out = a.values() * b.values();
  auto backward = [](const Array& up, std::vector<Tensor>& ins, const Tensor&) {
    if (ins[0].requires_grad()) ins[0].ensure_grad() += up * ins[1].values();
    if (ins[1].requires_grad()) ins[1].ensure_grad() += up * ins[0].values();
  };
  return tape.emit(a.shape(), std::move(out), {a, b}, std::move(backward));
}

Tensor channel_scale(Tape& tape, const Tensor& x, const Tensor& z) {
  const Shape& s = x.shape();
  require(z.shape() == Shape{s.n, s.c, 1, 1},
          "channel_scale: gate shape " + z.shape().str() + " must be [" + std::to_string(s.n) +
              "," + std::to_string(s.c) + ",1,1]");
  Array out(s.numel());
  for (Index p = 0; p < s.n * s.c; ++p)
    out.segment(p * s.plane(), s.plane()) = x.values().segment(p * s.plane(), s.plane()) * z.values()[p];

  auto backward = [s](const Array& up, std::vector<Tensor>& ins, const Tensor&) {
    const Index plane = s.plane();
    if (ins[0].requires_grad()) {
      Array& g = ins[0].ensure_grad();
      for (Index p = 0; p < s.n * s.c; ++p)
        g.segment(p * plane, plane) += up.segment(p * plane, plane) * ins[1].values()[p];
    }
    if (ins[1].requires_grad()) {
      Array& g = ins[1].ensure_grad();
      for (Index p = 0; p < s.n * s.c; ++p)
        g[p] += (up.segment(p * plane, plane) * ins[0].values().segment(p * plane, plane)).sum();
    }
  };
  return tape.emit(s, std::move(out), {x, z}, std::move(backward));
}

Tensor mse_loss(Tape& tape, const Tensor& pred, const Tensor& target) {
  require(pred.shape() == target.shape(),
          "mse_loss: shapes differ: " + pred.shape().str() + " vs " + target.shape().str());
  const Index count = pred.numel();
  double acc = 0.0;
  for (Index i = 0; i < count; ++i) {
    const double diff = static_cast<double>(pred.values()[i]) - target.values()[i];
    acc += diff * diff;
  }
  Array out(1);
  out[0] = static_cast<float>(acc / static_cast<double>(count));

  auto backward = [count](const Array& up, std::vector<Tensor>& ins, const Tensor&) {
    const float scale = 2.0f * up[0] / static_cast<float>(count);
    if (ins[0].requires_grad())
      ins[0].ensure_grad() += scale * (ins[0].values() - ins[1].values());
    if (ins[1].requires_grad())
      ins[1].ensure_grad() -= scale * (ins[0].values() - ins[1].values());
  };
  return tape.emit(Shape{1, 1, 1, 1}, std::move(out), {pred, target}, std::move(backward));
}

Tensor sum(Tape& tape, const Tensor& input) {
  double acc = 0.0;
  for (Index i = 0; i < input.numel(); ++i) acc += input.values()[i];
  Array out(1);
  out[0] = static_cast<float>(acc);
  auto backward = [](const Array& up, std::vector<Tensor>& ins, const Tensor&) {
    if (!ins[0].requires_grad()) return;
    ins[0].ensure_grad() += up[0];
  };
  return tape.emit(Shape{1, 1, 1, 1}, std::move(out), {input}, std::move(backward));
}

}  // namespace mcgkt
