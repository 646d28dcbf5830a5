#include "sac/reference.hpp"

#include <algorithm>
#include <cmath>

namespace sac::ref {

namespace {

Dim prod(const Shape& s, size_t from, size_t to) {
  Dim p = 1;
  for (size_t i = from; i < to; ++i) p *= s[i];
  return p;
}

}  // namespace

dvec matmul(const dvec& a, const Shape& sa, const dvec& b, const Shape& sb, Shape* out_shape) {
  Dim m = sa[sa.size() - 2], k = sa.back();
  Dim n = sb.back();
  int ba = static_cast<int>(sa.size()) - 2, bb = static_cast<int>(sb.size()) - 2;
  int nb = std::max(ba, bb);
  Shape batch(static_cast<size_t>(nb), 1);
  std::vector<Dim> da(static_cast<size_t>(nb), 1), db(static_cast<size_t>(nb), 1);
  for (int i = 0; i < nb; ++i) {
    if (i - (nb - ba) >= 0) da[static_cast<size_t>(i)] = sa[static_cast<size_t>(i - (nb - ba))];
    if (i - (nb - bb) >= 0) db[static_cast<size_t>(i)] = sb[static_cast<size_t>(i - (nb - bb))];
    batch[static_cast<size_t>(i)] = std::max(da[static_cast<size_t>(i)], db[static_cast<size_t>(i)]);
  }
  Dim count = 1;
  for (Dim d : batch) count *= d;
  dvec out(static_cast<size_t>(count * m * n), 0.0);
  for (Dim bi = 0; bi < count; ++bi) {
    // decompose and map to operand batch offsets (broadcast dims contribute 0)
    Dim rem = bi, aoff = 0, boff = 0, astr = 1, bstr = 1;
    std::vector<Dim> idx(static_cast<size_t>(nb));
    for (int i = nb - 1; i >= 0; --i) {
      idx[static_cast<size_t>(i)] = rem % batch[static_cast<size_t>(i)];
      rem /= batch[static_cast<size_t>(i)];
    }
    for (int i = nb - 1; i >= 0; --i) {
      if (da[static_cast<size_t>(i)] != 1) {
        aoff += idx[static_cast<size_t>(i)] * astr;
        astr *= da[static_cast<size_t>(i)];
      }
      if (db[static_cast<size_t>(i)] != 1) {
        boff += idx[static_cast<size_t>(i)] * bstr;
        bstr *= db[static_cast<size_t>(i)];
      }
    }
    const double* pa = a.data() + aoff * m * k;
    const double* pb = b.data() + boff * k * n;
    double* po = out.data() + bi * m * n;
    for (Dim i = 0; i < m; ++i)
      for (Dim j = 0; j < n; ++j) {
        double acc = 0.0;
        for (Dim l = 0; l < k; ++l) acc += pa[i * k + l] * pb[l * n + j];
        po[i * n + j] = acc;
      }
  }
  if (out_shape) {
    *out_shape = batch;
    out_shape->push_back(m);
    out_shape->push_back(n);
  }
  return out;
}

dvec linear(const dvec& x, Dim rows, Dim din, const dvec& w, Dim dout, const dvec* b) {
  dvec out(static_cast<size_t>(rows * dout), 0.0);
  for (Dim r = 0; r < rows; ++r)
    for (Dim o = 0; o < dout; ++o) {
      double acc = b ? (*b)[static_cast<size_t>(o)] : 0.0;
      for (Dim i = 0; i < din; ++i) acc += x[static_cast<size_t>(r * din + i)] * w[static_cast<size_t>(o * din + i)];
      out[static_cast<size_t>(r * dout + o)] = acc;
    }
  return out;
}

dvec conv2d(const dvec& x, const Shape& sx, const dvec& w, const Shape& sw, int stride, int pad,
            int groups, Shape* out_shape) {
  Dim n = sx[0], c = sx[1], h = sx[2], ww = sx[3];
  Dim o = sw[0], cg = sw[1], kh = sw[2], kw = sw[3];
  Dim og = o / groups;
  Dim oh = (h + 2 * pad - kh) / stride + 1;
  Dim ow = (ww + 2 * pad - kw) / stride + 1;
  dvec out(static_cast<size_t>(n * o * oh * ow), 0.0);
  for (Dim im = 0; im < n; ++im)
    for (Dim oc = 0; oc < o; ++oc) {
      Dim gr = oc / og;
      for (Dim oy = 0; oy < oh; ++oy)
        for (Dim ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (Dim cc = 0; cc < cg; ++cc) {
            Dim ic = gr * cg + cc;
            for (Dim ki = 0; ki < kh; ++ki) {
              Dim iy = oy * stride - pad + ki;
              if (iy < 0 || iy >= h) continue;
              for (Dim kj = 0; kj < kw; ++kj) {
                Dim ix = ox * stride - pad + kj;
                if (ix < 0 || ix >= ww) continue;
                acc += x[static_cast<size_t>(((im * c + ic) * h + iy) * ww + ix)] *
                       w[static_cast<size_t>(((oc * cg + cc) * kh + ki) * kw + kj)];
              }
            }
          }
          out[static_cast<size_t>(((im * o + oc) * oh + oy) * ow + ox)] = acc;
        }
    }
  if (out_shape) *out_shape = Shape{n, o, oh, ow};
  return out;
}

dvec layernorm(const dvec& x, const Shape& sx, int axis, const dvec& gain, const dvec& bias,
               double eps) {
  int nd = static_cast<int>(sx.size());
  int a = axis < 0 ? axis + nd : axis;
  Dim outer = prod(sx, 0, static_cast<size_t>(a));
  Dim len = sx[static_cast<size_t>(a)];
  Dim inner = prod(sx, static_cast<size_t>(a) + 1, sx.size());
  dvec out(x.size());
  for (Dim o = 0; o < outer; ++o)
    for (Dim i = 0; i < inner; ++i) {
      double mean = 0.0;
      for (Dim cc = 0; cc < len; ++cc) mean += x[static_cast<size_t>((o * len + cc) * inner + i)];
      mean /= static_cast<double>(len);
      double var = 0.0;
      for (Dim cc = 0; cc < len; ++cc) {
        double d = x[static_cast<size_t>((o * len + cc) * inner + i)] - mean;
        var += d * d;
      }
      var /= static_cast<double>(len);
      double istd = 1.0 / std::sqrt(var + eps);
      for (Dim cc = 0; cc < len; ++cc) {
        size_t at = static_cast<size_t>((o * len + cc) * inner + i);
        out[at] = (x[at] - mean) * istd * gain[static_cast<size_t>(cc)] + bias[static_cast<size_t>(cc)];
      }
    }
  return out;
}

dvec global_avg_pool(const dvec& x, const Shape& sx) {
  Dim n = sx[0], c = sx[1], hw = sx[2] * sx[3];
  dvec out(static_cast<size_t>(n * c));
  for (Dim i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (Dim j = 0; j < hw; ++j) acc += x[static_cast<size_t>(i * hw + j)];
    out[static_cast<size_t>(i)] = acc / static_cast<double>(hw);
  }
  return out;
}

dvec mean_axis(const dvec& x, const Shape& sx, int axis) {
  int nd = static_cast<int>(sx.size());
  int a = axis < 0 ? axis + nd : axis;
  Dim outer = prod(sx, 0, static_cast<size_t>(a));
  Dim len = sx[static_cast<size_t>(a)];
  Dim inner = prod(sx, static_cast<size_t>(a) + 1, sx.size());
  dvec out(static_cast<size_t>(outer * inner));
  for (Dim o = 0; o < outer; ++o)
    for (Dim i = 0; i < inner; ++i) {
      double acc = 0.0;
      for (Dim cc = 0; cc < len; ++cc) acc += x[static_cast<size_t>((o * len + cc) * inner + i)];
      out[static_cast<size_t>(o * inner + i)] = acc / static_cast<double>(len);
    }
  return out;
}

double sum(const dvec& x) {
  double acc = 0.0;
  for (double v : x) acc += v;
  return acc;
}

dvec softmax_lastdim(const dvec& x, Dim rows, Dim cols) {
  dvec out(x.size());
  for (Dim r = 0; r < rows; ++r) {
    double m = x[static_cast<size_t>(r * cols)];
    for (Dim j = 1; j < cols; ++j) m = std::max(m, x[static_cast<size_t>(r * cols + j)]);
    double sum = 0.0;
    for (Dim j = 0; j < cols; ++j) {
      double e = std::exp(x[static_cast<size_t>(r * cols + j)] - m);
      out[static_cast<size_t>(r * cols + j)] = e;
      sum += e;
    }
    for (Dim j = 0; j < cols; ++j) out[static_cast<size_t>(r * cols + j)] /= sum;
  }
  return out;
}

dvec gelu(const dvec& x) {
  dvec out(x.size());
  for (size_t i = 0; i < x.size(); ++i)
    out[i] = x[i] * 0.5 * (1.0 + std::erf(x[i] * 0.70710678118654752440));
  return out;
}

double smoothed_ce(const dvec& logits, Dim n, Dim classes, const std::vector<std::int32_t>& labels,
                   double eps_smooth) {
  double total = 0.0;
  for (Dim i = 0; i < n; ++i) {
    const double* row = logits.data() + i * classes;
    double m = row[0];
    for (Dim j = 1; j < classes; ++j) m = std::max(m, row[j]);
    double lse = 0.0;
    for (Dim j = 0; j < classes; ++j) lse += std::exp(row[j] - m);
    lse = std::log(lse) + m;
    double ce_target = lse - row[labels[static_cast<size_t>(i)]];
    double ce_uniform = 0.0;
    for (Dim j = 0; j < classes; ++j) ce_uniform += lse - row[j];
    ce_uniform /= static_cast<double>(classes);
    total += (1.0 - eps_smooth) * ce_target + eps_smooth * ce_uniform;
  }
  return total / static_cast<double>(n);
}

std::vector<float> lif_sequence(const neuron::LIFParams& p, const std::vector<float>& x,
                                Dim t_steps, Dim n) {
  std::vector<float> spikes(static_cast<size_t>(t_steps * n), 0.0f);
  const float inv_tau = 1.0f / p.tau;
  for (Dim e = 0; e < n; ++e) {
    float v = p.v_rest;
    int refractory = 0;
    for (Dim t = 0; t < t_steps; ++t) {
      float drift = -(v - p.v_rest);
      float drive = p.r * x[static_cast<size_t>(t * n + e)];
      float h = v + inv_tau * (drift + drive);
      bool spike = refractory <= 0 && h >= p.v_threshold;
      spikes[static_cast<size_t>(t * n + e)] = spike ? 1.0f : 0.0f;
      v = spike ? p.v_reset : h;
      refractory = spike ? p.refractory_steps : std::max(refractory - 1, 0);
    }
  }
  return spikes;
}

std::vector<Dim> partition_index_map(Dim n, Dim c, Dim h, Dim w, bool grid, Dim size) {
  std::vector<Dim> map;
  if (grid) {
    Dim cells_h = h / size, cells_w = w / size;
    for (Dim im = 0; im < n; ++im)
      for (Dim a = 0; a < cells_h; ++a)
        for (Dim b = 0; b < cells_w; ++b)
          for (Dim i = 0; i < size; ++i)
            for (Dim j = 0; j < size; ++j)
              for (Dim ch = 0; ch < c; ++ch) {
                Dim py = a + i * cells_h;
                Dim px = b + j * cells_w;
                map.push_back(((im * c + ch) * h + py) * w + px);
              }
  } else {
    Dim tiles_h = h / size, tiles_w = w / size;
    for (Dim im = 0; im < n; ++im)
      for (Dim ty = 0; ty < tiles_h; ++ty)
        for (Dim tx = 0; tx < tiles_w; ++tx)
          for (Dim i = 0; i < size; ++i)
            for (Dim j = 0; j < size; ++j)
              for (Dim ch = 0; ch < c; ++ch) {
                Dim py = ty * size + i;
                Dim px = tx * size + j;
                map.push_back(((im * c + ch) * h + py) * w + px);
              }
  }
  return map;
}

}  // namespace sac::ref
