#include "sac/gradcheck.hpp"

#include <cmath>

namespace sac::gradcheck {

OpCheck check_op(const std::string& name, const ImplFn& impl, const RefFn& ref_fn,
                 const std::vector<Shape>& input_shapes, Rng& rng, double eps, double tol) {
  OpCheck result;
  result.name = name;
  result.tol = tol;

  std::vector<ref::dvec> dinputs;
  std::vector<Tensor> tinputs;
  for (const Shape& s : input_shapes) {
    ref::dvec d(static_cast<size_t>(numel_of(s)));
    for (double& v : d) v = rng.normal();
    std::vector<float> f(d.begin(), d.end());
    tinputs.push_back(Tensor::from(s, std::move(f), /*requires_grad=*/true));
    dinputs.push_back(std::move(d));
  }

  Tape tape;
  Tensor out;
  {
    Tape::Scope scope(&tape);
    out = impl(tinputs);
  }
  ref::dvec ref_out = ref_fn(dinputs);
  if (ref_out.size() != static_cast<size_t>(out.numel()))
    throw ContractError("check_op: reference output size mismatch for " + name);
  for (size_t i = 0; i < ref_out.size(); ++i)
    result.max_val_diff = std::max(result.max_val_diff,
                                   std::abs(static_cast<double>(out.data()[i]) - ref_out[i]));

  // loss = sum(out * w) for fixed random w
  ref::dvec w(ref_out.size());
  for (double& v : w) v = rng.normal();
  Tensor wt = Tensor::from(out.shape(), std::vector<float>(w.begin(), w.end()));
  {
    Tape::Scope scope(&tape);
    Tensor loss = sum_all(mul(out, wt));
    tape.backward(loss);
  }

  auto ref_loss = [&](const std::vector<ref::dvec>& ins) {
    ref::dvec o = ref_fn(ins);
    double acc = 0.0;
    for (size_t i = 0; i < o.size(); ++i) acc += o[i] * w[i];
    return acc;
  };

  for (size_t k = 0; k < dinputs.size(); ++k) {
    const auto& grad = tinputs[k].grad();
    for (size_t j = 0; j < dinputs[k].size(); ++j) {
      double saved = dinputs[k][j];
      dinputs[k][j] = saved + eps;
      double up = ref_loss(dinputs);
      dinputs[k][j] = saved - eps;
      double down = ref_loss(dinputs);
      dinputs[k][j] = saved;
      double fd = (up - down) / (2.0 * eps);
      double an = grad.empty() ? 0.0 : static_cast<double>(grad[j]);
      result.max_grad_diff = std::max(result.max_grad_diff, std::abs(fd - an));
    }
  }
  result.pass = result.max_grad_diff <= tol && result.max_val_diff <= tol;
  return result;
}

double fd_coordinate(const std::function<double()>& loss, float* coord, double eps) {
  float saved = *coord;
  *coord = static_cast<float>(static_cast<double>(saved) + eps);
  double up = loss();
  *coord = static_cast<float>(static_cast<double>(saved) - eps);
  double down = loss();
  *coord = saved;
  return (up - down) / (2.0 * eps);
}

}  // namespace sac::gradcheck
