#include "featxlate/losses.hpp"

#include "featxlate/error.hpp"

namespace featxlate {

void LossWeights::validate() const {
  if (gp < 0 || cyc < 0 || idty < 0) throw ConfigError("loss weights must be non-negative");
}

namespace {

void check_batch(const torch::Tensor& t, const char* what) {
  if (!t.defined() || t.dim() == 0 || t.size(0) == 0) {
    throw ShapeError(std::string(what) + ": empty batch");
  }
}

}  // namespace

torch::Tensor interpolate(const torch::Tensor& real, const torch::Tensor& generated, const torch::Tensor& eps) {
  if (real.sizes() != generated.sizes()) throw ShapeError("interpolate: real and generated shapes differ");
  std::vector<std::int64_t> shape(real.dim(), 1);
  shape[0] = real.size(0);
  auto e = eps.to(real.scalar_type()).view(shape);
  return e * real + (1.0 - e) * generated;
}

torch::Tensor draw_interpolation_eps(std::int64_t n, std::optional<at::Generator> gen) {
  return gen ? at::rand({n}, *gen) : torch::rand({n});
}

torch::Tensor gradient_penalty(const CriticFn& critic, const torch::Tensor& real, const torch::Tensor& generated,
                               double lambda_gp, const torch::Tensor& eps) {
  check_batch(real, "gradient_penalty");
  const auto n = real.size(0);
  auto e = eps.defined() ? eps : draw_interpolation_eps(n);
  auto y_hat = interpolate(real.detach(), generated.detach(), e).requires_grad_(true);
  auto out = critic(y_hat);
  torch::Tensor grad;
  if (out.requires_grad()) {
    auto grads = torch::autograd::grad({out.sum()}, {y_hat}, /*grad_outputs=*/{}, /*retain_graph=*/true,
                                       /*create_graph=*/true, /*allow_unused=*/true);
    grad = grads[0];
  }
  if (!grad.defined()) grad = torch::zeros_like(y_hat);
  auto norm = grad.reshape({n, -1}).norm(2, 1);
  if (!torch::isfinite(norm).all().item<bool>()) {
    throw NumericError("gradient penalty: non-finite critic gradient");
  }
  return lambda_gp * (norm - 1.0).pow(2).mean();
}

AdversarialTerms adversarial_loss(const torch::Tensor& generated, const torch::Tensor& real, const CriticFn& critic,
                                  double lambda_gp, const torch::Tensor& eps) {
  check_batch(generated, "adversarial_loss (generated)");
  check_batch(real, "adversarial_loss (real)");
  AdversarialTerms t;
  t.gp = gradient_penalty(critic, real, generated, lambda_gp, eps);
  t.critic = critic(generated.detach()).mean() - critic(real).mean() + t.gp;
  t.generator = -critic(generated).mean();
  return t;
}

torch::Tensor cycle_loss(const torch::Tensor& x, const torch::Tensor& x_roundtrip) {
  if (x.sizes() != x_roundtrip.sizes()) throw ShapeError("cycle_loss: shape mismatch");
  check_batch(x, "cycle_loss");
  return (x - x_roundtrip).abs().mean();
}

torch::Tensor identity_loss(const torch::Tensor& x, const torch::Tensor& same_domain_out) {
  if (x.sizes() != same_domain_out.sizes()) throw ShapeError("identity_loss: shape mismatch");
  check_batch(x, "identity_loss");
  return (x - same_domain_out).abs().mean();
}

LossBreakdown combined_stage_loss(const StageLossParts& parts, const LossWeights& weights) {
  LossBreakdown out;
  out.total = parts.adv_ab + parts.adv_ba + weights.cyc * parts.cyc + weights.idty * parts.idty;
  out.terms["adv_ab"] = parts.adv_ab.item<double>();
  out.terms["adv_ba"] = parts.adv_ba.item<double>();
  out.terms["cyc"] = parts.cyc.item<double>();
  out.terms["idty"] = parts.idty.item<double>();
  out.terms["total"] = out.total.item<double>();
  return out;
}

torch::Tensor conditional_cycle_loss(const torch::Tensor& a_i, const torch::Tensor& a_next, const torch::Tensor& b_i,
                                     const torch::Tensor& b_next, const torch::Tensor& b_tilde_next,
                                     const torch::Tensor& a_tilde_next, const ConditionalFn& g_b,
                                     const ConditionalFn& g_a) {
  auto a_roundtrip = g_a(g_b(a_i, b_tilde_next), a_next);
  auto b_roundtrip = g_b(g_a(b_i, a_tilde_next), b_next);
  return cycle_loss(a_i, a_roundtrip) + cycle_loss(b_i, b_roundtrip);
}

torch::Tensor conditional_identity_loss(const torch::Tensor& a_i, const torch::Tensor& a_next, const torch::Tensor& b_i,
                                        const torch::Tensor& b_next, const ConditionalFn& g_b,
                                        const ConditionalFn& g_a) {
  return identity_loss(a_i, g_a(a_i, a_next)) + identity_loss(b_i, g_b(b_i, b_next));
}

torch::Tensor lsgan_loss(const torch::Tensor& real_out, const torch::Tensor& fake_out, GanSide side) {
  if (side == GanSide::generator) {
    return 0.5 * (fake_out - 1.0).pow(2).mean();
  }
  return 0.5 * (real_out - 1.0).pow(2).mean() + 0.5 * fake_out.pow(2).mean();
}

}  // namespace featxlate
