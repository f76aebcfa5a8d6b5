#pragma once

#include <torch/torch.h>

#include <functional>
#include <map>
#include <optional>
#include <string>

namespace featxlate {

struct LossWeights {
  double gp = 10.0;
  double cyc = 100.0;
  double idty = 100.0;

  void validate() const;
};

// Scalar per sample.
using CriticFn = std::function<torch::Tensor(const torch::Tensor&)>;
// (source features at level i, translated/content features at level i+1) -> level i.
using ConditionalFn = std::function<torch::Tensor(const torch::Tensor& source, const torch::Tensor& content)>;

// Points on the segments eps * real + (1 - eps) * generated; eps is (N).
torch::Tensor interpolate(const torch::Tensor& real, const torch::Tensor& generated, const torch::Tensor& eps);
// eps ~ U[0, 1], one per sample.
torch::Tensor draw_interpolation_eps(std::int64_t n, std::optional<at::Generator> gen = std::nullopt);

// Mean over the batch of lambda * (||grad D(y_hat)||_2 - 1)^2, with the norm
// over each flattened sample. Differentiable w.r.t. the critic parameters.
// eps defaults to a fresh U[0,1] draw per sample.
torch::Tensor gradient_penalty(const CriticFn& critic, const torch::Tensor& real, const torch::Tensor& generated,
                               double lambda_gp, const torch::Tensor& eps = {});

struct AdversarialTerms {
  torch::Tensor generator;  // -E[D(G(x))]
  torch::Tensor critic;     // E[D(G(x))] - E[D(y)] + gp
  torch::Tensor gp;         // lambda * E[(||grad|| - 1)^2]
};

// The critic term sees `generated` detached; the generator term keeps the graph.
AdversarialTerms adversarial_loss(const torch::Tensor& generated, const torch::Tensor& real, const CriticFn& critic,
                                  double lambda_gp, const torch::Tensor& eps = {});

// Mean absolute difference.
torch::Tensor cycle_loss(const torch::Tensor& x, const torch::Tensor& x_roundtrip);
torch::Tensor identity_loss(const torch::Tensor& x, const torch::Tensor& same_domain_out);

struct StageLossParts {
  torch::Tensor adv_ab;  // generator-side adversarial term, A -> B
  torch::Tensor adv_ba;
  torch::Tensor cyc;     // both directions summed
  torch::Tensor idty;
};

struct LossBreakdown {
  torch::Tensor total;
  std::map<std::string, double> terms;  // adv_ab, adv_ba, cyc, idty, total (unweighted parts + total)
};

// adv_ab + adv_ba + lambda_cyc * cyc + lambda_idty * idty
LossBreakdown combined_stage_loss(const StageLossParts& parts, const LossWeights& weights);

// |G_A(G_B(a_i, b~_{i+1}), a_{i+1}) - a_i| + |G_B(G_A(b_i, a~_{i+1}), b_{i+1}) - b_i|
// where b~/a~ are the cascade's translated deeper levels.
torch::Tensor conditional_cycle_loss(const torch::Tensor& a_i, const torch::Tensor& a_next, const torch::Tensor& b_i,
                                     const torch::Tensor& b_next, const torch::Tensor& b_tilde_next,
                                     const torch::Tensor& a_tilde_next, const ConditionalFn& g_b,
                                     const ConditionalFn& g_a);

// |G_A(a_i, a_{i+1}) - a_i| + |G_B(b_i, b_{i+1}) - b_i|
torch::Tensor conditional_identity_loss(const torch::Tensor& a_i, const torch::Tensor& a_next, const torch::Tensor& b_i,
                                        const torch::Tensor& b_next, const ConditionalFn& g_b,
                                        const ConditionalFn& g_a);

enum class GanSide { generator, discriminator };

// Least-squares GAN. Discriminator: 0.5 E[(D(real) - 1)^2] + 0.5 E[D(fake)^2].
// Generator: 0.5 E[(D(fake) - 1)^2]; `real` is unused on that side.
torch::Tensor lsgan_loss(const torch::Tensor& real_out, const torch::Tensor& fake_out, GanSide side);

}  // namespace featxlate
