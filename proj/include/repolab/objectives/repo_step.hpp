#pragma once

#include <span>
#include <vector>

#include "repolab/corpus/synth.hpp"
#include "repolab/model/params.hpp"
#include "repolab/objectives/discriminator.hpp"
#include "repolab/objectives/losses.hpp"
#include "repolab/objectives/optimizer.hpp"

namespace repolab::objectives {

struct RepoConfig {
  double alpha = 0.2;
  double lr = 3e-5;       // eta
  double disc_lr = 3e-4;  // eta_d
  double grl_lambda = 1.0;
  DomainScope scope = DomainScope::FullSequence;
  KlDirection kl = KlDirection::RefToPolicy;
  // 1 is the token-level objective; larger values pool states over windows.
  int segment_length = 1;
  int disc_depth = 2;
  int disc_width = 16;
  // Discriminator updates per model update. The first disc_steps - 1 run on
  // the batch's frozen probe-layer states before the joint step, pulling the
  // discriminator toward a best response.
  int disc_steps = 1;

  // Throws InvalidConfig.
  void validate() const;
};

struct RepoGradients {
  std::vector<Tensor> params;  // one per model tensor
  std::vector<Tensor> disc;    // one per discriminator tensor
  double retain = 0.0;
  double domain = 0.0;
};

// One backward pass for both players. The discriminator reads
// grl(h, (1 - alpha) * grl_lambda) and the seed is alpha * L_retain + L_dom,
// which hands the discriminator the unweighted gradient of L_dom, the
// extractor alpha * dL_retain - (1 - alpha) * grl_lambda * dL_dom, and the
// head only the retain gradient.
RepoGradients repo_gradients(const model::TransformerParams& params, const DiscriminatorParams& disc,
                             const model::TransformerParams& reference, std::span<const corpus::PairedTriple> batch,
                             const RepoConfig& config);

struct TrainState {
  model::TransformerParams params;
  DiscriminatorParams disc;
  model::ReferenceSnapshot reference;
  Optimizer model_opt;
  Optimizer disc_opt;
  long step = 0;
};

// Builds a state whose optimizers run at config.lr and config.disc_lr.
TrainState make_train_state(const model::TransformerParams& params, const model::ReferenceSnapshot& reference,
                            const RepoConfig& config, OptimizerConfig base, std::uint64_t disc_seed);

struct RepoStepResult {
  double retain = 0.0;
  double domain = 0.0;
  double grad_norm = 0.0;
  double disc_grad_norm = 0.0;
  double lr = 0.0;
};

// Discriminator descends on L_dom at disc_lr; the model descends on
// alpha * L_retain + (1 - alpha) * L_dom with the extractor's domain
// gradient reversed. Both updates use gradients from the same forward pass.
RepoStepResult repo_step(TrainState& state, std::span<const corpus::PairedTriple> batch, const RepoConfig& config);

}  // namespace repolab::objectives
