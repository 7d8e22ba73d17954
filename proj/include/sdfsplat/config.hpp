// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdfsplat/common.hpp"

namespace sdfsplat {

/// Thresholds steering the cross-guidance mechanisms: where densification
/// fires, when splats are pruned, and how tightly ray sampling hugs the
/// splat depth. Distances are in scene units.
struct GuidanceConfig {
  int n_grid = 32;          // cells per axis of the canonical partition
  double tau_s = 0.01;      // near-surface band for densification
  double tau_n = 0.02;      // under-occupancy fraction of mean cell count
  double tau_pr = 0.02;     // survival-score floor for pruning
  double gamma_samp = 3.0;  // sample-interval half-width per unit |sdf|
  double gamma_pr = 0.05;   // score sharpness; see decisions ledger
  int k_nn = 3;             // neighbors for prune scores and stat sampling
  int prune_window = 5;     // trailing frames integrated by prune

  void validate() const;
};

/// Everything a training run reads: schedule lengths, learning rates, loss
/// weights, model sizes, and the guidance thresholds. Field defaults are
/// the full-scale settings; fixture runs scale them down via config file.
struct TrainConfig {
  uint64_t seed = 1;

  // Schedule. The alternating loop runs gauss_phase Gaussian steps then
  // sdf_phase SDF steps per cycle until total_gauss_iters is reached.
  int64_t total_gauss_iters = 30000;
  int gauss_phase = 2000;
  int sdf_phase = 1000;
  int init_gauss_iters = 1000;
  int init_sdf_iters = 2000;
  int densify_every = 500;
  int densify_start = 1000;
  double densify_stop_frac = 0.8;
  int holdout_every = 8;  // frames with time_index % k == 0 are held out

  // Motion model and scaffold.
  int bases = 16;
  int rigid_k = 8;
  int scaffold_window = 5;
  int scaffold_max_points = 50000;
  int max_gaussians = 200000;

  // SDF architecture (maps onto SdfArch; grid_res comma-separated).
  std::vector<int> sdf_grid_res = {16, 32, 64, 128};
  int sdf_grid_feat = 2;
  int sdf_def_width = 128;
  int sdf_def_depth = 4;
  int sdf_hyp_width = 128;
  int sdf_hyp_depth = 4;
  int sdf_head_width = 64;
  int sdf_head_depth = 2;
  int sdf_latent_dim = 8;
  int sdf_pretrain_iters = 300;

  // SDF optimization.
  int rays_per_batch = 1024;
  int samples_per_ray = 128;
  int surf_points_per_batch = 256;
  double sdf_lr = 5e-4;
  double sdf_eps_override = 0.0;  // truncation override; 0 = resolution-tied

  // Gaussian learning rates. lr_means is scaled by the scene extent at
  // runtime; the rest apply as-is.
  double lr_means = 1.6e-4;
  double lr_quats = 1e-3;
  double lr_log_scales = 5e-3;
  double lr_opacities = 0.05;
  double lr_colors = 2.5e-3;
  double lr_basis_mu = 1.6e-3;
  double lr_basis_rot = 1e-3;
  double lr_coeffs = 1e-3;

  // Gaussian-phase loss weights.
  double w_img = 1.0;
  double w_l1ssim = 1.0;
  double w_depth = 0.2;
  double w_mask = 0.1;
  double w_track = 1e-4;
  double w_rigid = 1.0;
  double w_sparse = 1e-3;

  // SDF loss weights; rgb and smoothness decay geometrically over training.
  double w_sdf_rgb_start = 10.0;
  double w_sdf_rgb_end = 1.0;
  double w_sdf_sm_start = 1.0;
  double w_sdf_sm_end = 0.1;
  double w_sdf_d = 1.0;
  double w_sdf_sdf = 10.0;
  double w_sdf_fs = 2.0;
  double w_sdf_eik = 0.1;

  // Background layer (static splats fit to non-masked pixels).
  int background_iters = 0;
  int background_points = 8000;

  // Ablation toggles: sg4gp gates densify/prune, gps4s gates guided ray
  // sampling. Both off reduces the Gaussian path to plain splatting.
  bool sg4gp = true;
  bool gps4s = true;

  GuidanceConfig guidance;

  void validate() const;
};

/// Parses `key = value` lines (# starts a comment) into a TrainConfig.
/// Unknown keys are errors so typos fail loudly.
TrainConfig load_train_config(const std::string& path);

/// Applies one `key=value` override; same key set as the config file.
void set_config_key(TrainConfig& cfg, const std::string& key,
                    const std::string& value);

/// Writes every key in file form; load_train_config round-trips it.
void save_train_config(const std::string& path, const TrainConfig& cfg);

}  // namespace sdfsplat
