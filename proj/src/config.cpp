// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "sdfsplat/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

namespace sdfsplat {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw SpecError("config: bad boolean for " + key + ": " + v);
}

std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) continue;
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw SpecError("config: bad integer list for " + key + ": " + v);
    }
  }
  if (out.empty()) throw SpecError("config: empty list for " + key);
  return out;
}

std::string join_int_list(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

// One row of the key registry: how to set a field from text and how to
// print it back out. Built per call; the config is small.
struct KeyEntry {
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <class T, class Field>
KeyEntry numeric_entry(Field TrainConfig::* field) {
  return {
      [field](TrainConfig& c, const std::string& v) {
        try {
          if constexpr (std::is_same_v<T, double>)
            c.*field = std::stod(v);
          else if constexpr (std::is_same_v<T, uint64_t>)
            c.*field = std::stoull(v);
          else if constexpr (std::is_same_v<T, int64_t>)
            c.*field = std::stoll(v);
          else
            c.*field = std::stoi(v);
        } catch (const std::exception&) {
          throw SpecError("config: bad number: " + v);
        }
      },
      [field](const TrainConfig& c) {
        std::ostringstream ss;
        ss.precision(17);
        ss << c.*field;
        return ss.str();
      }};
}

template <class T, class Field>
KeyEntry guidance_entry(Field GuidanceConfig::* field) {
  return {
      [field](TrainConfig& c, const std::string& v) {
        try {
          if constexpr (std::is_same_v<T, double>)
            c.guidance.*field = std::stod(v);
          else
            c.guidance.*field = std::stoi(v);
        } catch (const std::exception&) {
          throw SpecError("config: bad number: " + v);
        }
      },
      [field](const TrainConfig& c) {
        std::ostringstream ss;
        ss.precision(17);
        ss << c.guidance.*field;
        return ss.str();
      }};
}

KeyEntry bool_entry(bool TrainConfig::* field) {
  return {[field](TrainConfig& c, const std::string& v) {
            c.*field = parse_bool(v, "");
          },
          [field](const TrainConfig& c) {
            return (c.*field) ? std::string("true") : std::string("false");
          }};
}

// Key order here is the order save_train_config writes.
std::vector<std::pair<std::string, KeyEntry>> key_registry() {
  using C = TrainConfig;
  std::vector<std::pair<std::string, KeyEntry>> r;
  r.emplace_back("seed", numeric_entry<uint64_t>(&C::seed));
  r.emplace_back("total_gauss_iters",
                 numeric_entry<int64_t>(&C::total_gauss_iters));
  r.emplace_back("gauss_phase", numeric_entry<int>(&C::gauss_phase));
  r.emplace_back("sdf_phase", numeric_entry<int>(&C::sdf_phase));
  r.emplace_back("init_gauss_iters", numeric_entry<int>(&C::init_gauss_iters));
  r.emplace_back("init_sdf_iters", numeric_entry<int>(&C::init_sdf_iters));
  r.emplace_back("densify_every", numeric_entry<int>(&C::densify_every));
  r.emplace_back("densify_start", numeric_entry<int>(&C::densify_start));
  r.emplace_back("densify_stop_frac",
                 numeric_entry<double>(&C::densify_stop_frac));
  r.emplace_back("holdout_every", numeric_entry<int>(&C::holdout_every));
  r.emplace_back("bases", numeric_entry<int>(&C::bases));
  r.emplace_back("rigid_k", numeric_entry<int>(&C::rigid_k));
  r.emplace_back("scaffold_window", numeric_entry<int>(&C::scaffold_window));
  r.emplace_back("scaffold_max_points",
                 numeric_entry<int>(&C::scaffold_max_points));
  r.emplace_back("max_gaussians", numeric_entry<int>(&C::max_gaussians));
  r.emplace_back("sdf_grid_res",
                 KeyEntry{[](TrainConfig& c, const std::string& v) {
                            c.sdf_grid_res = parse_int_list(v, "sdf_grid_res");
                          },
                          [](const TrainConfig& c) {
                            return join_int_list(c.sdf_grid_res);
                          }});
  r.emplace_back("sdf_grid_feat", numeric_entry<int>(&C::sdf_grid_feat));
  r.emplace_back("sdf_def_width", numeric_entry<int>(&C::sdf_def_width));
  r.emplace_back("sdf_def_depth", numeric_entry<int>(&C::sdf_def_depth));
  r.emplace_back("sdf_hyp_width", numeric_entry<int>(&C::sdf_hyp_width));
  r.emplace_back("sdf_hyp_depth", numeric_entry<int>(&C::sdf_hyp_depth));
  r.emplace_back("sdf_head_width", numeric_entry<int>(&C::sdf_head_width));
  r.emplace_back("sdf_head_depth", numeric_entry<int>(&C::sdf_head_depth));
  r.emplace_back("sdf_latent_dim", numeric_entry<int>(&C::sdf_latent_dim));
  r.emplace_back("sdf_pretrain_iters",
                 numeric_entry<int>(&C::sdf_pretrain_iters));
  r.emplace_back("rays_per_batch", numeric_entry<int>(&C::rays_per_batch));
  r.emplace_back("samples_per_ray", numeric_entry<int>(&C::samples_per_ray));
  r.emplace_back("surf_points_per_batch",
                 numeric_entry<int>(&C::surf_points_per_batch));
  r.emplace_back("sdf_lr", numeric_entry<double>(&C::sdf_lr));
  r.emplace_back("sdf_eps_override",
                 numeric_entry<double>(&C::sdf_eps_override));
  r.emplace_back("lr_means", numeric_entry<double>(&C::lr_means));
  r.emplace_back("lr_quats", numeric_entry<double>(&C::lr_quats));
  r.emplace_back("lr_log_scales", numeric_entry<double>(&C::lr_log_scales));
  r.emplace_back("lr_opacities", numeric_entry<double>(&C::lr_opacities));
  r.emplace_back("lr_colors", numeric_entry<double>(&C::lr_colors));
  r.emplace_back("lr_basis_mu", numeric_entry<double>(&C::lr_basis_mu));
  r.emplace_back("lr_basis_rot", numeric_entry<double>(&C::lr_basis_rot));
  r.emplace_back("lr_coeffs", numeric_entry<double>(&C::lr_coeffs));
  r.emplace_back("w_img", numeric_entry<double>(&C::w_img));
  r.emplace_back("w_l1ssim", numeric_entry<double>(&C::w_l1ssim));
  r.emplace_back("w_depth", numeric_entry<double>(&C::w_depth));
  r.emplace_back("w_mask", numeric_entry<double>(&C::w_mask));
  r.emplace_back("w_track", numeric_entry<double>(&C::w_track));
  r.emplace_back("w_rigid", numeric_entry<double>(&C::w_rigid));
  r.emplace_back("w_sparse", numeric_entry<double>(&C::w_sparse));
  r.emplace_back("w_sdf_rgb_start", numeric_entry<double>(&C::w_sdf_rgb_start));
  r.emplace_back("w_sdf_rgb_end", numeric_entry<double>(&C::w_sdf_rgb_end));
  r.emplace_back("w_sdf_sm_start", numeric_entry<double>(&C::w_sdf_sm_start));
  r.emplace_back("w_sdf_sm_end", numeric_entry<double>(&C::w_sdf_sm_end));
  r.emplace_back("w_sdf_d", numeric_entry<double>(&C::w_sdf_d));
  r.emplace_back("w_sdf_sdf", numeric_entry<double>(&C::w_sdf_sdf));
  r.emplace_back("w_sdf_fs", numeric_entry<double>(&C::w_sdf_fs));
  r.emplace_back("w_sdf_eik", numeric_entry<double>(&C::w_sdf_eik));
  r.emplace_back("background_iters", numeric_entry<int>(&C::background_iters));
  r.emplace_back("background_points",
                 numeric_entry<int>(&C::background_points));
  r.emplace_back("sg4gp", bool_entry(&C::sg4gp));
  r.emplace_back("gps4s", bool_entry(&C::gps4s));
  r.emplace_back("n_grid", guidance_entry<int>(&GuidanceConfig::n_grid));
  r.emplace_back("tau_s", guidance_entry<double>(&GuidanceConfig::tau_s));
  r.emplace_back("tau_n", guidance_entry<double>(&GuidanceConfig::tau_n));
  r.emplace_back("tau_pr", guidance_entry<double>(&GuidanceConfig::tau_pr));
  r.emplace_back("gamma_samp",
                 guidance_entry<double>(&GuidanceConfig::gamma_samp));
  r.emplace_back("gamma_pr",
                 guidance_entry<double>(&GuidanceConfig::gamma_pr));
  r.emplace_back("k_nn", guidance_entry<int>(&GuidanceConfig::k_nn));
  r.emplace_back("prune_window",
                 guidance_entry<int>(&GuidanceConfig::prune_window));
  return r;
}

}  // namespace

void GuidanceConfig::validate() const {
  if (n_grid < 4) throw SpecError("guidance: n_grid must be >= 4");
  if (!(tau_s > 0) || !(tau_n > 0) || !(tau_pr > 0))
    throw SpecError("guidance: thresholds must be positive");
  if (!(gamma_samp > 0) || !(gamma_pr > 0))
    throw SpecError("guidance: gammas must be positive");
  if (k_nn < 1) throw SpecError("guidance: k_nn must be >= 1");
  if (prune_window < 0) throw SpecError("guidance: prune_window must be >= 0");
}

void TrainConfig::validate() const {
  guidance.validate();
  if (total_gauss_iters < 0 || init_gauss_iters < 0 || init_sdf_iters < 0)
    throw SpecError("config: iteration counts must be >= 0");
  if (gauss_phase < 1 || sdf_phase < 0)
    throw SpecError("config: phase lengths invalid");
  if (holdout_every < 0) throw SpecError("config: holdout_every must be >= 0");
  if (bases < 1) throw SpecError("config: bases must be >= 1");
  if (rays_per_batch < 1 || samples_per_ray < 2)
    throw SpecError("config: ray batch shape invalid");
  if (sdf_grid_res.size() < 1)
    throw SpecError("config: sdf_grid_res must name at least one level");
  if (!(densify_stop_frac >= 0.0 && densify_stop_frac <= 1.0))
    throw SpecError("config: densify_stop_frac must be in [0, 1]");
  if (max_gaussians < 50)
    throw SpecError("config: max_gaussians must be >= 50");
}

void set_config_key(TrainConfig& cfg, const std::string& key,
                    const std::string& value) {
  static const auto registry = key_registry();
  for (const auto& [name, entry] : registry) {
    if (name == key) {
      entry.set(cfg, value);
      return;
    }
  }
  throw SpecError("config: unknown key: " + key);
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path);
  TrainConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw SpecError("config: line " + std::to_string(lineno) +
                      " is not key = value: " + line);
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw SpecError("config: line " + std::to_string(lineno) +
                      " has empty key or value");
    set_config_key(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

void save_train_config(const std::string& path, const TrainConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw IoError("config: cannot write " + path);
  for (const auto& [name, entry] : key_registry())
    out << name << " = " << entry.get(cfg) << "\n";
  if (!out) throw IoError("config: write failed for " + path);
}

}  // namespace sdfsplat
