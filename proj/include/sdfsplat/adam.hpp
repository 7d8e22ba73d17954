// Copyright Contributors to the sdfsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdfsplat/common.hpp"

namespace sdfsplat {

/// Named view of one flat parameter (or gradient) buffer.
template <class S> struct ParamRef {
  S* data = nullptr;
  int64_t size = 0;
  std::string name;
};

/// Adam with per-buffer first/second moment state. The caller passes
/// parameter and gradient views in the same order every step.
template <class S> class Adam {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void init(const std::vector<ParamRef<S>>& params) {
    m_.clear();
    v_.clear();
    for (const auto& p : params) {
      m_.push_back(VecX<S>::Zero(p.size));
      v_.push_back(VecX<S>::Zero(p.size));
    }
    step_ = 0;
  }

  bool initialized() const { return !m_.empty(); }
  int64_t step_count() const { return step_; }

  void step(const std::vector<ParamRef<S>>& params,
            const std::vector<ParamRef<S>>& grads, double lr) {
    step(params, grads, std::vector<double>(params.size(), lr));
  }

  /// Per-buffer learning rates, matched to `params` by index. Scaling the
  /// gradient instead would cancel in the moment normalization.
  void step(const std::vector<ParamRef<S>>& params,
            const std::vector<ParamRef<S>>& grads,
            const std::vector<double>& lrs) {
    if (m_.size() != params.size() || params.size() != grads.size() ||
        lrs.size() != params.size())
      throw SpecError("adam: parameter/state list mismatch");
    ++step_;
    const S bc1 = S(1) - S(std::pow(beta1, double(step_)));
    const S bc2 = S(1) - S(std::pow(beta2, double(step_)));
    for (size_t i = 0; i < params.size(); ++i) {
      if (params[i].size != grads[i].size || params[i].size != m_[i].size())
        throw SpecError("adam: buffer size changed under state " +
                        params[i].name);
      Eigen::Map<VecX<S>> p(params[i].data, params[i].size);
      Eigen::Map<const VecX<S>> g(grads[i].data, grads[i].size);
      m_[i] = S(beta1) * m_[i] + (S(1) - S(beta1)) * g;
      v_[i] = S(beta2) * v_[i] + (S(1) - S(beta2)) * g.cwiseProduct(g);
      p.array() -= S(lrs[i]) * (m_[i].array() / bc1) /
                   ((v_[i].array() / bc2).sqrt() + S(eps));
    }
  }

  /// Drops moment state for parameters whose shape changed (densify and
  /// prune rebuild splat buffers); the caller re-inits afterwards.
  void reset() {
    m_.clear();
    v_.clear();
    step_ = 0;
  }

 private:
  std::vector<VecX<S>> m_, v_;
  int64_t step_ = 0;
};

}  // namespace sdfsplat
