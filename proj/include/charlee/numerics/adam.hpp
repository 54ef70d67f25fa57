#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "charlee/numerics/params.hpp"

namespace charlee {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adaptive-moment optimizer with bias correction. Moments are keyed by
/// parameter name; grads are zeroed after every step.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void step(ParamStore& params) {
        ++step_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (auto& p : params.tensors()) {
            auto& st = moments_[p.name];
            if (st.m.size() != p.size()) {
                st.m.assign(p.size(), 0.0);
                st.v.assign(p.size(), 0.0);
            }
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double g = p.grads[i];
                st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g;
                st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = st.m[i] / c1;
                const double vhat = st.v[i] / c2;
                p.values[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
            }
            p.zero_grad();
        }
    }

    const AdamConfig& config() const noexcept { return cfg_; }
    void set_learning_rate(double lr) noexcept { cfg_.learning_rate = lr; }
    long step_count() const noexcept { return step_; }

    /// Moments as tensors named "adam.m/<param>" / "adam.v/<param>" plus a
    /// one-element "adam.step", for resumable training checkpoints.
    void export_state(ParamStore& out) const {
        out.add("adam.step", {1}).values[0] = static_cast<double>(step_);
        for (const auto& [name, st] : moments_) {
            out.add("adam.m/" + name, {st.m.size()}).values = st.m;
            out.add("adam.v/" + name, {st.v.size()}).values = st.v;
        }
    }

    void import_state(const ParamStore& in) {
        moments_.clear();
        step_ = static_cast<long>(in.get("adam.step").values.at(0));
        for (const auto& t : in.tensors()) {
            if (t.name.rfind("adam.m/", 0) == 0) moments_[t.name.substr(7)].m = t.values;
            if (t.name.rfind("adam.v/", 0) == 0) moments_[t.name.substr(7)].v = t.values;
        }
    }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    AdamConfig cfg_;
    long step_ = 0;
    std::map<std::string, Moments> moments_;
};

} // namespace charlee
