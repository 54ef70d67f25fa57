#pragma once

#include <string>
#include <vector>

#include "charlee/numerics/params.hpp"
#include "charlee/numerics/rng.hpp"
#include "charlee/numerics/tape.hpp"

namespace charlee {

/// Fully connected stack with relu between layers and a linear output.
/// Parameters are named "<prefix>.l<i>.w" ([out][in]) and "<prefix>.l<i>.b".
struct Mlp {
    std::string prefix;
    std::vector<std::size_t> widths;  // input, hidden..., output

    std::size_t n_layers() const noexcept { return widths.size() - 1; }
    std::string weight(std::size_t l) const { return prefix + ".l" + std::to_string(l) + ".w"; }
    std::string bias(std::size_t l) const { return prefix + ".l" + std::to_string(l) + ".b"; }

    void init(ParamStore& store, RngStream& rng, double last_layer_scale = 1.0) const {
        for (std::size_t l = 0; l < n_layers(); ++l) {
            auto& w = store.add_glorot(weight(l), {widths[l + 1], widths[l]}, widths[l], widths[l + 1], rng);
            if (l + 1 == n_layers())
                for (auto& v : w.values) v *= last_layer_scale;
            store.add(bias(l), {widths[l + 1]});
        }
    }

    Var forward(Tape& tape, ParamStore& store, Var x) const {
        Var h = x;
        for (std::size_t l = 0; l < n_layers(); ++l) {
            h = tape.dense(h, tape.param(store.get(weight(l))), tape.param(store.get(bias(l))));
            if (l + 1 < n_layers()) h = tape.relu(h);
        }
        return h;
    }
};

struct FilterOutput {
    Var alpha;
    Var beta;
};

/// Beta-policy head: two raw outputs mapped through softplus(.) + 1.
inline FilterOutput filter_forward(Tape& tape, ParamStore& store, const Mlp& head, Var state) {
    const Var raw = tape.add_scalar(tape.softplus(head.forward(tape, store, state)), 1.0);
    return {tape.pick(raw, 0), tape.pick(raw, 1)};
}

/// Stop head: sigmoid of an MLP over the state with the snapped fraction appended.
inline Var stop_forward(Tape& tape, ParamStore& store, const Mlp& head, Var state, double snapped_fraction) {
    const Var in = tape.concat({state, tape.scalar(snapped_fraction)});
    return tape.sigmoid(head.forward(tape, store, in));
}

inline Var baseline_forward(Tape& tape, ParamStore& store, const Mlp& head, Var state) {
    return head.forward(tape, store, state);
}

} // namespace charlee
