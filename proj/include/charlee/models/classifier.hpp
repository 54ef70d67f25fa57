#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "charlee/errors.hpp"
#include "charlee/numerics/params.hpp"
#include "charlee/numerics/rng.hpp"
#include "charlee/numerics/tape.hpp"

namespace charlee {

/// Two same-padded convolution blocks with relu, global average pooling and
/// a dense output layer. Any model with the same (masked C x T in, logits
/// out) contract could take its place.
struct ClassifierShape {
    std::size_t n_channels = 0;
    std::size_t length = 0;
    std::size_t n_classes = 0;
    std::size_t maps = 32;
    std::size_t kernel_length = 9;
};

inline void add_classifier_params(ParamStore& store, const ClassifierShape& s, RngStream& rng) {
    const std::size_t k = s.kernel_length;
    store.add_glorot("clf.c0.w", {s.maps, s.n_channels, k}, s.n_channels * k, s.maps * k, rng);
    store.add("clf.c0.b", {s.maps});
    store.add_glorot("clf.c1.w", {s.maps, s.maps, k}, s.maps * k, s.maps * k, rng);
    store.add("clf.c1.b", {s.maps});
    store.add_glorot("clf.out.w", {s.n_classes, s.maps}, s.maps, s.n_classes, rng);
    store.add("clf.out.b", {s.n_classes});
}

inline Var classifier_forward(Tape& tape, ParamStore& store, const ClassifierShape& s, std::span<const double> input) {
    if (input.size() != s.n_channels * s.length) throw InputError("classifier input must be C x T");
    const std::size_t k = s.kernel_length;
    Var h = tape.constant(input);
    h = tape.relu(tape.conv1d(h, tape.param(store.get("clf.c0.w")), tape.param(store.get("clf.c0.b")), s.n_channels, k));
    h = tape.relu(tape.conv1d(h, tape.param(store.get("clf.c1.w")), tape.param(store.get("clf.c1.b")), s.maps, k));
    h = tape.global_avg_pool(h, s.maps);
    return tape.dense(h, tape.param(store.get("clf.out.w")), tape.param(store.get("clf.out.b")));
}

inline std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

/// Forward pass without keeping a tape around; returns the predicted class.
inline std::size_t classifier_predict(ParamStore& store, const ClassifierShape& s, std::span<const double> input) {
    Tape tape;
    return argmax(tape.value(classifier_forward(tape, store, s, input)));
}

} // namespace charlee
