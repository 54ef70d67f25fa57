#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "charlee/data/dataset.hpp"
#include "charlee/numerics/rng.hpp"

namespace charlee {

// Eight-class, 4-channel, 96-step benchmark whose classes are separable only
// after observing specific (channel, slice) cells. Channel 3 is the one worth
// keeping longest, channel 0 the first to drop; the early-slice codes are
// strongest on channel 0 and absent on channel 3 so a prefix-weighted ranking
// recovers the order [3, 2, 1, 0].
//
//   slice 0  square pulses on ch0..ch2 coding the class pair; pair {0,1} is
//            also resolved here, pairs {4,5} and {6,7} share the same code.
//   slice 1  ch0 pulse: +1 for classes 4,5 and -1 for classes 6,7.
//   slice 2  nothing.
//   slice 3  Gaussian peaks: classes 2/3 differ in sign on ch3; classes 4/5
//            share +ch3 and differ on ch2; classes 6/7 share +ch1..ch3 and
//            differ on ch0.
//
// The noise-free minimal observation region of each class therefore equals
// its ideal utilization below.

inline constexpr std::size_t kSynthClasses = 8;
inline constexpr std::size_t kSynthChannels = 4;
inline constexpr std::size_t kSynthLength = 96;
inline constexpr std::size_t kSynthSlices = 4;

using UtilizationTemplate = std::array<double, kSynthSlices>;

inline std::array<UtilizationTemplate, kSynthClasses> synthetic_ideal_utilization() {
    return {{{1, 0, 0, 0}, {1, 0, 0, 0},
             {1, 0.25, 0.25, 0.25}, {1, 0.25, 0.25, 0.25},
             {1, 1, 0.5, 0.5}, {1, 1, 0.5, 0.5},
             {1, 1, 1, 1}, {1, 1, 1, 1}}};
}

inline double ideal_savings(const UtilizationTemplate& u) {
    double cost = 0.0;
    for (double v : u) cost += v;
    return (static_cast<double>(u.size()) - cost) / static_cast<double>(u.size());
}

struct SyntheticSpec {
    std::size_t n_per_class = 40;
    double noise_std = 0.1;
    std::uint64_t seed = 0;
    std::array<UtilizationTemplate, kSynthClasses> ideal_utilization = synthetic_ideal_utilization();
};

struct SyntheticData {
    Dataset dataset;
    std::array<UtilizationTemplate, kSynthClasses> ideal_utilization;
};

namespace detail {

inline constexpr double kPulseAmp = 1.0;
inline constexpr double kPeakAmp = 1.5;
inline constexpr double kPeakWidth = 2.5;

inline void add_pulse(std::vector<double>& x, std::size_t ch, std::size_t slice, double amp) {
    const std::size_t base = slice * 24;
    for (std::size_t t = base + 6; t < base + 18; ++t) x[ch * kSynthLength + t] += amp;
}

inline void add_peak(std::vector<double>& x, std::size_t ch, std::size_t slice, double amp) {
    const std::size_t base = slice * 24;
    const double centre = static_cast<double>(base) + 12.0;
    for (std::size_t t = base; t < base + 24; ++t) {
        const double z = (static_cast<double>(t) - centre) / kPeakWidth;
        x[ch * kSynthLength + t] += amp * std::exp(-0.5 * z * z);
    }
}

/// Noise-free prototype of one class.
inline std::vector<double> synthetic_prototype(std::size_t cls) {
    std::vector<double> x(kSynthChannels * kSynthLength, 0.0);
    // slice-0 codes on ch0, ch1 and (weaker) ch2
    static constexpr int ch0[8] = {+1, -1, +1, +1, -1, -1, -1, -1};
    static constexpr int ch1[8] = {+1, +1, -1, -1, -1, -1, -1, -1};
    static constexpr int ch2[8] = {+1, -1, -1, -1, +1, +1, +1, +1};
    add_pulse(x, 0, 0, kPulseAmp * ch0[cls]);
    add_pulse(x, 1, 0, kPulseAmp * ch1[cls]);
    add_pulse(x, 2, 0, 0.5 * kPulseAmp * ch2[cls]);
    switch (cls) {
    case 2: add_peak(x, 3, 3, +kPeakAmp); break;
    case 3: add_peak(x, 3, 3, -kPeakAmp); break;
    case 4:
    case 5:
        add_pulse(x, 0, 1, +kPulseAmp);
        add_peak(x, 3, 3, +kPeakAmp);
        add_peak(x, 2, 3, cls == 4 ? +kPeakAmp : -kPeakAmp);
        break;
    case 6:
    case 7:
        add_pulse(x, 0, 1, -kPulseAmp);
        add_peak(x, 3, 3, +kPeakAmp);
        add_peak(x, 2, 3, +kPeakAmp);
        add_peak(x, 1, 3, +kPeakAmp);
        add_peak(x, 0, 3, cls == 6 ? +kPeakAmp : -kPeakAmp);
        break;
    default: break;
    }
    return x;
}

} // namespace detail

/// `split` names an independent noise stream, e.g. "train" or "test".
inline SyntheticData generate_synthetic(const SyntheticSpec& spec, const std::string& split = "train") {
    SyntheticData out;
    out.ideal_utilization = spec.ideal_utilization;
    auto& d = out.dataset;
    d.name = "synthetic";
    d.n_channels = kSynthChannels;
    d.length = kSynthLength;
    d.channel_names = default_channel_names(kSynthChannels);
    for (std::size_t k = 0; k < kSynthClasses; ++k) d.class_names.push_back(std::to_string(k + 1));
    RngStream rng = RngStream(spec.seed).derive("synthetic-" + split);
    std::array<std::vector<double>, kSynthClasses> protos;
    for (std::size_t k = 0; k < kSynthClasses; ++k) protos[k] = detail::synthetic_prototype(k);
    for (std::size_t i = 0; i < spec.n_per_class; ++i)
        for (std::size_t k = 0; k < kSynthClasses; ++k) {
            auto x = protos[k];
            if (spec.noise_std > 0.0)
                for (auto& v : x) v += spec.noise_std * rng.normal();
            d.push_back(x, k);
        }
    return out;
}

/// {class -> {ideal_utilization, ideal_savings}} keyed by class name.
inline nlohmann::json ideal_table_json(const SyntheticData& s) {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t k = 0; k < kSynthClasses; ++k) {
        const auto& u = s.ideal_utilization[k];
        j[s.dataset.class_names[k]] = {{"ideal_utilization", std::vector<double>(u.begin(), u.end())},
                                       {"ideal_savings", ideal_savings(u)}};
    }
    return j;
}

} // namespace charlee
