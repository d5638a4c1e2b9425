#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "eegattn/binio.hpp"
#include "eegattn/dsp.hpp"
#include "eegattn/rng.hpp"

namespace eegattn {

// ---------------------------------------------------------------------------
// "EEGT" trial container
// ---------------------------------------------------------------------------
// magic "EEGT", version u16, n_trials u32, n_channels u16, n_samples u32,
// fs f32, n_classes u16, channel-name table (u16 count, length-prefixed
// strings), labels u16[n_trials], payload f32 little-endian trial-major.

inline constexpr char kTrialMagic[4] = {'E', 'E', 'G', 'T'};
inline constexpr std::uint16_t kTrialVersion = 1;

inline void write_trialset(const TrialSet& t, const std::string& path) {
    t.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw binio::FormatError("cannot open for writing: " + path);
    binio::write_magic(os, kTrialMagic);
    binio::write_le<std::uint16_t>(os, kTrialVersion);
    binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.n_trials));
    binio::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(t.n_channels));
    binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.n_samples));
    binio::write_le<float>(os, static_cast<float>(t.sampling_rate));
    binio::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(t.n_classes));
    binio::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(t.channel_names.size()));
    for (const auto& name : t.channel_names) binio::write_string(os, name);
    for (int l : t.labels) binio::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(l));
    for (double v : t.data) binio::write_le<float>(os, static_cast<float>(v));
    if (!os) throw binio::FormatError("write failed: " + path);
}

inline TrialSet read_trialset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw binio::FormatError("cannot open: " + path);
    binio::expect_magic(is, kTrialMagic);
    const auto version = binio::read_le<std::uint16_t>(is, "version");
    if (version != kTrialVersion)
        throw binio::FormatError("unsupported EEGT version " + std::to_string(version));
    TrialSet t;
    t.n_trials = binio::read_le<std::uint32_t>(is, "n_trials");
    t.n_channels = binio::read_le<std::uint16_t>(is, "n_channels");
    t.n_samples = binio::read_le<std::uint32_t>(is, "n_samples");
    t.sampling_rate = binio::read_le<float>(is, "sampling_rate");
    t.n_classes = binio::read_le<std::uint16_t>(is, "n_classes");
    const auto n_names = binio::read_le<std::uint16_t>(is, "channel-name count");
    if (n_names != t.n_channels)
        throw binio::FormatError("channel-name table size disagrees with n_channels");
    for (std::size_t i = 0; i < n_names; ++i)
        t.channel_names.push_back(binio::read_string(is));
    t.labels.resize(t.n_trials);
    for (auto& l : t.labels)
        l = binio::read_le<std::uint16_t>(is, "label");
    const std::size_t n = t.n_trials * t.n_channels * t.n_samples;
    t.data.resize(n);
    for (auto& v : t.data)
        v = binio::read_le<float>(is, "sample payload");
    // self-describing check: the payload must end exactly here
    char extra;
    is.read(&extra, 1);
    if (!is.eof())
        throw binio::FormatError("payload longer than declared dimensions");
    t.validate();
    return t;
}

// ---------------------------------------------------------------------------
// "EEGR" continuous-recording container (same family as EEGT)
// ---------------------------------------------------------------------------

inline constexpr char kRawMagic[4] = {'E', 'E', 'G', 'R'};
inline constexpr std::uint16_t kRawVersion = 1;

inline void write_raw(const RawRecording& r, const std::string& path) {
    r.validate();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw binio::FormatError("cannot open for writing: " + path);
    binio::write_magic(os, kRawMagic);
    binio::write_le<std::uint16_t>(os, kRawVersion);
    binio::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(r.n_channels()));
    binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(r.n_samples()));
    binio::write_le<float>(os, static_cast<float>(r.sampling_rate));
    for (const auto& name : r.channel_names) binio::write_string(os, name);
    binio::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(r.markers.size()));
    for (const auto& [idx, label] : r.markers) {
        binio::write_le<std::uint64_t>(os, idx);
        binio::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(label));
    }
    for (const auto& ch : r.data)
        for (double v : ch) binio::write_le<float>(os, static_cast<float>(v));
    if (!os) throw binio::FormatError("write failed: " + path);
}

inline RawRecording read_raw(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw binio::FormatError("cannot open: " + path);
    binio::expect_magic(is, kRawMagic);
    const auto version = binio::read_le<std::uint16_t>(is, "version");
    if (version != kRawVersion)
        throw binio::FormatError("unsupported EEGR version " + std::to_string(version));
    RawRecording r;
    const auto n_ch = binio::read_le<std::uint16_t>(is, "n_channels");
    const auto n_s = binio::read_le<std::uint32_t>(is, "n_samples");
    r.sampling_rate = binio::read_le<float>(is, "sampling_rate");
    for (std::size_t i = 0; i < n_ch; ++i)
        r.channel_names.push_back(binio::read_string(is));
    const auto n_m = binio::read_le<std::uint32_t>(is, "marker count");
    for (std::size_t i = 0; i < n_m; ++i) {
        const auto idx = binio::read_le<std::uint64_t>(is, "marker index");
        const auto label = binio::read_le<std::uint16_t>(is, "marker label");
        r.markers.emplace_back(static_cast<std::size_t>(idx), label);
    }
    for (std::size_t c = 0; c < n_ch; ++c) {
        std::vector<double> ch(n_s);
        for (auto& v : ch) v = binio::read_le<float>(is, "sample payload");
        r.data.push_back(std::move(ch));
    }
    r.validate();
    return r;
}

// ---------------------------------------------------------------------------
// Synthetic 13-class generator
// ---------------------------------------------------------------------------

struct SynthSpec {
    std::size_t n_classes = 13;
    std::size_t trials_per_class = 23;  // 13*23 = 299, close to the target 300
    std::size_t n_channels = 10;
    std::size_t n_samples = 500;
    double fs = 250.0;
    double snr_db = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_classes < 2 || trials_per_class == 0 || n_channels == 0 ||
            n_samples == 0 || fs <= 0.0)
            throw DspError("SynthSpec: all counts must be positive, n_classes >= 2");
    }
    std::size_t n_trials() const { return n_classes * trials_per_class; }
    // Every non-resting class carries a gamma burst at this frequency.
    double class_freq(std::size_t k) const { return 35.0 + 6.0 * double(k); }
    // The last class is the burst-free resting state.
    std::size_t resting_class() const { return n_classes - 1; }
};

namespace synth_detail {

// Paul Kellet's economy pink-noise filter over white gaussian input.
class PinkNoise {
public:
    explicit PinkNoise(Rng& rng) : rng_(rng) {}
    double next() {
        const double w = rng_.gaussian();
        b0_ = 0.99886 * b0_ + w * 0.0555179;
        b1_ = 0.99332 * b1_ + w * 0.0750759;
        b2_ = 0.96900 * b2_ + w * 0.1538520;
        b3_ = 0.86650 * b3_ + w * 0.3104856;
        b4_ = 0.55000 * b4_ + w * 0.5329522;
        b5_ = -0.7616 * b5_ - w * 0.0168980;
        const double pink = b0_ + b1_ + b2_ + b3_ + b4_ + b5_ + b6_ + w * 0.5362;
        b6_ = w * 0.115926;
        return pink * 0.11;  // roughly unit variance
    }

private:
    Rng& rng_;
    double b0_ = 0, b1_ = 0, b2_ = 0, b3_ = 0, b4_ = 0, b5_ = 0, b6_ = 0;
};

// Per-class spatial mixing weights in [0.2, 1], deterministic in (seed, class).
inline std::vector<double> class_spatial_weights(const SynthSpec& spec,
                                                 std::size_t k) {
    Rng rng(spec.seed * 1000003ULL + 7919ULL * (k + 1));
    std::vector<double> w(spec.n_channels);
    for (double& v : w) v = rng.uniform(0.2, 1.0);
    return w;
}

}  // namespace synth_detail

inline std::vector<std::string> default_channel_names(std::size_t n) {
    const auto& bw = broca_wernicke_channels();
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i)
        names.push_back(i < bw.size() ? bw[i] : "CH" + std::to_string(i + 1));
    return names;
}

// Pink-noise background plus a class-specific Hann-windowed gamma burst in
// the middle half of each trial. Burst amplitude is background RMS scaled by
// 10^(snr_db/20) and the class spatial weight. Deterministic in seed.
inline TrialSet generate_synthetic(const SynthSpec& spec) {
    spec.validate();
    TrialSet t;
    t.n_trials = spec.n_trials();
    t.n_channels = spec.n_channels;
    t.n_samples = spec.n_samples;
    t.sampling_rate = spec.fs;
    t.n_classes = static_cast<int>(spec.n_classes);
    t.channel_names = default_channel_names(spec.n_channels);
    t.data.resize(t.n_trials * t.n_channels * t.n_samples);
    t.labels.resize(t.n_trials);

    Rng rng(spec.seed);
    const double amp_scale = std::pow(10.0, spec.snr_db / 20.0);
    const std::size_t burst_start = spec.n_samples / 4;
    const std::size_t burst_len = spec.n_samples / 2;

    std::size_t trial = 0;
    for (std::size_t k = 0; k < spec.n_classes; ++k) {
        const auto weights = synth_detail::class_spatial_weights(spec, k);
        const double freq = spec.class_freq(k);
        for (std::size_t r = 0; r < spec.trials_per_class; ++r, ++trial) {
            t.labels[trial] = static_cast<int>(k);
            const double phase = rng.uniform(0.0, 2.0 * M_PI);
            for (std::size_t c = 0; c < spec.n_channels; ++c) {
                synth_detail::PinkNoise pink(rng);
                double* dst = &t.at(trial, c, 0);
                double energy = 0.0;
                for (std::size_t s = 0; s < spec.n_samples; ++s) {
                    dst[s] = pink.next();
                    energy += dst[s] * dst[s];
                }
                if (k == spec.resting_class()) continue;
                const double bg_rms =
                    std::sqrt(energy / static_cast<double>(spec.n_samples));
                const double amp = bg_rms * amp_scale * weights[c];
                for (std::size_t s = 0; s < burst_len; ++s) {
                    const double hann =
                        0.5 * (1.0 - std::cos(2.0 * M_PI * double(s) /
                                              double(burst_len - 1)));
                    const double ts = double(burst_start + s) / spec.fs;
                    dst[burst_start + s] +=
                        amp * hann * std::sin(2.0 * M_PI * freq * ts + phase);
                }
            }
        }
    }
    t.validate();
    return t;
}

// Continuous recording with markers, for exercising the preprocessing path:
// the same pink-noise + burst construction laid out on a timeline with one
// marker per trial, spaced gap_s apart.
inline RawRecording generate_synthetic_raw(const SynthSpec& spec,
                                           double duration_s, double gap_s = 3.0) {
    spec.validate();
    const auto n_total = static_cast<std::size_t>(std::lround(duration_s * spec.fs));
    const auto gap = static_cast<std::size_t>(std::lround(gap_s * spec.fs));
    if (gap == 0 || n_total == 0)
        throw DspError("generate_synthetic_raw: empty timeline");
    RawRecording rec;
    rec.sampling_rate = spec.fs;
    rec.channel_names = default_channel_names(spec.n_channels);
    Rng rng(spec.seed);
    for (std::size_t c = 0; c < spec.n_channels; ++c) {
        synth_detail::PinkNoise pink(rng);
        std::vector<double> ch(n_total);
        for (double& v : ch) v = pink.next();
        rec.data.push_back(std::move(ch));
    }
    const double amp_scale = std::pow(10.0, spec.snr_db / 20.0);
    const std::size_t trial_len = spec.n_samples;
    std::size_t cls = 0;
    // first marker leaves room for the baseline window
    for (std::size_t start = gap; start + trial_len <= n_total; start += gap) {
        rec.markers.emplace_back(start, static_cast<int>(cls));
        if (cls != spec.resting_class()) {
            const auto weights = synth_detail::class_spatial_weights(spec, cls);
            const double freq = spec.class_freq(cls);
            const double phase = rng.uniform(0.0, 2.0 * M_PI);
            const std::size_t burst_start = start + trial_len / 4;
            const std::size_t burst_len = trial_len / 2;
            for (std::size_t c = 0; c < spec.n_channels; ++c) {
                const double amp = amp_scale * weights[c];
                for (std::size_t s = 0; s < burst_len; ++s) {
                    const double hann =
                        0.5 * (1.0 - std::cos(2.0 * M_PI * double(s) /
                                              double(burst_len - 1)));
                    const double ts = double(burst_start + s) / spec.fs;
                    rec.data[c][burst_start + s] +=
                        amp * hann * std::sin(2.0 * M_PI * freq * ts + phase);
                }
            }
        }
        cls = (cls + 1) % spec.n_classes;
    }
    rec.validate();
    return rec;
}

}  // namespace eegattn
