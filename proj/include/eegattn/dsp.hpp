#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace eegattn {

class DspError : public std::runtime_error {
public:
    explicit DspError(const std::string& msg) : std::runtime_error(msg) {}
};

// One biquad: b0 + b1 z^-1 + b2 z^-2 over 1 + a1 z^-1 + a2 z^-2.
struct Sos {
    double b0, b1, b2;
    double a1, a2;
};

struct SosFilter {
    std::vector<Sos> sections;
    // design metadata
    std::size_t order = 0;
    double low_hz = 0.0, high_hz = 0.0, fs = 0.0;

    // Complex frequency response at frequency f (Hz) on the unit circle.
    std::complex<double> response(double f) const {
        const std::complex<double> z = std::polar(1.0, -2.0 * M_PI * f / fs);
        std::complex<double> h = 1.0;
        for (const Sos& s : sections) {
            h *= (s.b0 + s.b1 * z + s.b2 * z * z) /
                 (1.0 + s.a1 * z + s.a2 * z * z);
        }
        return h;
    }
    double gain(double f) const { return std::abs(response(f)); }

    std::vector<std::complex<double>> poles() const {
        std::vector<std::complex<double>> out;
        for (const Sos& s : sections) {
            const std::complex<double> disc =
                std::sqrt(std::complex<double>(s.a1 * s.a1 - 4.0 * s.a2, 0.0));
            out.push_back((-s.a1 + disc) / 2.0);
            out.push_back((-s.a1 - disc) / 2.0);
        }
        return out;
    }
    bool stable() const {
        for (const auto& p : poles())
            if (std::abs(p) >= 1.0) return false;
        return true;
    }
};

namespace dsp_detail {

using cd = std::complex<double>;

// Left-half-plane poles of the order-n analog Butterworth lowpass prototype.
inline std::vector<cd> butter_prototype(std::size_t n) {
    std::vector<cd> poles;
    for (std::size_t k = 1; k <= n; ++k) {
        const double theta =
            M_PI * (2.0 * static_cast<double>(k) + static_cast<double>(n) - 1.0) /
            (2.0 * static_cast<double>(n));
        poles.push_back(std::polar(1.0, theta));
    }
    return poles;
}

inline cd bilinear(cd s, double fs2) { return (fs2 + s) / (fs2 - s); }

// Groups poles into conjugate (or real) pairs for SOS packing.
inline std::vector<std::pair<cd, cd>> pair_poles(std::vector<cd> poles) {
    std::vector<std::pair<cd, cd>> pairs;
    std::vector<cd> reals, complexes;
    for (const cd& p : poles) {
        if (std::abs(p.imag()) < 1e-10)
            reals.emplace_back(p.real(), 0.0);
        else if (p.imag() > 0.0)
            complexes.push_back(p);
    }
    for (const cd& p : complexes) pairs.emplace_back(p, std::conj(p));
    for (std::size_t i = 0; i + 1 < reals.size(); i += 2)
        pairs.emplace_back(reals[i], reals[i + 1]);
    if (reals.size() % 2 != 0)
        throw DspError("internal: odd number of real poles in pairing");
    return pairs;
}

}  // namespace dsp_detail

// Digital Butterworth band-pass from an order-`order` analog prototype via the
// lowpass-to-bandpass transform and a prewarped bilinear transform. The
// resulting digital filter has 2*order poles. Unit gain at the (prewarped)
// geometric center of the band.
inline SosFilter design_butterworth_bandpass(std::size_t order = 5,
                                             double low_hz = 30.0,
                                             double high_hz = 120.0,
                                             double fs = 250.0) {
    using dsp_detail::cd;
    if (!(0.0 < low_hz && low_hz < high_hz && high_hz < fs / 2.0)) {
        std::ostringstream os;
        os << "design_butterworth_bandpass: need 0 < low (" << low_hz
           << ") < high (" << high_hz << ") < fs/2 (" << fs / 2.0 << ")";
        throw DspError(os.str());
    }
    const double fs2 = 2.0 * fs;
    const double w1 = fs2 * std::tan(M_PI * low_hz / fs);   // prewarped rad/s
    const double w2 = fs2 * std::tan(M_PI * high_hz / fs);
    const double bw = w2 - w1;
    const double w0 = std::sqrt(w1 * w2);

    std::vector<cd> analog_poles;
    for (const cd& p : dsp_detail::butter_prototype(order)) {
        // s_lp -> bandpass: roots of s^2 - (bw*p) s + w0^2 = 0
        const cd bp = bw * p * 0.5;
        const cd disc = std::sqrt(bp * bp - cd(w0 * w0, 0.0));
        analog_poles.push_back(bp + disc);
        analog_poles.push_back(bp - disc);
    }
    std::vector<cd> digital_poles;
    digital_poles.reserve(analog_poles.size());
    for (const cd& p : analog_poles)
        digital_poles.push_back(dsp_detail::bilinear(p, fs2));

    // Band transform yields `order` zeros at s=0 and `order` at infinity;
    // bilinear maps them to z=+1 and z=-1. One of each per section.
    auto pairs = dsp_detail::pair_poles(std::move(digital_poles));
    SosFilter f;
    f.order = order;
    f.low_hz = low_hz;
    f.high_hz = high_hz;
    f.fs = fs;
    for (const auto& [p1, p2] : pairs) {
        Sos s;
        s.b0 = 1.0;
        s.b1 = 0.0;
        s.b2 = -1.0;  // zeros at +1 and -1
        s.a1 = -(p1 + p2).real();
        s.a2 = (p1 * p2).real();
        f.sections.push_back(s);
    }
    // Normalize to unit gain at the digital center frequency.
    const double fc = fs / M_PI * std::atan(w0 / fs2);
    const double g = f.gain(fc);
    if (g <= 0.0) throw DspError("design produced zero center gain");
    const double per_section = std::pow(1.0 / g, 1.0 / double(f.sections.size()));
    for (Sos& s : f.sections) {
        s.b0 *= per_section;
        s.b1 *= per_section;
        s.b2 *= per_section;
    }
    if (!f.stable()) throw DspError("designed band-pass is unstable");
    return f;
}

// Digital Butterworth low-pass, unit DC gain.
inline SosFilter design_butterworth_lowpass(std::size_t order, double cutoff_hz,
                                            double fs) {
    using dsp_detail::cd;
    if (!(0.0 < cutoff_hz && cutoff_hz < fs / 2.0))
        throw DspError("design_butterworth_lowpass: cutoff out of (0, fs/2)");
    const double fs2 = 2.0 * fs;
    const double wc = fs2 * std::tan(M_PI * cutoff_hz / fs);
    std::vector<cd> digital_poles;
    for (const cd& p : dsp_detail::butter_prototype(order))
        digital_poles.push_back(dsp_detail::bilinear(wc * p, fs2));
    auto pairs = dsp_detail::pair_poles(std::move(digital_poles));
    SosFilter f;
    f.order = order;
    f.high_hz = cutoff_hz;
    f.fs = fs;
    for (const auto& [p1, p2] : pairs) {
        Sos s;
        s.b0 = 1.0;
        s.b1 = 2.0;
        s.b2 = 1.0;  // both zeros at z=-1
        s.a1 = -(p1 + p2).real();
        s.a2 = (p1 * p2).real();
        f.sections.push_back(s);
    }
    const double g = f.gain(0.0);
    const double per_section = std::pow(1.0 / g, 1.0 / double(f.sections.size()));
    for (Sos& s : f.sections) {
        s.b0 *= per_section;
        s.b1 *= per_section;
        s.b2 *= per_section;
    }
    if (!f.stable()) throw DspError("designed low-pass is unstable");
    return f;
}

namespace dsp_detail {

// Steady-state (unit step) state for one transposed-DF2 biquad.
inline std::pair<double, double> sos_step_state(const Sos& s) {
    const double k = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    const double z2 = s.b2 - s.a2 * k;
    const double z1 = k - s.b0;
    return {z1, z2};
}

// Single forward pass through the cascade; per-section state initialized to
// the step steady state scaled by that section's first input sample, which
// suppresses start-up transients for signals with a DC offset.
inline void sosfilt(const SosFilter& f, std::vector<double>& x) {
    if (x.empty()) return;
    for (const Sos& s : f.sections) {
        const auto [z1u, z2u] = sos_step_state(s);
        double z1 = z1u * x[0];
        double z2 = z2u * x[0];
        for (double& v : x) {
            const double in = v;
            const double out = s.b0 * in + z1;
            z1 = s.b1 * in - s.a1 * out + z2;
            z2 = s.b2 * in - s.a2 * out;
            v = out;
        }
    }
}

}  // namespace dsp_detail

// Zero-phase filtering: odd-reflection padding, forward pass, reverse, second
// pass, reverse, unpad. Effective magnitude response is |H|^2 with zero phase.
inline std::vector<double> filtfilt(const std::vector<double>& signal,
                                    const SosFilter& f) {
    const std::size_t padlen = 3 * (2 * f.order) + 1;
    if (signal.size() <= 6 * f.sections.size() || signal.size() <= padlen)
        throw DspError("filtfilt: signal of length " +
                       std::to_string(signal.size()) +
                       " too short for filter with " +
                       std::to_string(f.sections.size()) + " sections");
    const std::size_t n = signal.size();
    std::vector<double> padded(n + 2 * padlen);
    // odd reflection: 2*x[0] - x[k]
    for (std::size_t i = 0; i < padlen; ++i)
        padded[i] = 2.0 * signal[0] - signal[padlen - i];
    std::copy(signal.begin(), signal.end(), padded.begin() + padlen);
    for (std::size_t i = 0; i < padlen; ++i)
        padded[padlen + n + i] = 2.0 * signal[n - 1] - signal[n - 2 - i];

    dsp_detail::sosfilt(f, padded);
    std::reverse(padded.begin(), padded.end());
    dsp_detail::sosfilt(f, padded);
    std::reverse(padded.begin(), padded.end());
    return std::vector<double>(padded.begin() + padlen, padded.begin() + padlen + n);
}

// ---------------------------------------------------------------------------
// Recordings and epoching
// ---------------------------------------------------------------------------

struct RawRecording {
    std::vector<std::vector<double>> data;  // [channel][sample], microvolts
    double sampling_rate = 0.0;
    std::vector<std::string> channel_names;
    std::vector<std::pair<std::size_t, int>> markers;  // (sample index, label)

    std::size_t n_channels() const { return data.size(); }
    std::size_t n_samples() const { return data.empty() ? 0 : data[0].size(); }
    void validate() const {
        if (channel_names.size() != data.size())
            throw DspError("RawRecording: channel_names length != channel count");
        std::size_t prev = 0;
        bool first = true;
        for (const auto& [idx, label] : markers) {
            if (!first && idx <= prev)
                throw DspError("RawRecording: marker indices not strictly increasing");
            if (idx >= n_samples())
                throw DspError("RawRecording: marker index out of range");
            prev = idx;
            first = false;
        }
    }
};

// Epoched trials; also the unit the dataio container stores.
struct TrialSet {
    std::vector<double> data;  // [trial][channel][sample], row-major
    std::vector<int> labels;
    std::vector<std::string> channel_names;
    double sampling_rate = 0.0;
    int n_classes = 0;
    std::size_t n_trials = 0, n_channels = 0, n_samples = 0;

    double& at(std::size_t t, std::size_t c, std::size_t s) {
        return data[(t * n_channels + c) * n_samples + s];
    }
    double at(std::size_t t, std::size_t c, std::size_t s) const {
        return data[(t * n_channels + c) * n_samples + s];
    }
    void validate() const {
        if (data.size() != n_trials * n_channels * n_samples)
            throw DspError("TrialSet: data length inconsistent with dims");
        if (labels.size() != n_trials)
            throw DspError("TrialSet: labels length != n_trials");
        if (channel_names.size() != n_channels)
            throw DspError("TrialSet: channel_names length != n_channels");
        for (int l : labels)
            if (l < 0 || l >= n_classes)
                throw DspError("TrialSet: label " + std::to_string(l) +
                               " outside [0, " + std::to_string(n_classes) + ")");
    }
};

// Applies the band-pass to every channel of the continuous recording.
inline RawRecording filter_recording(const RawRecording& rec, const SosFilter& f) {
    RawRecording out = rec;
    for (auto& ch : out.data) ch = filtfilt(ch, f);
    return out;
}

// Anti-alias low-pass then integer decimation; markers rescale by the factor.
inline RawRecording downsample(const RawRecording& rec, double target_fs) {
    rec.validate();
    const double ratio = rec.sampling_rate / target_fs;
    const auto factor = static_cast<std::size_t>(std::lround(ratio));
    if (factor < 1 || std::abs(ratio - double(factor)) > 1e-9)
        throw DspError("downsample: source fs " + std::to_string(rec.sampling_rate) +
                       " is not an integer multiple of target " +
                       std::to_string(target_fs));
    if (factor == 1) return rec;
    const SosFilter aa = design_butterworth_lowpass(8, 0.4 * target_fs, rec.sampling_rate);
    RawRecording out;
    out.sampling_rate = target_fs;
    out.channel_names = rec.channel_names;
    for (const auto& ch : rec.data) {
        const auto filtered = filtfilt(ch, aa);
        std::vector<double> dec;
        dec.reserve(filtered.size() / factor + 1);
        for (std::size_t i = 0; i < filtered.size(); i += factor)
            dec.push_back(filtered[i]);
        out.data.push_back(std::move(dec));
    }
    for (const auto& [idx, label] : rec.markers)
        out.markers.emplace_back(idx / factor, label);
    return out;
}

struct EpochReport {
    TrialSet trials;
    // markers whose window did not fit inside the recording
    std::vector<std::pair<std::size_t, int>> rejected;
};

// Extracts [marker, marker + dur_s) per trial, subtracting the per-channel
// mean of the pre_s segment immediately before the marker.
inline EpochReport epoch_trials(const RawRecording& rec, double pre_s = 0.5,
                                double dur_s = 2.0, int n_classes = 13) {
    rec.validate();
    const auto pre = static_cast<std::size_t>(std::lround(pre_s * rec.sampling_rate));
    const auto dur = static_cast<std::size_t>(std::lround(dur_s * rec.sampling_rate));
    if (dur == 0) throw DspError("epoch_trials: zero-length window");
    EpochReport rep;
    TrialSet& t = rep.trials;
    t.sampling_rate = rec.sampling_rate;
    t.channel_names = rec.channel_names;
    t.n_channels = rec.n_channels();
    t.n_samples = dur;
    t.n_classes = n_classes;
    for (const auto& [idx, label] : rec.markers) {
        if (idx < pre || idx + dur > rec.n_samples()) {
            rep.rejected.emplace_back(idx, label);
            continue;
        }
        for (std::size_t c = 0; c < rec.n_channels(); ++c) {
            double baseline = 0.0;
            if (pre > 0) {
                for (std::size_t s = idx - pre; s < idx; ++s)
                    baseline += rec.data[c][s];
                baseline /= static_cast<double>(pre);
            }
            for (std::size_t s = 0; s < dur; ++s)
                t.data.push_back(rec.data[c][idx + s] - baseline);
        }
        t.labels.push_back(label);
        ++t.n_trials;
    }
    t.validate();
    return rep;
}

inline const std::vector<std::string>& broca_wernicke_channels() {
    static const std::vector<std::string> names{"AF3", "F3", "F5", "FC3", "FC5",
                                               "T7", "C5", "TP7", "CP5", "P5"};
    return names;
}

// Subsets/reorders channels to the requested name order.
inline TrialSet select_channels(const TrialSet& in,
                                const std::vector<std::string>& names) {
    in.validate();
    std::vector<std::size_t> idx;
    std::vector<std::string> missing;
    for (const auto& name : names) {
        auto it = std::find(in.channel_names.begin(), in.channel_names.end(), name);
        if (it == in.channel_names.end())
            missing.push_back(name);
        else
            idx.push_back(static_cast<std::size_t>(it - in.channel_names.begin()));
    }
    if (!missing.empty()) {
        std::string msg = "select_channels: unknown channel name(s):";
        for (const auto& m : missing) msg += " " + m;
        throw DspError(msg);
    }
    TrialSet out;
    out.sampling_rate = in.sampling_rate;
    out.n_classes = in.n_classes;
    out.labels = in.labels;
    out.channel_names = names;
    out.n_trials = in.n_trials;
    out.n_channels = names.size();
    out.n_samples = in.n_samples;
    out.data.resize(out.n_trials * out.n_channels * out.n_samples);
    for (std::size_t t = 0; t < out.n_trials; ++t)
        for (std::size_t c = 0; c < idx.size(); ++c)
            for (std::size_t s = 0; s < out.n_samples; ++s)
                out.at(t, c, s) = in.at(t, idx[c], s);
    return out;
}

}  // namespace eegattn
