#include <chrono>
#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "eegattn/dataio.hpp"
#include "eegattn/dsp.hpp"
#include "eegattn/gradcheck.hpp"
#include "eegattn/nn.hpp"
#include "eegattn/report.hpp"
#include "eegattn/stats.hpp"
#include "eegattn/training.hpp"

namespace {

using namespace eegattn;

// exit-code taxonomy: config=2, data=3, numeric=4
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::uint64_t default_seed() {
    if (const char* env = std::getenv("EEGATTN_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw ConfigError("EEGATTN_SEED is not an unsigned integer: " +
                              std::string(env));
        }
    }
    return 0;
}

struct SynthArgs {
    SynthSpec spec;
    std::string out;
    bool raw = false;
    double duration_s = 120.0;
    double gap_s = 3.0;
};

int cmd_synth(const SynthArgs& a) {
    if (a.spec.n_classes < 2 || a.spec.trials_per_class == 0 ||
        a.spec.n_channels == 0 || a.spec.n_samples == 0 || a.spec.fs <= 0.0)
        throw ConfigError("synth: counts must be positive and --classes >= 2");
    if (a.raw) {
        RawRecording rec = generate_synthetic_raw(a.spec, a.duration_s, a.gap_s);
        write_raw(rec, a.out);
        std::cout << "wrote " << a.out << ": " << rec.n_channels() << " ch x "
                  << rec.n_samples() << " samples @ " << rec.sampling_rate
                  << " Hz, " << rec.markers.size() << " markers\n";
    } else {
        TrialSet t = generate_synthetic(a.spec);
        write_trialset(t, a.out);
        std::cout << "wrote " << a.out << ": " << t.n_trials << " trials x "
                  << t.n_channels << " ch x " << t.n_samples << " samples @ "
                  << t.sampling_rate << " Hz, " << t.n_classes << " classes\n";
    }
    return 0;
}

struct PreprocessArgs {
    std::string in, out;
    std::size_t order = 5;
    double low_hz = 30.0, high_hz = 120.0;
    double target_fs = 250.0;
    double pre_s = 0.5, dur_s = 2.0;
    int n_classes = 13;
    std::vector<std::string> channels;
    bool no_filter = false;
};

int cmd_preprocess(const PreprocessArgs& a) {
    RawRecording rec = read_raw(a.in);
    std::cout << "raw:       " << rec.n_channels() << " ch x " << rec.n_samples()
              << " @ " << rec.sampling_rate << " Hz, " << rec.markers.size()
              << " markers\n";
    if (rec.sampling_rate != a.target_fs) {
        rec = downsample(rec, a.target_fs);
        std::cout << "resampled: " << rec.n_channels() << " ch x "
                  << rec.n_samples() << " @ " << rec.sampling_rate << " Hz\n";
    }
    if (!a.no_filter) {
        const SosFilter f =
            design_butterworth_bandpass(a.order, a.low_hz, a.high_hz, rec.sampling_rate);
        rec = filter_recording(rec, f);
        std::cout << "filtered:  " << a.low_hz << "-" << a.high_hz
                  << " Hz band-pass, order " << a.order << " ("
                  << f.sections.size() << " sections)\n";
    }
    EpochReport ep = epoch_trials(rec, a.pre_s, a.dur_s, a.n_classes);
    std::cout << "epoched:   " << ep.trials.n_trials << " trials x "
              << ep.trials.n_channels << " ch x " << ep.trials.n_samples
              << " samples";
    if (!ep.rejected.empty()) {
        std::cout << " (" << ep.rejected.size() << " rejected:";
        for (const auto& [idx, label] : ep.rejected)
            std::cout << " marker@" << idx;
        std::cout << ")";
    }
    std::cout << "\n";
    TrialSet trials = std::move(ep.trials);
    std::vector<std::string> want = a.channels;
    if (want.empty()) {
        // default montage subset when all of its channels exist
        bool all_present = true;
        for (const auto& name : broca_wernicke_channels())
            if (std::find(trials.channel_names.begin(), trials.channel_names.end(),
                          name) == trials.channel_names.end())
                all_present = false;
        if (all_present) want = broca_wernicke_channels();
    }
    if (!want.empty()) {
        trials = select_channels(trials, want);
        std::cout << "channels:  " << trials.n_channels << " selected\n";
    }
    write_trialset(trials, a.out);
    std::cout << "wrote " << a.out << "\n";
    return 0;
}

struct TrainArgs {
    std::string data, out, config_path, weights_out, confusion_csv;
    TrainConfig tcfg;
    std::size_t parallel_folds = 1;
    std::size_t temporal_kernel = 0;  // 0 = fs/2
};

int cmd_train(const TrainArgs& a) {
    ModelConfig mcfg;
    mcfg.temporal_kernel_len = 0;  // sentinel: auto unless configured
    TrainConfig tcfg = a.tcfg;
    if (!a.config_path.empty()) load_run_config(a.config_path, mcfg, tcfg);
    // flag overrides beat the config file
    if (a.tcfg.epochs != TrainConfig{}.epochs) tcfg.epochs = a.tcfg.epochs;
    if (a.tcfg.batch_size != TrainConfig{}.batch_size) tcfg.batch_size = a.tcfg.batch_size;
    if (a.tcfg.learning_rate != TrainConfig{}.learning_rate)
        tcfg.learning_rate = a.tcfg.learning_rate;
    if (a.tcfg.folds != TrainConfig{}.folds) tcfg.folds = a.tcfg.folds;
    if (a.tcfg.seed != TrainConfig{}.seed) tcfg.seed = a.tcfg.seed;
    if (a.temporal_kernel > 0) mcfg.temporal_kernel_len = a.temporal_kernel;

    TrialSet data = read_trialset(a.data);
    mcfg.n_channels = data.n_channels;
    mcfg.n_samples = data.n_samples;
    mcfg.n_classes = static_cast<std::size_t>(data.n_classes);
    mcfg.sampling_rate = data.sampling_rate;
    if (mcfg.temporal_kernel_len == 0)
        mcfg.temporal_kernel_len = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::lround(mcfg.sampling_rate / 2.0)));
    mcfg.validate();
    tcfg.validate();

    const auto t0 = std::chrono::steady_clock::now();
    CvSummary cv = cross_validate(data, mcfg, tcfg, a.parallel_folds);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& f : cv.folds)
        std::cout << "fold " << f.fold_index << ": accuracy " << f.test_accuracy
                  << "\n";
    std::cout << "mean accuracy " << cv.mean_accuracy << " +- " << cv.std_accuracy
              << " (chance " << 1.0 / double(mcfg.n_classes) << ")\n";
    if (!a.out.empty())
        save_json(results_to_json(mcfg, tcfg, cv, a.data, secs), a.out);
    if (!a.confusion_csv.empty())
        for (const auto& f : cv.folds)
            confusion_to_csv(f, a.confusion_csv + ".fold" +
                                    std::to_string(f.fold_index) + ".csv");
    if (!a.weights_out.empty()) {
        // final model on the full dataset, for use with `eval`
        Rng rng(tcfg.seed * 0x2545f4914f6cdd1dULL + 0xabcdULL);
        ModelParams params = init_params(mcfg, rng);
        train_one_fold(mcfg, params, data, tcfg);
        save_weights(a.weights_out, mcfg, params);
        std::cout << "wrote weights " << a.weights_out << "\n";
    }
    return 0;
}

struct EvalArgs {
    std::string weights, data, out;
};

int cmd_eval(const EvalArgs& a) {
    auto [mcfg, params] = load_weights(a.weights);
    TrialSet data = read_trialset(a.data);
    FoldReport rep = evaluate(params, mcfg, data);
    std::cout << "accuracy " << rep.test_accuracy << " over " << data.n_trials
              << " trials\n";
    if (!a.out.empty()) {
        json doc{{"schema", "eegattn-eval-v1"},
                 {"config", {{"model", model_config_to_json(mcfg)}}},
                 {"data", a.data},
                 {"accuracy", rep.test_accuracy},
                 {"confusion", rep.confusion}};
        save_json(doc, a.out);
    }
    return 0;
}

struct StatsArgs {
    std::string a_path, b_path, out;
    std::size_t n_perm = 10000;
    std::uint64_t seed = 0;
};

int cmd_stats(const StatsArgs& a) {
    const json da = load_json(a.a_path), db = load_json(a.b_path);
    const auto acc_a = accuracies_from_results(da);
    const auto acc_b = accuracies_from_results(db);
    ComparisonSummary s = compare_conditions(acc_a, acc_b, a.n_perm, a.seed);
    std::cout << "condition            mean accuracy\n"
              << "a (" << a.a_path << ")  " << s.mean_a << "\n"
              << "b (" << a.b_path << ")  " << s.mean_b << "\n"
              << "difference           " << s.difference << "\n"
              << "kruskal-wallis       H=" << s.kruskal.h << "  p=" << s.kruskal.p
              << "\n"
              << "paired permutation   t=" << s.permutation.t_obs
              << "  p=" << s.permutation.p
              << (s.permutation.degenerate ? "  (degenerate)" : "") << "\n";
    if (!a.out.empty()) {
        json doc{{"schema", "eegattn-comparison-v1"},
                 {"a", {{"path", a.a_path}, {"accuracies", acc_a}, {"mean", s.mean_a}}},
                 {"b", {{"path", a.b_path}, {"accuracies", acc_b}, {"mean", s.mean_b}}},
                 {"difference", s.difference},
                 {"kruskal_wallis", {{"h", s.kruskal.h}, {"p", s.kruskal.p}}},
                 {"permutation",
                  {{"t", s.permutation.t_obs},
                   {"p", s.permutation.p},
                   {"n_perm", a.n_perm},
                   {"seed", a.seed},
                   {"degenerate", s.permutation.degenerate}}}};
        save_json(doc, a.out);
    }
    return 0;
}

int cmd_gradcheck(std::size_t n_seeds, double tol) {
    const auto reports = run_gradcheck_suite(n_seeds, 1e-5, tol);
    bool all_pass = true;
    for (const auto& r : reports) {
        std::cout << (r.passed ? "pass " : "FAIL ") << r.op_name
                  << "  max_rel_error=" << r.max_rel_error << "\n";
        all_pass = all_pass && r.passed;
    }
    if (!all_pass) throw NumericError("gradient check failed");
    std::cout << reports.size() << " ops checked, all within tol " << tol << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Imagined-speech EEG decoding pipeline"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* sc_synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    sc_synth->add_option("--out", synth.out, "Output file (.eegt, or .eegr with --raw)")
        ->required();
    sc_synth->add_option("--seed", synth.spec.seed, "RNG seed");
    sc_synth->add_option("--classes", synth.spec.n_classes, "Number of classes");
    sc_synth->add_option("--trials-per-class", synth.spec.trials_per_class,
                         "Trials per class");
    sc_synth->add_option("--channels", synth.spec.n_channels, "Channel count");
    sc_synth->add_option("--samples", synth.spec.n_samples, "Samples per trial");
    sc_synth->add_option("--fs", synth.spec.fs, "Sampling rate (Hz)");
    sc_synth->add_option("--snr-db", synth.spec.snr_db, "Burst SNR in dB");
    sc_synth->add_flag("--raw", synth.raw, "Emit a continuous recording with markers");
    sc_synth->add_option("--duration-s", synth.duration_s, "Raw recording length (s)");
    sc_synth->add_option("--gap-s", synth.gap_s, "Raw marker spacing (s)");

    PreprocessArgs pre;
    auto* sc_pre = app.add_subcommand("preprocess", "Raw recording -> trial set");
    sc_pre->add_option("--in", pre.in, "Input .eegr")->required();
    sc_pre->add_option("--out", pre.out, "Output .eegt")->required();
    sc_pre->add_option("--order", pre.order, "Butterworth prototype order");
    sc_pre->add_option("--low-hz", pre.low_hz, "Band-pass low cutoff");
    sc_pre->add_option("--high-hz", pre.high_hz, "Band-pass high cutoff");
    sc_pre->add_option("--target-fs", pre.target_fs, "Resample target (Hz)");
    sc_pre->add_option("--pre-s", pre.pre_s, "Baseline window before marker (s)");
    sc_pre->add_option("--dur-s", pre.dur_s, "Trial length after marker (s)");
    sc_pre->add_option("--classes", pre.n_classes, "Label count in the markers");
    sc_pre->add_option("--channel", pre.channels, "Channel to keep, in order (repeatable)");
    sc_pre->add_flag("--no-filter", pre.no_filter, "Skip the band-pass (ablation)");

    TrainArgs train;
    train.tcfg.seed = 0;
    auto* sc_train = app.add_subcommand("train", "Cross-validated training");
    sc_train->add_option("--data", train.data, "Input .eegt")->required();
    sc_train->add_option("--out", train.out, "Results JSON path");
    sc_train->add_option("--config", train.config_path, "Run-config JSON file");
    sc_train->add_option("--epochs", train.tcfg.epochs, "Training epochs");
    sc_train->add_option("--batch-size", train.tcfg.batch_size, "Mini-batch size");
    sc_train->add_option("--lr", train.tcfg.learning_rate, "Learning rate");
    sc_train->add_option("--folds", train.tcfg.folds, "CV folds");
    sc_train->add_option("--seed", train.tcfg.seed, "RNG seed");
    sc_train->add_option("--parallel-folds", train.parallel_folds,
                         "Folds trained concurrently");
    sc_train->add_option("--temporal-kernel", train.temporal_kernel,
                         "Temporal kernel length (0 = fs/2)");
    sc_train->add_option("--weights-out", train.weights_out,
                         "Also train on all data and save weights (.eatw)");
    sc_train->add_option("--confusion-csv", train.confusion_csv,
                         "Per-fold confusion CSV path prefix");

    EvalArgs eval;
    auto* sc_eval = app.add_subcommand("eval", "Evaluate saved weights on a trial set");
    sc_eval->add_option("--weights", eval.weights, "Weights .eatw")->required();
    sc_eval->add_option("--data", eval.data, "Input .eegt")->required();
    sc_eval->add_option("--out", eval.out, "Report JSON path");

    StatsArgs stats;
    auto* sc_stats = app.add_subcommand("stats", "Compare two results documents");
    sc_stats->add_option("--a", stats.a_path, "Results JSON for condition A")->required();
    sc_stats->add_option("--b", stats.b_path, "Results JSON for condition B")->required();
    sc_stats->add_option("--out", stats.out, "Comparison JSON path");
    sc_stats->add_option("--n-perm", stats.n_perm, "Permutation count");
    sc_stats->add_option("--seed", stats.seed, "Permutation RNG seed");

    std::size_t gc_seeds = 20;
    double gc_tol = 1e-4;
    auto* sc_gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    sc_gc->add_option("--seeds", gc_seeds, "Random shape seeds per op");
    sc_gc->add_option("--tol", gc_tol, "Relative-error tolerance");

    std::string desc_config;
    ModelConfig desc_cfg;
    auto* sc_desc = app.add_subcommand("describe", "Print layer shapes and parameter count");
    sc_desc->add_option("--config", desc_config, "Run-config JSON file");

    try {
        app.parse(argc, argv);
        const std::uint64_t env_seed = default_seed();
        if (*sc_synth) {
            if (!sc_synth->count("--seed")) synth.spec.seed = env_seed;
            return cmd_synth(synth);
        }
        if (*sc_pre) return cmd_preprocess(pre);
        if (*sc_train) {
            if (!sc_train->count("--seed")) train.tcfg.seed = env_seed;
            return cmd_train(train);
        }
        if (*sc_eval) return cmd_eval(eval);
        if (*sc_stats) {
            if (!sc_stats->count("--seed")) stats.seed = env_seed;
            return cmd_stats(stats);
        }
        if (*sc_gc) return cmd_gradcheck(gc_seeds, gc_tol);
        if (*sc_desc) {
            TrainConfig unused;
            if (!desc_config.empty()) load_run_config(desc_config, desc_cfg, unused);
            std::cout << describe(desc_cfg);
            return 0;
        }
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const binio::FormatError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const DspError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const StatsError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const TensorError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
