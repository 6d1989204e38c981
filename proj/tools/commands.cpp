#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <thread>

#include "macl/adaptation.hpp"
#include "macl/affinity.hpp"
#include "macl/checkpoint.hpp"
#include "macl/config.hpp"
#include "macl/error.hpp"
#include "macl/eval.hpp"
#include "macl/features.hpp"
#include "macl/io.hpp"
#include "macl/rng.hpp"
#include "macl/tasks.hpp"

namespace macl::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

run::RunConfig resolve(const Options& opt) {
    run::RunConfig cfg = opt.config.empty() ? run::RunConfig{} : run::load_config(opt.config);
    if (opt.seed) cfg.seeds = {*opt.seed};
    if (!opt.out.empty()) cfg.out = opt.out;
    if (opt.parallel == 0) throw ConfigError("--parallel must be >= 1");
    return cfg;
}

struct SeedOutput {
    json result;
    std::vector<fs::path> files;
};

class Run {
public:
    Run(std::string command, const run::RunConfig& cfg)
        : root_(cfg.out), manifest_(std::move(command), run::to_json(cfg)), start_(std::chrono::steady_clock::now()) {
        fs::create_directories(root_);
    }

    const fs::path& root() const { return root_; }

    fs::path seed_dir(std::uint64_t seed) const {
        const fs::path dir = root_ / ("seed-" + std::to_string(seed));
        fs::create_directories(dir);
        return dir;
    }

    json& results() { return manifest_.results(); }
    void file(const fs::path& p) { manifest_.add_file(p); }

    void merge(const std::vector<std::uint64_t>& seeds, std::vector<SeedOutput>& outs) {
        auto& per_seed = results()["per_seed"] = json::array();
        for (std::size_t i = 0; i < outs.size(); ++i) {
            json r = std::move(outs[i].result);
            r["seed"] = seeds[i];
            per_seed.push_back(std::move(r));
            for (const auto& f : outs[i].files) file(f);
        }
    }

    void finish() {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        manifest_.write(root_, secs);
    }

private:
    fs::path root_;
    io::Manifest manifest_;
    std::chrono::steady_clock::time_point start_;
};

/// Runs fn(index, seed) for every seed on up to `parallel` threads; outputs
/// come back in seed-list order.
template <typename F>
std::vector<SeedOutput> for_each_seed(const std::vector<std::uint64_t>& seeds, std::size_t parallel, F&& fn) {
    std::vector<SeedOutput> out(seeds.size());
    std::vector<std::exception_ptr> errors(seeds.size());
    std::atomic<std::size_t> next{0};
    const auto worker = [&] {
        for (std::size_t i; (i = next++) < seeds.size();) {
            try {
                out[i] = fn(i, seeds[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t k = std::min(parallel, seeds.size());
    if (k <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < k; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

std::vector<Tensor<double>> source_sets(const tasks::Suite& suite) {
    std::vector<Tensor<double>> out;
    for (std::size_t m = 0; m < suite.tasks.size(); ++m) out.push_back(suite.source_data(m));
    return out;
}

std::vector<std::string> mode_names(const tasks::Suite& suite) {
    std::vector<std::string> out;
    for (const auto& t : suite.tasks) out.push_back(t.name);
    return out;
}

std::size_t pick_target(const tasks::Suite& suite, const std::string& which) {
    if (suite.target_names.empty()) throw ConfigError("the suite has no targets");
    if (which.empty()) return 0;
    for (std::size_t t = 0; t < suite.target_names.size(); ++t)
        if (suite.target_names[t] == which) return t;
    if (!which.empty() && std::all_of(which.begin(), which.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        const std::size_t t = std::stoul(which);
        if (t < suite.target_names.size()) return t;
    }
    std::string names;
    for (const auto& n : suite.target_names) names += " " + n;
    throw ConfigError("unknown target '" + which + "'; available:" + names);
}

template <typename T>
gan::Cgan<T> obtain_model(const run::RunConfig& cfg, const Options& opt, const tasks::Suite& suite,
                          std::uint64_t seed, const fs::path& dir, std::vector<fs::path>& files) {
    const std::size_t sources = suite.tasks.size();
    const auto spec = run::model_spec(cfg, suite.sources.dim(), sources);
    if (!opt.checkpoint.empty()) {
        auto model = gan::load<T>(opt.checkpoint, spec);
        if (model.num_labels() < sources)
            throw ConfigError("checkpoint has " + std::to_string(model.num_labels()) + " labels; the suite has " +
                              std::to_string(sources) + " source modes");
        return model;
    }
    gan::LossCurve curve;
    auto model = gan::pretrain(spec, run::gan_config(cfg, seed), suite.sources.labeled<T>(), &curve);
    const fs::path ckpt = dir / "pretrained.ckpt";
    gan::save(model, ckpt);
    files.push_back(ckpt);
    return model;
}

/// Feature classifier for scoring when the config selects classifier space.
/// Trained once on the source modes and kept next to the seed's other
/// outputs; a classifier.ckpt already in `dir` is reused.
std::optional<eval::FeatureClassifier> obtain_features(const run::RunConfig& cfg,
                                                       const std::vector<Tensor<double>>& sources,
                                                       std::uint64_t seed, const fs::path& dir,
                                                       std::vector<fs::path>& files) {
    if (cfg.eval.features != eval::FeatureSpace::classifier) return std::nullopt;
    const fs::path ckpt = dir / "classifier.ckpt";
    if (fs::exists(ckpt)) return eval::FeatureClassifier::load(ckpt);
    eval::ClassifierConfig ccfg;
    ccfg.steps = cfg.eval.classifier_steps;
    ccfg.seed = seed ^ cfg.eval.seed;
    auto clf = eval::FeatureClassifier::train(sources, ccfg);
    clf.save(ckpt);
    files.push_back(ckpt);
    return clf;
}

const eval::FeatureClassifier* ptr(const std::optional<eval::FeatureClassifier>& c) {
    return c ? &*c : nullptr;
}

json curve_json(const gan::LossCurve& curve) {
    json out = json::array();
    const std::size_t stride = std::max<std::size_t>(1, curve.size() / 100);
    for (std::size_t i = 0; i < curve.size(); i += stride)
        out.push_back({curve[i].step, curve[i].d_loss, curve[i].g_loss});
    return out;
}

fs::path write_curve(const fs::path& path, const gan::LossCurve& curve) {
    io::Csv csv({"step", "d_loss", "g_loss"});
    for (const auto& p : curve) csv.row({std::to_string(p.step), io::fmt(p.d_loss), io::fmt(p.g_loss)});
    csv.save(path);
    return path;
}

fs::path write_retention(const fs::path& path, const std::vector<std::string>& names,
                         std::span<const double> scores) {
    io::Csv csv({"mode", "score"});
    for (std::size_t i = 0; i < scores.size(); ++i) csv.row({names.at(i), io::fmt(scores[i])});
    csv.save(path);
    return path;
}

json retention_json(const eval::RetentionReport& r) {
    json j;
    j["per_mode"] = r.per_mode;
    if (r.target) j["p_target"] = r.p_target;
    if (!r.closest.empty()) j["p_closest"] = r.p_closest;
    j["p_average"] = r.p_average;
    return j;
}

json mix_json(const adapt::EmbeddingMix& mix) {
    json j = json::array();
    for (const auto& [mode, w] : mix.weights) j.push_back({{"mode", mode}, {"weight", w}});
    return j;
}

fs::path write_column(const fs::path& path, const std::vector<std::string>& names, std::span<const double> column) {
    io::Csv csv({"mode", "score"});
    for (std::size_t m = 0; m < column.size(); ++m) csv.row({names.at(m), io::fmt(column[m])});
    csv.save(path);
    return path;
}

void write_summary(Run& run, const std::vector<std::uint64_t>& seeds, const std::vector<SeedOutput>& outs,
                   const std::vector<std::string>& keys) {
    std::vector<std::string> header = {"seed"};
    header.insert(header.end(), keys.begin(), keys.end());
    io::Csv csv(header);
    for (std::size_t i = 0; i < outs.size(); ++i) {
        std::vector<std::string> row = {std::to_string(seeds[i])};
        for (const auto& k : keys) {
            const auto& v = outs[i].result.at(k);
            row.push_back(v.is_number_float() ? io::fmt(v.get<double>()) : v.dump());
        }
        csv.row(std::move(row));
    }
    const fs::path p = run.root() / "summary.csv";
    csv.save(p);
    run.file(p);
}

template <typename T>
int pretrain_impl(const Options& opt) {
    const auto cfg = resolve(opt);
    Run run("pretrain", cfg);
    auto outs = for_each_seed(cfg.seeds, opt.parallel, [&](std::size_t, std::uint64_t seed) {
        SeedOutput so;
        const auto suite = run::build_suite(cfg, seed);
        const fs::path dir = run.seed_dir(seed);
        const auto spec = run::model_spec(cfg, suite.sources.dim(), suite.tasks.size());
        gan::LossCurve curve;
        const auto model = gan::pretrain(spec, run::gan_config(cfg, seed), suite.sources.labeled<T>(), &curve);
        gan::save(model, dir / "pretrained.ckpt");
        so.files.push_back(dir / "pretrained.ckpt");
        so.files.push_back(write_curve(dir / "loss_curve.csv", curve));
        const auto sources = source_sets(suite);
        const auto features = obtain_features(cfg, sources, seed, dir, so.files);
        const auto report = eval::mode_scores(model.g, std::span<const Tensor<double>>(sources), cfg.eval.samples,
                                              cfg.eval.seed, std::nullopt, {}, ptr(features));
        so.files.push_back(write_retention(dir / "retention.csv", mode_names(suite), report.per_mode));
        so.result["retention"] = retention_json(report);
        so.result["loss_curve"] = curve_json(curve);
        so.result["p_average"] = report.p_average;
        return so;
    });
    write_summary(run, cfg.seeds, outs, {"p_average"});
    run.merge(cfg.seeds, outs);
    run.finish();
    return 0;
}

struct AffinityRun {
    affinity::AffinityMatrix cross;
    affinity::AffinityMatrix modes;
};

io::LabeledMatrix labeled(const affinity::AffinityMatrix& m, std::vector<double> values) {
    return {m.source_names, m.target_names, std::move(values)};
}

/// Mean, sample std and closest-mode agreement; a single run is its own mean
/// with zero spread.
affinity::ConsistencyReport summarize(const std::vector<affinity::AffinityMatrix>& runs) {
    if (runs.size() >= 2) return affinity::consistency(runs);
    const auto& m = runs.front();
    affinity::ConsistencyReport rep;
    rep.runs = 1;
    rep.source_names = m.source_names;
    rep.target_names = m.target_names;
    rep.mean = m.scores;
    rep.stddev.assign(m.scores.size(), 0.0);
    std::vector<std::size_t> best;
    for (std::size_t t = 0; t < m.cols(); ++t) best.push_back(affinity::closest_modes(m.column(t), 1).front());
    rep.closest_per_run = {best};
    rep.modal_closest = best;
    rep.stability.assign(m.cols(), 1.0);
    return rep;
}

template <typename T>
int affinity_impl(const Options& opt) {
    const auto cfg = resolve(opt);
    Run run("affinity", cfg);
    const bool cross = cfg.affinity.conditioning == affinity::Conditioning::source;
    if (!cross)
        std::cerr << "warning: target conditioning only applies to mode-vs-mode scores; "
                     "planted targets are skipped\n";

    std::vector<AffinityRun> runs(cfg.seeds.size());
    std::vector<std::size_t> planted;
    auto outs = for_each_seed(cfg.seeds, opt.parallel, [&](std::size_t i, std::uint64_t seed) {
        SeedOutput so;
        const auto suite = run::build_suite(cfg, seed);
        const fs::path dir = run.seed_dir(seed);
        const auto model = obtain_model<T>(cfg, opt, suite, seed, dir, so.files);
        const auto acfg = run::affinity_config(cfg, seed);
        if (i == 0) planted = suite.target_nearest;

        std::vector<affinity::SourceMode<T>> sources;
        std::vector<affinity::TargetSet<T>> as_targets, targets;
        for (std::size_t m = 0; m < suite.tasks.size(); ++m) {
            const Tensor<T> x = suite.source_data(m).template cast<T>();
            sources.push_back({suite.tasks[m].name, m, x});
            as_targets.push_back({suite.tasks[m].name, x, m});
        }
        for (std::size_t t = 0; t < suite.target_names.size(); ++t)
            targets.push_back({suite.target_names[t], suite.target_data(t).template cast<T>(), std::nullopt});

        AffinityRun& r = runs[i];
        r.modes = affinity::affinity_matrix<T>(model, sources, as_targets, acfg);
        const fs::path mp = dir / "mode_affinity.csv";
        io::write_matrix(mp, labeled(r.modes, r.modes.scores));
        so.files.push_back(mp);

        io::Csv self({"mode", "score"});
        double worst = 0;
        for (std::size_t m = 0; m < r.modes.rows(); ++m) {
            self.row({r.modes.source_names[m], io::fmt(r.modes.at(m, m))});
            worst = std::max(worst, r.modes.at(m, m));
        }
        self.save(dir / "self_check.csv");
        so.files.push_back(dir / "self_check.csv");
        so.result["self_check_max"] = worst;

        if (cross && !targets.empty()) {
            r.cross = affinity::affinity_matrix<T>(model, sources, targets, acfg);
            const fs::path cp = dir / "affinity.csv";
            io::write_matrix(cp, labeled(r.cross, r.cross.scores));
            so.files.push_back(cp);
            json closest = json::object();
            for (std::size_t t = 0; t < r.cross.cols(); ++t)
                closest[r.cross.target_names[t]] = affinity::closest_modes(r.cross, t, 1).front();
            so.result["closest"] = closest;
        }
        return so;
    });

    const auto emit = [&](const std::vector<affinity::AffinityMatrix>& mats, const std::string& stem) {
        const auto rep = summarize(mats);
        const auto& m = mats.front();
        const fs::path mean = run.root() / (stem + "_mean.csv"), sd = run.root() / (stem + "_std.csv");
        io::write_matrix(mean, labeled(m, rep.mean));
        io::write_matrix(sd, labeled(m, rep.stddev));
        run.file(mean);
        run.file(sd);
        return rep;
    };

    std::vector<affinity::AffinityMatrix> mode_runs;
    for (const auto& r : runs) mode_runs.push_back(r.modes);
    emit(mode_runs, "mode_affinity");

    if (cross && !runs.front().cross.target_names.empty()) {
        std::vector<affinity::AffinityMatrix> cross_runs;
        for (const auto& r : runs) cross_runs.push_back(r.cross);
        const auto rep = emit(cross_runs, "affinity");
        io::Csv csv({"target", "closest", "stability", "planted_source"});
        json stab = json::object();
        for (std::size_t t = 0; t < rep.cols(); ++t) {
            const std::string truth = t < planted.size() ? rep.source_names.at(planted[t]) : "";
            csv.row({rep.target_names[t], rep.source_names[rep.modal_closest[t]], io::fmt(rep.stability[t]), truth});
            stab[rep.target_names[t]] = rep.stability[t];
        }
        csv.save(run.root() / "consistency.csv");
        run.file(run.root() / "consistency.csv");
        run.results()["stability"] = stab;
    }
    run.merge(cfg.seeds, outs);
    run.finish();
    return 0;
}

template <typename T>
int continual_impl(const Options& opt) {
    const auto cfg = resolve(opt);
    Run run("continual", cfg);
    auto outs = for_each_seed(cfg.seeds, opt.parallel, [&](std::size_t, std::uint64_t seed) {
        SeedOutput so;
        const auto suite = run::build_suite(cfg, seed);
        const fs::path dir = run.seed_dir(seed);
        auto model = obtain_model<T>(cfg, opt, suite, seed, dir, so.files);
        const std::size_t t = pick_target(suite, opt.target);
        const auto kcfg = run::continual_config(cfg, seed);
        const auto sources = source_sets(suite);
        const Tensor<double> target = suite.target_data(t);

        auto names = mode_names(suite);
        names.resize(model.num_labels());
        for (std::size_t m = suite.tasks.size(); m < names.size(); ++m) names[m] = "label" + std::to_string(m);
        std::vector<Tensor<double>> mode_data = sources;
        if (mode_data.size() != model.num_labels())
            throw ConfigError("continual from a checkpoint with extra labels needs their data; use a source-only "
                              "checkpoint");

        const Tensor<double> train = adapt::training_subset(target, kcfg);
        const auto column = adapt::affinity_column(model, std::span<const Tensor<double>>(mode_data), train,
                                                   run::affinity_config(cfg, seed));
        auto res = adapt::continual_learn(std::move(model), target, column, kcfg);

        std::vector<Tensor<double>> refs = sources;
        refs.push_back(target);
        names.push_back(suite.target_names[t]);
        const auto features = obtain_features(cfg, sources, seed, dir, so.files);
        const auto report = eval::mode_scores(res.model.g, std::span<const Tensor<double>>(refs), cfg.eval.samples,
                                              cfg.eval.seed, res.target_label, res.closest, ptr(features));

        gan::save(res.model, dir / "adapted.ckpt");
        so.files.push_back(dir / "adapted.ckpt");
        so.files.push_back(write_column(dir / "affinity_column.csv", names, column));
        so.files.push_back(write_retention(dir / "retention.csv", names, report.per_mode));
        so.files.push_back(write_curve(dir / "loss_curve.csv", res.curve));

        so.result["target"] = suite.target_names[t];
        so.result["affinity_column"] = column;
        so.result["closest"] = res.closest;
        so.result["mix"] = mix_json(res.mix);
        so.result["target_label"] = res.target_label;
        so.result["retention"] = retention_json(report);
        so.result["loss_curve"] = curve_json(res.curve);
        so.result["p_target"] = report.p_target;
        so.result["p_closest"] = report.p_closest;
        so.result["p_average"] = report.p_average;
        return so;
    });
    write_summary(run, cfg.seeds, outs, {"p_target", "p_closest", "p_average"});
    run.merge(cfg.seeds, outs);
    run.finish();
    return 0;
}

/// continual with --then: every target in order, affinity recomputed
/// against the grown mode set at each stage.
template <typename T>
int sequential_impl(const Options& opt) {
    const auto cfg = resolve(opt);
    Run run("continual", cfg);
    auto outs = for_each_seed(cfg.seeds, opt.parallel, [&](std::size_t, std::uint64_t seed) {
        SeedOutput so;
        const auto suite = run::build_suite(cfg, seed);
        const fs::path dir = run.seed_dir(seed);
        auto model = obtain_model<T>(cfg, opt, suite, seed, dir, so.files);
        const auto sources = source_sets(suite);
        if (sources.size() != model.num_labels())
            throw ConfigError("continual with --then needs a checkpoint whose labels are exactly the suite's source "
                              "modes");

        std::vector<adapt::TargetStage> stages;
        std::vector<std::string> names = mode_names(suite);
        std::vector<std::string> order = {opt.target};
        order.insert(order.end(), opt.then.begin(), opt.then.end());
        std::set<std::size_t> seen;
        for (const auto& which : order) {
            const std::size_t t = pick_target(suite, which);
            if (!seen.insert(t).second)
                throw ConfigError("target '" + suite.target_names[t] + "' is listed more than once");
            stages.push_back({suite.target_names[t], suite.target_data(t)});
            names.push_back(suite.target_names[t]);
        }
        const auto features = obtain_features(cfg, sources, seed, dir, so.files);
        auto res = adapt::sequential_targets(std::move(model), std::span<const Tensor<double>>(sources),
                                             std::span<const adapt::TargetStage>(stages),
                                             run::continual_config(cfg, seed), run::affinity_config(cfg, seed),
                                             cfg.eval, ptr(features));

        gan::save(res.model, dir / "adapted.ckpt");
        so.files.push_back(dir / "adapted.ckpt");
        json stage_json = json::array();
        for (std::size_t s = 0; s < res.stages.size(); ++s) {
            const auto& st = res.stages[s];
            const std::vector<std::string> present(names.begin(),
                                                   names.begin() + static_cast<std::ptrdiff_t>(st.retention.per_mode.size()));
            const std::vector<std::string> column_names(present.begin(), present.end() - 1);
            const std::string tag = "stage" + std::to_string(s + 1);
            so.files.push_back(write_column(dir / (tag + "_affinity_column.csv"), column_names, st.affinity_column));
            so.files.push_back(write_retention(dir / (tag + "_retention.csv"), present, st.retention.per_mode));
            stage_json.push_back({{"target", st.name},
                                  {"affinity_column", st.affinity_column},
                                  {"closest", st.closest},
                                  {"mix", mix_json(st.mix)},
                                  {"target_label", st.target_label},
                                  {"retention", retention_json(st.retention)}});
        }
        const auto& last = res.stages.back().retention;
        so.result["stages"] = std::move(stage_json);
        so.result["p_target"] = last.p_target;
        so.result["p_closest"] = last.p_closest;
        so.result["p_average"] = last.p_average;
        return so;
    });
    write_summary(run, cfg.seeds, outs, {"p_target", "p_closest", "p_average"});
    run.merge(cfg.seeds, outs);
    run.finish();
    return 0;
}

template <typename T>
int transfer_impl(const Options& opt) {
    const auto cfg = resolve(opt);
    Run run("transfer", cfg);
    auto outs = for_each_seed(cfg.seeds, opt.parallel, [&](std::size_t, std::uint64_t seed) {
        SeedOutput so;
        const auto suite = run::build_suite(cfg, seed);
        const fs::path dir = run.seed_dir(seed);
        auto model = obtain_model<T>(cfg, opt, suite, seed, dir, so.files);
        const std::size_t t = pick_target(suite, opt.target);
        const auto kcfg = run::continual_config(cfg, seed);
        const auto sources = source_sets(suite);
        if (sources.size() != model.num_labels())
            throw ConfigError("transfer needs a checkpoint whose labels are exactly the suite's source modes");
        const Tensor<double> target = suite.target_data(t);
        const Tensor<double> train = adapt::training_subset(target, kcfg);
        const auto column = adapt::affinity_column(model, std::span<const Tensor<double>>(sources), train,
                                                   run::affinity_config(cfg, seed));
        auto res = adapt::transfer_learn(std::move(model), target, column, kcfg);

        const auto features = obtain_features(cfg, sources, seed, dir, so.files);
        const auto report = eval::mode_scores(res.model.g, std::span<const Tensor<double>>(sources),
                                              cfg.eval.samples, cfg.eval.seed, std::nullopt, {res.closest},
                                              ptr(features));
        const double target_score = eval::mode_score(res.model.g, res.closest, target, cfg.eval.samples,
                                                     cfg.eval.seed, ptr(features));
        auto names = mode_names(suite);
        std::vector<double> scores = report.per_mode;
        names.push_back("target:" + suite.target_names[t]);
        scores.push_back(target_score);

        gan::save(res.model, dir / "adapted.ckpt");
        so.files.push_back(dir / "adapted.ckpt");
        so.files.push_back(write_column(dir / "affinity_column.csv", mode_names(suite), column));
        so.files.push_back(write_retention(dir / "retention.csv", names, scores));
        so.files.push_back(write_curve(dir / "loss_curve.csv", res.curve));

        so.result["target"] = suite.target_names[t];
        so.result["affinity_column"] = column;
        so.result["closest"] = res.closest;
        so.result["retention"] = retention_json(report);
        so.result["loss_curve"] = curve_json(res.curve);
        so.result["target_score"] = target_score;
        so.result["p_average"] = report.p_average;
        return so;
    });
    write_summary(run, cfg.seeds, outs, {"closest", "target_score", "p_average"});
    run.merge(cfg.seeds, outs);
    run.finish();
    return 0;
}

template <typename T>
int baseline_impl(const Options& opt) {
    const auto kind = adapt::parse_baseline(opt.kind);
    const auto cfg = resolve(opt);
    Run run("baseline", cfg);
    run.results()["kind"] = adapt::baseline_name(kind);
    auto outs = for_each_seed(cfg.seeds, opt.parallel, [&](std::size_t, std::uint64_t seed) {
        SeedOutput so;
        const auto suite = run::build_suite(cfg, seed);
        const fs::path dir = run.seed_dir(seed);
        const std::size_t t = pick_target(suite, opt.target);
        const auto kcfg = run::continual_config(cfg, seed);
        const auto sources = source_sets(suite);
        const Tensor<double> target = suite.target_data(t);

        const gan::Cgan<T> base =
            kind == adapt::BaselineKind::sequential_finetune
                ? obtain_model<T>(cfg, opt, suite, seed, dir, so.files)
                : gan::create_cgan<T>(run::model_spec(cfg, suite.sources.dim(), suite.tasks.size()), seed);
        const auto res = adapt::run_baseline(kind, base, suite.sources, target, kcfg);

        std::vector<Tensor<double>> refs;
        std::vector<std::string> names;
        if (kind != adapt::BaselineKind::individual) {
            refs = sources;
            names = mode_names(suite);
            if (refs.size() + 1 != res.model.num_labels())
                throw ConfigError("baseline needs a checkpoint whose labels are exactly the suite's source modes");
        }
        refs.push_back(target);
        names.push_back(suite.target_names[t]);
        const auto features = obtain_features(cfg, sources, seed, dir, so.files);
        const auto report = eval::mode_scores(res.model.g, std::span<const Tensor<double>>(refs), cfg.eval.samples,
                                              cfg.eval.seed, res.target_label, {}, ptr(features));

        gan::save(res.model, dir / (std::string(adapt::baseline_name(kind)) + ".ckpt"));
        so.files.push_back(dir / (std::string(adapt::baseline_name(kind)) + ".ckpt"));
        so.files.push_back(write_retention(dir / "retention.csv", names, report.per_mode));
        so.files.push_back(write_curve(dir / "loss_curve.csv", res.curve));
        so.result["target"] = suite.target_names[t];
        so.result["retention"] = retention_json(report);
        so.result["loss_curve"] = curve_json(res.curve);
        so.result["p_target"] = report.p_target;
        so.result["p_average"] = report.p_average;
        return so;
    });
    write_summary(run, cfg.seeds, outs, {"p_target", "p_average"});
    run.merge(cfg.seeds, outs);
    run.finish();
    return 0;
}

template <typename T>
int ablate_impl(const Options& opt) {
    const auto cfg = resolve(opt);
    std::vector<std::size_t> ns;
    for (std::size_t n : opt.top_n) {
        if (std::find(ns.begin(), ns.end(), n) != ns.end()) {
            std::cerr << "warning: duplicate top-n value " << n << " ignored\n";
            continue;
        }
        ns.push_back(n);
    }
    if (ns.empty()) throw ConfigError("ablate needs at least one --n value");

    Run run("ablate", cfg);
    auto outs = for_each_seed(cfg.seeds, opt.parallel, [&](std::size_t, std::uint64_t seed) {
        SeedOutput so;
        const auto suite = run::build_suite(cfg, seed);
        const fs::path dir = run.seed_dir(seed);
        const auto model = obtain_model<T>(cfg, opt, suite, seed, dir, so.files);
        for (std::size_t n : ns)
            if (n < 1 || n > model.num_labels())
                throw ConfigError("top-n value " + std::to_string(n) + " outside [1, " +
                                  std::to_string(model.num_labels()) + "]");
        const std::size_t t = pick_target(suite, opt.target);
        const auto sources = source_sets(suite);
        if (sources.size() != model.num_labels())
            throw ConfigError("ablate needs a checkpoint whose labels are exactly the suite's source modes");
        const Tensor<double> target = suite.target_data(t);
        auto kcfg = run::continual_config(cfg, seed);
        const auto column = adapt::affinity_column(model, std::span<const Tensor<double>>(sources),
                                                   adapt::training_subset(target, kcfg), run::affinity_config(cfg, seed));
        std::vector<Tensor<double>> refs = sources;
        refs.push_back(target);
        const auto features = obtain_features(cfg, sources, seed, dir, so.files);

        io::Csv csv({"n", "target_score", "p_closest", "p_average", "note"});
        json rows = json::array();
        for (std::size_t n : ns) {
            kcfg.top_n = n;
            const auto res = adapt::continual_learn(model, target, column, kcfg);
            const auto report = eval::mode_scores(res.model.g, std::span<const Tensor<double>>(refs),
                                                  cfg.eval.samples, cfg.eval.seed, res.target_label, res.closest,
                                                  ptr(features));
            const std::string note = n == 1 ? "transfer-equivalent" : "";
            csv.row({std::to_string(n), io::fmt(report.p_target), io::fmt(report.p_closest),
                     io::fmt(report.p_average), note});
            rows.push_back({{"n", n},
                            {"closest", res.closest},
                            {"mix", mix_json(res.mix)},
                            {"target_score", report.p_target},
                            {"p_closest", report.p_closest},
                            {"p_average", report.p_average}});
        }
        csv.save(dir / "ablate.csv");
        so.files.push_back(dir / "ablate.csv");
        so.result["rows"] = rows;
        return so;
    });

    io::Csv csv({"n", "target_score", "p_closest", "p_average", "seeds", "note"});
    for (std::size_t i = 0; i < ns.size(); ++i) {
        double tsum = 0, csum = 0, asum = 0;
        for (const auto& o : outs) {
            const auto& row = o.result.at("rows").at(i);
            tsum += row.at("target_score").template get<double>();
            csum += row.at("p_closest").template get<double>();
            asum += row.at("p_average").template get<double>();
        }
        const double k = static_cast<double>(outs.size());
        csv.row({std::to_string(ns[i]), io::fmt(tsum / k), io::fmt(csum / k), io::fmt(asum / k),
                 std::to_string(outs.size()), ns[i] == 1 ? "transfer-equivalent" : ""});
    }
    csv.save(run.root() / "ablate.csv");
    run.file(run.root() / "ablate.csv");
    run.merge(cfg.seeds, outs);
    run.finish();
    return 0;
}

}  // namespace

int cmd_pretrain(const Options& opt) { return opt.float64 ? pretrain_impl<double>(opt) : pretrain_impl<float>(opt); }
int cmd_affinity(const Options& opt) { return opt.float64 ? affinity_impl<double>(opt) : affinity_impl<float>(opt); }
int cmd_continual(const Options& opt) {
    if (!opt.then.empty()) return opt.float64 ? sequential_impl<double>(opt) : sequential_impl<float>(opt);
    return opt.float64 ? continual_impl<double>(opt) : continual_impl<float>(opt);
}
int cmd_transfer(const Options& opt) { return opt.float64 ? transfer_impl<double>(opt) : transfer_impl<float>(opt); }
int cmd_baseline(const Options& opt) { return opt.float64 ? baseline_impl<double>(opt) : baseline_impl<float>(opt); }
int cmd_ablate(const Options& opt) { return opt.float64 ? ablate_impl<double>(opt) : ablate_impl<float>(opt); }

int cmd_atlas(const Options& opt) {
    if (opt.input.empty()) throw ConfigError("atlas needs --input");
    const auto cfg = resolve(opt);
    const auto m = io::read_matrix(opt.input);
    if (m.rows() != m.cols())
        throw DimensionError("atlas needs a square matrix; " + opt.input + " is " + std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()));
    const auto emb = affinity::atlas(m.values, m.rows(), m.row_names);

    Run run("atlas", cfg);
    io::Csv csv({"mode", "x", "y"});
    for (std::size_t i = 0; i < emb.names.size(); ++i)
        csv.row({emb.names[i], io::fmt(emb.coords[i][0]), io::fmt(emb.coords[i][1])});
    csv.comment("stress=" + io::fmt(emb.stress));
    csv.save(run.root() / "atlas.csv");
    run.file(run.root() / "atlas.csv");
    run.results()["input"] = opt.input;
    run.results()["stress"] = emb.stress;
    run.finish();
    return 0;
}

int cmd_theorem1(const Options& opt) {
    if (!(opt.alpha_min > 0.0 && opt.alpha_min < opt.alpha_max && opt.alpha_max < 1.0))
        throw ConfigError("alpha bounds must satisfy 0 < alpha-min < alpha-max < 1");
    if (!(opt.span > 0)) throw ConfigError("--span must be > 0");
    if (opt.count == 0) throw ConfigError("--count must be >= 1");
    const auto cfg = resolve(opt);
    Run run("theorem1", cfg);

    Rng rng(cfg.seeds.front());
    io::Csv csv({"a", "b", "alpha", "theta_star", "L_a_theta_star", "min_L_a", "strict"});
    std::size_t strict = 0;
    double worst_gap = 0;
    for (std::size_t i = 0; i < opt.count; ++i) {
        eval::QuadraticLossSpec spec;
        do {
            spec.a = (2.0 * rng.uniform() - 1.0) * opt.span;
            spec.b = (2.0 * rng.uniform() - 1.0) * opt.span;
        } while (std::abs(spec.a - spec.b) < 1e-3 * opt.span);
        spec.alpha = opt.alpha_min + (opt.alpha_max - opt.alpha_min) * rng.uniform();
        const auto r = eval::theorem1_check(spec);
        strict += r.strict;
        worst_gap = std::max(worst_gap, std::abs(r.theta_closed - r.theta_descent));
        csv.row({io::fmt(spec.a), io::fmt(spec.b), io::fmt(spec.alpha), io::fmt(r.theta_closed),
                 io::fmt(r.loss_a_at_theta), io::fmt(r.min_loss_a), r.strict ? "true" : "false"});
    }
    csv.save(run.root() / "theorem1.csv");
    run.file(run.root() / "theorem1.csv");
    run.results()["rows"] = opt.count;
    run.results()["strict"] = strict;
    run.results()["max_descent_gap"] = worst_gap;
    run.finish();
    return strict == opt.count ? 0 : 1;
}

int cmd_report(const Options& opt) {
    if (opt.checkpoint.empty()) throw ConfigError("report needs --checkpoint");
    const auto cfg = resolve(opt);
    Run run("report", cfg);
    const std::uint64_t seed = cfg.seeds.front();
    const auto suite = run::build_suite(cfg, seed);
    const auto spec = run::model_spec(cfg, suite.sources.dim(), suite.tasks.size());
    const auto model = gan::load<double>(opt.checkpoint, spec);

    std::vector<Tensor<double>> refs = source_sets(suite);
    auto names = mode_names(suite);
    if (refs.size() > model.num_labels()) throw ConfigError("checkpoint has fewer labels than the suite's sources");
    std::optional<std::size_t> target;
    if (model.num_labels() > refs.size() && !opt.target.empty()) {
        const std::size_t t = pick_target(suite, opt.target);
        refs.push_back(suite.target_data(t));
        names.push_back(suite.target_names[t]);
        target = refs.size() - 1;
    }
    if (model.num_labels() > refs.size())
        std::cerr << "warning: " << model.num_labels() - refs.size() << " label(s) without reference data skipped\n";

    std::vector<fs::path> extra;
    const auto features = obtain_features(cfg, source_sets(suite), seed, run.root(), extra);
    for (const auto& f : extra) run.file(f);
    std::vector<double> scores;
    for (std::size_t m = 0; m < refs.size(); ++m)
        scores.push_back(eval::mode_score(model.g, m, refs[m], cfg.eval.samples, cfg.eval.seed + m, ptr(features)));
    const auto report = eval::RetentionReport::build(scores, target, {});
    write_retention(run.root() / "report.csv", names, report.per_mode);
    run.file(run.root() / "report.csv");
    run.results()["checkpoint"] = opt.checkpoint;
    run.results()["retention"] = retention_json(report);
    run.finish();
    return 0;
}

int cmd_print_config(const Options& opt) {
    std::cout << run::to_json(resolve(opt)).dump(2) << "\n";
    return 0;
}

}  // namespace macl::cli
