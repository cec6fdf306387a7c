#pragma once

// Experiment runners: synthetic data generation, batch EM, online EM with
// batch-EM baselines, and the distributed mixture experiment comparing
// entropic combining with simple averaging.
//
// Output files written by write_results:
//   summary.csv      method,repeats,mean_final_nll,min_final_nll,max_final_nll
//   per_repeat.csv   repeat,method,final_nll
//   curves.csv       method,t,nll   (mean over repeats of the evaluation nll)
//   logs/<method>_r<repeat>.csv   training logs (see schedule.hpp)

#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "oem/combiner.hpp"
#include "oem/harness/config.hpp"
#include "oem/harness/families.hpp"
#include "oem/io/csv.hpp"
#include "oem/schedule.hpp"

namespace oem::harness {

namespace fs = std::filesystem;

// Random streams derived from the configured seed.
enum Stream : std::uint64_t { kTruthStream = 1, kTrainStream = 2, kHoldoutStream = 3, kInitStream = 100, kStepStream = 10000 };

template <class Ops>
struct Dataset {
    std::vector<typename Ops::Item> train;
    std::vector<typename Ops::Item> holdout;
    std::optional<typename Ops::Model> truth;

    std::span<const typename Ops::Item> eval() const {
        return holdout.empty() ? std::span<const typename Ops::Item>(train) : std::span<const typename Ops::Item>(holdout);
    }
};

template <class Ops>
Dataset<Ops> load_dataset(const ExperimentConfig& c) {
    Dataset<Ops> d;
    if (!c.data.truth_path.empty()) d.truth = Ops::from_json(c, io::read_json(c.data.truth_path));
    if (c.data.source == "csv") {
        d.train = Ops::read_data(c.data.train_path);
        if (!c.data.holdout_path.empty()) d.holdout = Ops::read_data(c.data.holdout_path);
        return d;
    }
    if (!d.truth) {
        Rng truth_rng = derive_rng(c.seed, kTruthStream);
        d.truth = Ops::truth(c, truth_rng);
    }
    Rng train_rng = derive_rng(c.seed, kTrainStream);
    d.train = Ops::sample(*d.truth, c.data.train_count, c, train_rng);
    if (c.data.holdout_count > 0) {
        Rng holdout_rng = derive_rng(c.seed, kHoldoutStream);
        d.holdout = Ops::sample(*d.truth, c.data.holdout_count, c, holdout_rng);
    }
    return d;
}

struct MethodResult {
    std::string method;
    std::vector<double> final_nll;                 // one per repeat
    std::map<long long, std::vector<double>> curve;  // t -> eval nll per repeat
};

struct RunResult {
    std::vector<MethodResult> methods;
    std::vector<std::pair<std::string, TrainLog>> logs;
    Warnings warnings;

    MethodResult& method(const std::string& name) {
        for (auto& m : methods)
            if (m.method == name) return m;
        methods.push_back({name, {}, {}});
        return methods.back();
    }

    const MethodResult* find(const std::string& name) const {
        for (const auto& m : methods)
            if (m.method == name) return &m;
        return nullptr;
    }
};

template <class Item>
std::vector<std::span<const Item>> make_batches(std::span<const Item> data, std::size_t batch_size) {
    std::vector<std::span<const Item>> out;
    for (std::size_t i = 0; i < data.size(); i += batch_size) out.push_back(data.subspan(i, std::min(batch_size, data.size() - i)));
    return out;
}

inline long long eval_cadence(const ExperimentConfig& c, long long total) {
    return c.eval_every > 0 ? c.eval_every : std::max(1LL, total / 50);
}

// Batch EM from `init` for c.batch_iterations iterations.
template <class Ops>
std::pair<typename Ops::Model, TrainLog> run_batch_em(const ExperimentConfig& c, const Dataset<Ops>& d,
                                                      typename Ops::Model model, std::vector<double>* eval_curve,
                                                      Warnings* warnings) {
    TrainLog log;
    log.has_holdout = !d.holdout.empty();
    const std::span<const typename Ops::Item> train(d.train);
    if (eval_curve) eval_curve->push_back(Ops::loss(model, d.eval()));
    for (int it = 1; it <= c.batch_iterations; ++it) {
        try {
            const auto start = std::chrono::steady_clock::now();
            TrainRecord rec;
            rec.t = it;
            rec.eta = std::numeric_limits<double>::infinity();
            rec.nll_batch_pre = Ops::loss(model, train);
            model = Ops::batch_step(model, train, c, warnings);
            rec.nll_batch_post = Ops::loss(model, train);
            if (log.has_holdout) rec.nll_holdout = Ops::loss(model, d.holdout);
            if (eval_curve) eval_curve->push_back(log.has_holdout ? *rec.nll_holdout : rec.nll_batch_post);
            if (c.record_wall_time)
                rec.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
            log.append(rec);
        } catch (...) {
            rethrow_with_context("batch EM iteration " + std::to_string(it));
        }
    }
    return {std::move(model), std::move(log)};
}

// Online EM over c.epochs passes of mini-batches of size c.batch_size.
template <class Ops>
std::pair<typename Ops::Model, TrainLog> run_online_em(const ExperimentConfig& c, const Dataset<Ops>& d,
                                                       typename Ops::Model model, Rng& step_rng,
                                                       std::map<long long, double>* eval_curve, Warnings* warnings) {
    using Item = typename Ops::Item;
    std::vector<std::span<const Item>> stream;
    for (int e = 0; e < c.epochs; ++e)
        for (auto b : make_batches(std::span<const Item>(d.train), c.batch_size)) stream.push_back(b);
    const long long total = static_cast<long long>(stream.size());
    const DecaySchedule schedule(c.eta0, c.beta, true);
    const auto eval = d.eval();
    if (eval_curve) (*eval_curve)[0] = Ops::loss(model, eval);

    RunOptions<typename Ops::Model> options;
    options.record_wall_time = c.record_wall_time;
    options.holdout_every = eval_cadence(c, total);
    if (!d.holdout.empty()) options.holdout = [&](const typename Ops::Model& m) { return Ops::loss(m, d.holdout); };
    options.on_step = [&](long long t, const typename Ops::Model& m) {
        if (eval_curve && (t % options.holdout_every == 0 || t == total)) (*eval_curve)[t] = Ops::loss(m, eval);
    };
    auto step = [&](const typename Ops::Model& m, std::span<const Item> batch, double eta) {
        return Ops::online_step(m, batch, eta, c, step_rng, warnings);
    };
    auto loss = [](const typename Ops::Model& m, std::span<const Item> batch) { return Ops::loss(m, batch); };
    return run_online(std::move(model), std::span<const std::span<const Item>>(stream), schedule, step, loss, options);
}

template <class Ops>
RunResult run_single_machine(const ExperimentConfig& c) {
    const Dataset<Ops> d = load_dataset<Ops>(c);
    RunResult result;
    result.warnings = c.warnings;
    for (int r = 0; r < c.repeats; ++r) {
        try {
            Rng init_rng = derive_rng(c.seed, kInitStream + static_cast<std::uint64_t>(r));
            const auto init = initialize<Ops>(c, std::span<const typename Ops::Item>(d.train), init_rng,
                                              d.truth ? &*d.truth : nullptr);
            const std::string suffix = "_r" + std::to_string(r);

            std::vector<double> batch_curve;
            auto [batch_model, batch_log] = run_batch_em<Ops>(c, d, init, &batch_curve, &result.warnings);
            if (c.mode == Mode::batch) {
                auto& m = result.method("batch_em");
                m.final_nll.push_back(batch_curve.back());
                for (std::size_t t = 0; t < batch_curve.size(); ++t) m.curve[static_cast<long long>(t)].push_back(batch_curve[t]);
                result.logs.emplace_back("batch_em" + suffix, std::move(batch_log));
                continue;
            }

            Rng step_rng = derive_rng(c.seed, kStepStream + static_cast<std::uint64_t>(r));
            std::map<long long, double> online_curve;
            auto [online_model, online_log] = run_online_em<Ops>(c, d, init, step_rng, &online_curve, &result.warnings);
            const long long last = online_curve.rbegin()->first;

            auto& on = result.method("online");
            on.final_nll.push_back(online_curve.rbegin()->second);
            for (const auto& [t, v] : online_curve) on.curve[t].push_back(v);

            const std::string one = "batch_em_1";
            const std::string many = "batch_em_" + std::to_string(c.batch_iterations);
            for (const auto& [name, value] : {std::pair{one, batch_curve[1]}, std::pair{many, batch_curve.back()}}) {
                auto& b = result.method(name);
                b.final_nll.push_back(value);
                b.curve[0].push_back(value);
                b.curve[last].push_back(value);
                if (c.batch_iterations == 1) break;
            }
            result.logs.emplace_back("online" + suffix, std::move(online_log));
            result.logs.emplace_back("batch_em" + suffix, std::move(batch_log));
        } catch (...) {
            rethrow_with_context("repeat " + std::to_string(r));
        }
    }
    return result;
}

// Distributed online EM for mixtures: the training set is split into
// `workers` contiguous shards; in every round each worker runs online EM over
// its next `sync_every` observations starting from the shared model, then the
// worker models are combined and broadcast.
template <ExponentialFamily F>
RunResult run_distributed(const ExperimentConfig& c) {
    using Ops = MixtureOps<F>;
    using Model = typename Ops::Model;
    const Dataset<Ops> d = load_dataset<Ops>(c);
    const auto& dc = c.distributed;
    const std::size_t workers = static_cast<std::size_t>(dc.workers);
    const std::size_t shard = d.train.size() / workers;
    if (shard == 0) throw ConfigError("config.distributed.workers: more workers than training observations");
    const std::size_t rounds = (shard + dc.sync_every - 1) / dc.sync_every;
    const DecaySchedule schedule(c.eta0, c.beta, true);
    const auto eval = d.eval();

    std::vector<Combine> strategies;
    if (dc.combine != Combine::simple) strategies.push_back(Combine::entropic);
    if (dc.combine != Combine::entropic) strategies.push_back(Combine::simple);

    RunResult result;
    result.warnings = c.warnings;
    for (int r = 0; r < c.repeats; ++r) {
        Rng init_rng = derive_rng(c.seed, kInitStream + static_cast<std::uint64_t>(r));
        const Model init = Ops::init(c, std::span<const Observation>(d.train), init_rng);
        for (Combine strategy : strategies) {
            const std::string name = strategy == Combine::entropic ? "entropic" : "simple";
            try {
                Model global = init;
                TrainLog log;
                log.has_holdout = !d.holdout.empty();
                auto& method = result.method(name);
                method.curve[0].push_back(Ops::loss(global, eval));
                long long t_worker = 0;
                for (std::size_t round = 0; round < rounds; ++round) {
                    const auto start = std::chrono::steady_clock::now();
                    std::vector<Model> local(workers, global);
                    std::vector<std::size_t> seen(workers, 0);
                    std::vector<Warnings> local_warnings(workers);
                    std::vector<Observation> round_data;
                    const long long t0 = t_worker;
                    long long steps = 0;
                    auto work = [&](std::size_t m) {
                        const std::size_t begin = m * shard + round * dc.sync_every;
                        const std::size_t end = std::min(m * shard + shard, begin + dc.sync_every);
                        const std::span<const Observation> part(d.train.data() + begin, end - begin);
                        long long t = t0;
                        for (auto batch : make_batches(part, c.batch_size)) {
                            ++t;
                            local[m] = online_em_step(local[m], batch, rate(schedule, t), &local_warnings[m]);
                        }
                        seen[m] = part.size();
                        return t - t0;
                    };
                    if (c.threads > 1 && workers > 1) {
                        std::vector<std::thread> pool;
                        std::vector<long long> counts(workers, 0);
                        std::vector<std::exception_ptr> errors(workers);
                        for (std::size_t m = 0; m < workers; ++m)
                            pool.emplace_back([&, m] {
                                try {
                                    counts[m] = work(m);
                                } catch (...) {
                                    errors[m] = std::current_exception();
                                }
                            });
                        for (auto& th : pool) th.join();
                        for (std::size_t m = 0; m < workers; ++m) {
                            if (errors[m]) std::rethrow_exception(errors[m]);
                            steps = std::max(steps, counts[m]);
                        }
                    } else {
                        for (std::size_t m = 0; m < workers; ++m) steps = std::max(steps, work(m));
                    }
                    for (std::size_t m = 0; m < workers; ++m) {
                        const std::size_t begin = m * shard + round * dc.sync_every;
                        round_data.insert(round_data.end(), d.train.begin() + static_cast<std::ptrdiff_t>(begin),
                                          d.train.begin() + static_cast<std::ptrdiff_t>(begin + seen[m]));
                        for (auto& w : local_warnings[m]) result.warnings.push_back("worker " + std::to_string(m) + ": " + w);
                    }
                    t_worker += steps;

                    WeightedModels<Model> wm{local, Vector(workers)};
                    for (std::size_t m = 0; m < workers; ++m)
                        wm.weights[static_cast<Eigen::Index>(m)] =
                            dc.alpha == AlphaRule::uniform ? 1.0 : static_cast<double>(seen[m]);
                    TrainRecord rec;
                    rec.t = static_cast<long long>(round + 1);
                    rec.eta = rate(schedule, std::max(1LL, t_worker));
                    rec.nll_batch_pre = Ops::loss(global, round_data);
                    global = strategy == Combine::entropic ? combine_mixtures(wm, &result.warnings) : combine_simple_average(wm);
                    rec.nll_batch_post = Ops::loss(global, round_data);
                    const double ev = Ops::loss(global, eval);
                    if (log.has_holdout) rec.nll_holdout = ev;
                    if (c.record_wall_time)
                        rec.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
                    log.append(rec);
                    method.curve[t_worker].push_back(ev);
                }
                method.final_nll.push_back(method.curve.rbegin()->second.back());
                result.logs.emplace_back(name + "_r" + std::to_string(r), std::move(log));
            } catch (...) {
                rethrow_with_context(name + " repeat " + std::to_string(r));
            }
        }
    }
    return result;
}

inline RunResult run_experiment(const ExperimentConfig& c) {
    const bool poisson = c.model.emission == "poisson";
    if (c.mode == Mode::distributed)
        return poisson ? run_distributed<PoissonFamily>(c) : run_distributed<GaussianFamily>(c);
    switch (c.family) {
        case Family::mixture:
            return poisson ? run_single_machine<MixtureOps<PoissonFamily>>(c) : run_single_machine<MixtureOps<GaussianFamily>>(c);
        case Family::hmm:
            return poisson ? run_single_machine<HmmOps<PoissonFamily>>(c) : run_single_machine<HmmOps<GaussianFamily>>(c);
        case Family::kalman:
            return run_single_machine<KalmanOps>(c);
        case Family::dirichlet:
            return run_single_machine<DirichletOps>(c);
    }
    throw ConfigError("config.family: unsupported");
}

inline void write_results(const RunResult& result, const fs::path& out) {
    std::error_code ec;
    fs::create_directories(out / "logs", ec);
    if (ec) throw IoError("cannot create " + (out / "logs").string() + ": " + ec.message());
    io::write_file(out / "summary.csv", [&](std::ostream& os) {
        os << "method,repeats,mean_final_nll,min_final_nll,max_final_nll\n";
        for (const auto& m : result.methods) {
            double sum = 0.0, lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (double v : m.final_nll) {
                sum += v;
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            os << m.method << ',' << m.final_nll.size() << ',' << io::format_double(sum / static_cast<double>(m.final_nll.size()))
               << ',' << io::format_double(lo) << ',' << io::format_double(hi) << '\n';
        }
    });
    io::write_file(out / "per_repeat.csv", [&](std::ostream& os) {
        os << "repeat,method,final_nll\n";
        for (const auto& m : result.methods)
            for (std::size_t r = 0; r < m.final_nll.size(); ++r) os << r << ',' << m.method << ',' << io::format_double(m.final_nll[r]) << '\n';
    });
    io::write_file(out / "curves.csv", [&](std::ostream& os) {
        os << "method,t,nll\n";
        for (const auto& m : result.methods)
            for (const auto& [t, values] : m.curve) {
                double sum = 0.0;
                for (double v : values) sum += v;
                os << m.method << ',' << t << ',' << io::format_double(sum / static_cast<double>(values.size())) << '\n';
            }
    });
    for (const auto& [name, log] : result.logs)
        io::write_file(out / "logs" / (name + ".csv"), [&](std::ostream& os) { write_csv(os, log); });
}

// Writes train.csv, holdout.csv (if configured) and truth.json to `out`.
template <class Ops>
void generate_files(const ExperimentConfig& c, const fs::path& out) {
    if (c.data.source != "synthetic") throw ConfigError("config.data.source: generate requires synthetic data");
    const Dataset<Ops> d = load_dataset<Ops>(c);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
    io::write_file(out / "train.csv", [&](std::ostream& os) { Ops::write_data(os, d.train); });
    if (!d.holdout.empty()) io::write_file(out / "holdout.csv", [&](std::ostream& os) { Ops::write_data(os, d.holdout); });
    io::write_json(out / "truth.json", Ops::to_json(*d.truth));
}

inline void generate(const ExperimentConfig& c, const fs::path& out) {
    const bool poisson = c.model.emission == "poisson";
    switch (c.family) {
        case Family::mixture:
            return poisson ? generate_files<MixtureOps<PoissonFamily>>(c, out) : generate_files<MixtureOps<GaussianFamily>>(c, out);
        case Family::hmm:
            return poisson ? generate_files<HmmOps<PoissonFamily>>(c, out) : generate_files<HmmOps<GaussianFamily>>(c, out);
        case Family::kalman:
            return generate_files<KalmanOps>(c, out);
        case Family::dirichlet:
            return generate_files<DirichletOps>(c, out);
    }
}

}  // namespace oem::harness
