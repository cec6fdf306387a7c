#pragma once

// Learning-rate schedules and the online training loop.

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "oem/error.hpp"

namespace oem {

// eta_t = eta0 / t^beta with beta in (0.5, 1]. beta = 0.5 is accepted only when
// explicitly allowed (it violates the square-summability condition).
struct DecaySchedule {
    double eta0 = 1.0;
    double beta = 1.0;

    DecaySchedule(double eta0_, double beta_, bool allow_half = false) : eta0(eta0_), beta(beta_) {
        if (!(eta0 > 0.0) || !std::isfinite(eta0)) throw InvalidParameter("schedule: eta0 must be positive");
        const bool in_range = beta > 0.5 && beta <= 1.0;
        if (!in_range && !(allow_half && beta == 0.5))
            throw InvalidParameter("schedule: beta must lie in (0.5, 1], got " + std::to_string(beta));
    }
};

inline double rate(const DecaySchedule& s, long long t) {
    if (t < 1) throw InvalidArgument("rate: iteration must be at least 1");
    return s.eta0 / std::pow(static_cast<double>(t), s.beta);
}

struct TrainRecord {
    long long t = 0;
    double eta = 0.0;
    double nll_batch_pre = 0.0;
    double nll_batch_post = 0.0;
    std::optional<double> nll_holdout;
    double ms = 0.0;
};

struct TrainLog {
    std::vector<TrainRecord> records;
    bool has_holdout = false;

    void append(TrainRecord r) {
        if (!records.empty() && r.t <= records.back().t) throw InvalidArgument("TrainLog: iterations must increase");
        records.push_back(std::move(r));
    }
};

// Writes `t,eta,nll_batch_pre,nll_batch_post[,nll_holdout],ms` with 17
// significant digits; the holdout column is absent when the log has none and
// left empty on iterations where it was not evaluated.
inline void write_csv(std::ostream& os, const TrainLog& log) {
    os << "t,eta,nll_batch_pre,nll_batch_post";
    if (log.has_holdout) os << ",nll_holdout";
    os << ",ms\n";
    const auto old_precision = os.precision(17);
    for (const auto& r : log.records) {
        os << r.t << ',' << r.eta << ',' << r.nll_batch_pre << ',' << r.nll_batch_post;
        if (log.has_holdout) {
            os << ',';
            if (r.nll_holdout) os << *r.nll_holdout;
        }
        os << ',' << r.ms << '\n';
    }
    os.precision(old_precision);
}

template <class Model>
struct RunOptions {
    // Evaluated every `holdout_every` iterations and at the last one.
    std::function<double(const Model&)> holdout;
    long long holdout_every = 1;
    bool record_wall_time = false;
    // Called after every step, e.g. to take a snapshot.
    std::function<void(long long, const Model&)> on_step;
};

// Applies `step(model, batch, eta_t)` to each batch of the stream in order,
// logging `loss(model, batch)` before and after every step. Errors are
// rethrown with the iteration index prepended.
template <class Model, class Batch, class Stepper, class Loss>
std::pair<Model, TrainLog> run_online(Model model, std::span<const Batch> stream, const DecaySchedule& schedule,
                                      Stepper&& step, Loss&& loss, const RunOptions<Model>& options = {}) {
    if (stream.empty()) throw InvalidArgument("run_online: empty stream");
    if (options.holdout_every < 1) throw InvalidArgument("run_online: holdout cadence must be positive");
    TrainLog log;
    log.has_holdout = static_cast<bool>(options.holdout);
    const long long last = static_cast<long long>(stream.size());
    for (long long t = 1; t <= last; ++t) {
        try {
            const Batch& batch = stream[static_cast<std::size_t>(t - 1)];
            const auto start = std::chrono::steady_clock::now();
            TrainRecord rec;
            rec.t = t;
            rec.eta = rate(schedule, t);
            rec.nll_batch_pre = loss(model, batch);
            model = step(model, batch, rec.eta);
            rec.nll_batch_post = loss(model, batch);
            if (options.holdout && (t % options.holdout_every == 0 || t == last)) rec.nll_holdout = options.holdout(model);
            if (options.record_wall_time)
                rec.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
            log.append(rec);
            if (options.on_step) options.on_step(t, model);
        } catch (...) {
            rethrow_with_context("iteration " + std::to_string(t));
        }
    }
    return {std::move(model), std::move(log)};
}

}  // namespace oem
