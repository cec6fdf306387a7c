// Fits a two-component Gaussian mixture with online EM and prints the
// learning curve next to a single batch EM iteration from the same start.
#include <cstdio>
#include <vector>

#include "oem/families.hpp"
#include "oem/mixture.hpp"
#include "oem/schedule.hpp"

int main() {
    using namespace oem;
    const GaussianFamily family(2);
    Rng rng(3);

    MixtureModel<GaussianFamily> truth{family, Vector::Constant(2, 0.5), {}};
    truth.components.push_back(family.from_moments(Vector::Constant(2, -2.0), Matrix::Identity(2, 2)));
    truth.components.push_back(family.from_moments(Vector::Constant(2, 2.0), 0.5 * Matrix::Identity(2, 2)));
    const std::vector<Observation> data = sample_mixture(truth, 2000, rng);
    const std::span<const Observation> all(data);

    MixtureModel<GaussianFamily> init{family, Vector::Constant(2, 0.5), {}};
    init.components.push_back(family.from_moments(Vector::Constant(2, -0.5), 4.0 * Matrix::Identity(2, 2)));
    init.components.push_back(family.from_moments(Vector::Constant(2, 0.5), 4.0 * Matrix::Identity(2, 2)));

    std::vector<std::span<const Observation>> stream;
    for (std::size_t i = 0; i < data.size(); i += 20) stream.emplace_back(data.data() + i, 20);

    RunOptions<MixtureModel<GaussianFamily>> options;
    options.holdout = [&](const auto& m) { return nll(m, all); };
    options.holdout_every = 10;
    auto step = [](const auto& m, std::span<const Observation> b, double eta) { return online_em_step(m, b, eta); };
    auto loss = [](const auto& m, std::span<const Observation> b) { return nll(m, b); };
    const auto [fitted, log] = run_online(init, std::span<const std::span<const Observation>>(stream),
                                          DecaySchedule(1.0, 0.9), step, loss, options);

    std::printf("start        nll %.4f\n", nll(init, all));
    for (const auto& r : log.records)
        if (r.nll_holdout) std::printf("online t=%-4lld nll %.4f\n", r.t, *r.nll_holdout);
    std::printf("batch EM x1  nll %.4f\n", nll(batch_em_step(init, all), all));
    for (Eigen::Index h = 0; h < fitted.size(); ++h) {
        const Vector mean = family.mean(fitted.components[static_cast<std::size_t>(h)]);
        std::printf("component %ld: weight %.3f mean (%.3f, %.3f)\n", static_cast<long>(h), fitted.weights[h], mean[0], mean[1]);
    }
}
