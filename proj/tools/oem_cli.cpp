// oem: synthetic data generation, experiments, plots and dataset checks.
//
//   oem generate --config cfg.json --out dir [--seed N]
//   oem run --config cfg.json --out dir [--seed N] [--threads N]
//   oem plot curves.csv --out plot.svg [--title TEXT]
//   oem ingest-check data.csv --family mixture|hmm|kalman|dirichlet
//   oem --print-schema
//
// Exit codes: 0 success, 2 configuration or argument error, 3 numerical
// error, 4 I/O or parse error.

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"

#include "oem/harness/config.hpp"
#include "oem/harness/experiments.hpp"
#include "oem/io/csv.hpp"
#include "oem/io/svg_plot.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

oem::harness::ExperimentConfig load_config(const std::string& path, std::optional<std::uint64_t> seed, int threads) {
    std::ifstream in(path);
    if (!in) throw oem::IoError("cannot open config " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    auto cfg = oem::harness::parse_config_text(buf.str());
    if (seed) cfg.seed = *seed;
    cfg.threads = threads;
    for (const auto& w : cfg.warnings) std::cerr << "warning: " << w << '\n';
    return cfg;
}

void report_warnings(const oem::Warnings& warnings, std::size_t already_printed) {
    const std::size_t limit = 20;
    std::size_t shown = 0;
    for (std::size_t i = already_printed; i < warnings.size() && shown < limit; ++i, ++shown)
        std::cerr << "warning: " << warnings[i] << '\n';
    if (warnings.size() - already_printed > limit)
        std::cerr << "warning: ... " << warnings.size() - already_printed - limit << " more\n";
}

int ingest_check(const std::string& path, const std::string& family) {
    const auto table = oem::io::read_numeric_csv_file(path);
    if (family == "mixture") {
        const auto data = oem::io::to_observations(table);
        std::cout << "observations: " << data.size() << "\ndim: " << data.front().size() << '\n';
    } else if (family == "hmm" || family == "kalman") {
        const auto seqs = oem::io::to_sequences(table);
        std::size_t total = 0, shortest = seqs.front().size(), longest = 0;
        for (const auto& s : seqs) {
            total += s.size();
            shortest = std::min(shortest, s.size());
            longest = std::max(longest, s.size());
        }
        std::cout << "sequences: " << seqs.size() << "\nobservations: " << total << "\ndim: " << seqs.front().front().size()
                  << "\nmin_length: " << shortest << "\nmax_length: " << longest << '\n';
        if (family == "kalman" && shortest != longest)
            throw oem::ParseError(path + ": kalman sequences must all have the same length");
    } else {
        const auto docs = oem::io::to_counts(table);
        std::cout << "documents: " << docs.size() << "\ndim: " << docs.front().dim()
                  << "\nmean_length: " << oem::io::format_double(oem::mean_document_length(docs)) << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Divergence-based online EM: experiments and tools", "oem"};
    bool print_schema = false;
    app.add_flag("--print-schema", print_schema, "Print the JSON schema of experiment configs and exit");

    std::string config_path, out_path, title, input, family = "mixture";
    std::optional<std::uint64_t> seed;
    int threads = 1;

    auto* gen = app.add_subcommand("generate", "Write a synthetic dataset and its ground-truth model");
    gen->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    gen->add_option("--out", out_path, "Output directory")->required();
    gen->add_option("--seed", seed, "Override the config seed");

    auto* run = app.add_subcommand("run", "Run an experiment and write result CSVs");
    run->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out_path, "Output directory")->required();
    run->add_option("--seed", seed, "Override the config seed");
    run->add_option("--threads", threads, "Worker threads for distributed mode")->check(CLI::PositiveNumber);

    auto* plot = app.add_subcommand("plot", "Render a curves CSV (method,t,nll) as SVG");
    plot->add_option("curves", input, "curves.csv")->required();
    plot->add_option("--out", out_path, "Output SVG path")->required();
    plot->add_option("--title", title, "Plot title");

    auto* check = app.add_subcommand("ingest-check", "Parse a dataset CSV and report its shape");
    check->add_option("path", input, "Dataset CSV")->required();
    check->add_option("--family", family, "Dataset kind")
        ->check(CLI::IsMember({"mixture", "hmm", "kalman", "dirichlet"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (print_schema) {
            std::cout << oem::harness::kConfigSchema;
            return 0;
        }
        if (*gen) {
            const auto cfg = load_config(config_path, seed, 1);
            oem::harness::generate(cfg, out_path);
            std::cout << "wrote " << out_path << '\n';
            return 0;
        }
        if (*run) {
            const auto cfg = load_config(config_path, seed, threads);
            const auto result = oem::harness::run_experiment(cfg);
            report_warnings(result.warnings, cfg.warnings.size());
            oem::harness::write_results(result, out_path);
            for (const auto& m : result.methods) {
                double sum = 0.0;
                for (double v : m.final_nll) sum += v;
                std::cout << m.method << ": mean final nll " << sum / static_cast<double>(m.final_nll.size()) << " over "
                          << m.final_nll.size() << " repeat(s)\n";
            }
            return 0;
        }
        if (*plot) {
            oem::io::plot_curves(input, out_path, title);
            std::cout << "wrote " << out_path << '\n';
            return 0;
        }
        if (*check) return ingest_check(input, family);
        std::cout << app.help();
        return kExitConfig;
    } catch (const oem::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const oem::InvalidArgument& e) {
        std::cerr << "invalid argument: " << e.what() << '\n';
        return kExitConfig;
    } catch (const oem::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const oem::ParseError& e) {
        std::cerr << "parse error: " << e.what() << '\n';
        return kExitIo;
    } catch (const oem::IoError& e) {
        std::cerr << "i/o error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
