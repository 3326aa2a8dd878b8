// pennma: simulate, fit, sweep, bootstrap and score penalized IPD network meta-analyses.

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "pennma/data_model.hpp"
#include "pennma/evaluation.hpp"
#include "pennma/parallel.hpp"
#include "pennma/report_io.hpp"
#include "pennma/selection.hpp"
#include "pennma/simulator.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace pennma;

namespace {

constexpr const char* version = "0.1.0";

// --threads beats PENNMA_THREADS beats the core count
unsigned resolve_threads(unsigned requested)
{
    if (requested > 0) return requested;
    if (const char* env = std::getenv("PENNMA_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) return static_cast<unsigned>(v);
        } catch (const std::exception&) {
        }
        throw ConfigError(std::string("PENNMA_THREADS must be a positive integer, got '") + env + "'");
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void ensure_dir(const std::string& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create directory '" + dir + "': " + ec.message());
}

std::vector<double> parse_doubles(const std::string& list, const std::string& what)
{
    std::vector<double> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError(what + ": '" + item + "' is not a number");
        }
    }
    if (out.empty()) throw ConfigError(what + ": empty list");
    return out;
}

std::vector<std::string> parse_words(const std::string& list)
{
    std::vector<std::string> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

struct FitFlags
{
    std::string method = "het";
    std::size_t periods = 6;
    std::size_t grid_points = 30;
    std::string boundaries = "quantiles";
    std::string heterogeneity = "per-contrast";
};

void add_fit_flags(CLI::App* cmd, FitFlags& f)
{
    cmd->add_option("--K", f.periods, "Number of baseline periods")->check(CLI::PositiveNumber);
    cmd->add_option("--grid-points", f.grid_points, "Number of lambda_L1 grid points")->check(CLI::PositiveNumber);
    cmd->add_option("--boundaries", f.boundaries,
                    "Period boundaries: 'quantiles' (event-time quantiles) or a comma list of cut points");
    cmd->add_option("--heterogeneity", f.heterogeneity, "Heterogeneity for the het method: per-contrast or common");
}

PipelineConfig pipeline_of(const FitFlags& f, CollapseMode collapse)
{
    PipelineConfig pc;
    pc.periods = f.periods;
    pc.collapse = collapse;
    pc.selection.grid_points = f.grid_points;
    if (f.boundaries != "quantiles") {
        pc.strategy = BoundaryStrategy::explicit_cuts;
        pc.cut_points = parse_doubles(f.boundaries, "--boundaries");
        pc.periods = pc.cut_points.size() + 1;
    }
    return pc;
}

SelectionRun run_method(const std::string& method, const IpdDataset& data, const PipelineConfig& pc, ModelConfig model)
{
    if (method == "het") return run_het_adlasso(data, pc, model);
    if (method == "fx") return run_fx_adlasso(data, pc, model);
    throw ConfigError("unknown method '" + method + "' (valid: het, fx)");
}

CovariateSchema schema_for(const std::string& schema_path, const std::string& ipd_path)
{
    if (!schema_path.empty()) return load_schema(schema_path);
    const auto sibling = fs::path(ipd_path).parent_path() / "schema.json";
    if (fs::exists(sibling)) return load_schema(sibling.string());
    return CovariateSchema{};
}

std::string simulation_comment(const ScenarioSpec& spec, std::uint64_t seed)
{
    return "scenario=" + spec.id + " tau=" + format_double(spec.tau) +
           " trials_per_edge=" + std::to_string(spec.trials_per_edge) + " seed=" + std::to_string(seed);
}

// Seed of replicate r in sweep cell c; recorded in the manifest.
std::uint64_t replicate_seed(std::uint64_t base, std::size_t cell, std::size_t rep)
{
    std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                      static_cast<std::uint32_t>(cell), static_cast<std::uint32_t>(rep)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

int cmd_simulate(const std::string& scenario, double tau, int tpe, std::uint64_t seed, const std::string& out)
{
    const auto spec = ScenarioSpec::preset(scenario, tau, tpe);
    const auto sim = simulate_dataset(spec, seed);
    ensure_dir(out);
    save_ipd(sim.dataset, (fs::path(out) / "ipd.csv").string(), simulation_comment(spec, seed));
    save_schema(sim.dataset.schema, (fs::path(out) / "schema.json").string());
    write_text_file((fs::path(out) / "truth.json").string(), truth_to_json(spec, sim.truth, seed));
    return 0;
}

int cmd_fit(const std::string& ipd, const std::string& schema_path, const std::string& model_path, const FitFlags& f,
            bool collapse, const std::string& out)
{
    const auto data = load_ipd(ipd, schema_for(schema_path, ipd));
    ModelConfig model = model_path.empty() ? ModelConfig{} : parse_model_config(read_text_file(model_path));
    model.heterogeneity = heterogeneity_from_string(f.heterogeneity);
    const auto mode = collapse ? CollapseMode::always : CollapseMode::never;
    const auto run = run_method(f.method, data, pipeline_of(f, mode), model);
    ensure_dir(out);
    write_text_file((fs::path(out) / "report.json").string(), report_to_json(run, mode));
    write_text_file((fs::path(out) / "coefficients.csv").string(), coefficients_csv(run));
    for (const auto& w : run.report.warnings) std::cerr << "warning: " << w << "\n";
    return 0;
}

int cmd_bootstrap(const std::string& ipd, const std::string& schema_path, const std::string& report_path,
                  std::size_t B, std::uint64_t seed, const std::string& out, unsigned threads)
{
    const auto data = load_ipd(ipd, schema_for(schema_path, ipd));
    const auto rep = parse_report(read_text_file(report_path));
    PeriodGrid grid{rep.cut_points};
    grid.validate();
    const auto result = bootstrap_ci(data, grid, rep.model, rep.collapse, rep.selected, rep.theta_names(),
                                     rep.theta_estimates(), rep.calibration(), B, seed, SelectionOptions{}, threads);
    std::cerr << "bootstrap: " << result.succeeded << " of " << result.requested << " refits succeeded\n";
    if (2 * result.failed > result.requested) {
        std::cerr << "error: bootstrap: " << result.failed << " of " << result.requested
                  << " resample refits failed (more than 50%)\n";
        return 3;
    }
    const fs::path p(out);
    if (p.has_parent_path()) ensure_dir(p.parent_path().string());
    write_text_file(out, intervals_csv(result));
    return 0;
}

int cmd_score(const std::string& report_path, const std::string& truth_path, const std::string& out)
{
    const auto rep = parse_report(read_text_file(report_path));
    const auto truth = truth_from_json(read_text_file(truth_path));
    const auto score = score_replicate(rep.lasso_names, rep.selected, rep.beta_estimates(), rep.tau_hat, truth);
    const auto text = score_to_json(score);
    if (out.empty()) {
        std::cout << text;
    } else {
        write_text_file(out, text);
    }
    return 0;
}

struct SweepFlags
{
    std::string scenarios = "S1";
    std::string taus = "0.1";
    std::string trials_per_edge = "3";
    std::string methods = "het,fx";
    std::size_t replicates = 20;
    std::uint64_t seed = 0;
};

int cmd_sweep(const SweepFlags& s, const FitFlags& f, const std::string& out, unsigned threads)
{
    const auto start = std::chrono::steady_clock::now();
    const auto scenarios = parse_words(s.scenarios);
    const auto taus = parse_doubles(s.taus, "--taus");
    std::vector<int> tpes;
    for (double x : parse_doubles(s.trials_per_edge, "--trials-per-edge")) tpes.push_back(static_cast<int>(x));
    const auto methods = parse_words(s.methods);
    if (s.replicates < 1) throw ConfigError("--replicates must be >= 1");
    for (const auto& m : methods) {
        if (m != "het" && m != "fx") throw ConfigError("unknown method '" + m + "' (valid: het, fx)");
    }

    struct Cell { ScenarioSpec spec; };
    std::vector<Cell> cells;
    for (const auto& sc : scenarios) {
        for (double tau : taus) {
            for (int tpe : tpes) cells.push_back({ScenarioSpec::preset(sc, tau, tpe)});
        }
    }
    struct Job { std::size_t cell, rep; std::uint64_t seed; };
    std::vector<Job> jobs;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        for (std::size_t r = 0; r < s.replicates; ++r) jobs.push_back({c, r, replicate_seed(s.seed, c, r)});
    }

    // one result slot per (job, method); filled independently of scheduling order
    struct Outcome { std::optional<ReplicateScore> score; std::string error; };
    std::vector<std::vector<Outcome>> results(jobs.size(), std::vector<Outcome>(methods.size()));
    const auto pc = pipeline_of(f, CollapseMode::when_categorical);
    ModelConfig model;
    model.heterogeneity = heterogeneity_from_string(f.heterogeneity);
    std::mutex log_mutex;
    parallel_for(jobs.size(), threads, [&](std::size_t i) {
        const auto& job = jobs[i];
        std::optional<SimulatedData> sim;
        try {
            sim = simulate_dataset(cells[job.cell].spec, job.seed);
        } catch (const std::exception& e) {
            for (auto& o : results[i]) o.error = std::string("simulate: ") + e.what();
        }
        for (std::size_t m = 0; sim && m < methods.size(); ++m) {
            try {
                const auto run = run_method(methods[m], sim->dataset, pc, model);
                results[i][m].score = score_replicate(run.report, sim->truth);
            } catch (const std::exception& e) {
                results[i][m].error = e.what();
            }
        }
        for (std::size_t m = 0; m < methods.size(); ++m) {
            if (!results[i][m].error.empty()) {
                std::lock_guard<std::mutex> lock(log_mutex);
                std::cerr << "replicate failed (" << cells[job.cell].spec.id << ", seed " << job.seed << ", "
                          << methods[m] << "): " << results[i][m].error << "\n";
            }
        }
    });

    ensure_dir(out);
    std::ostringstream raw, metrics;
    raw << "scenario,tau,trials_per_edge,method,replicate,seed,metric,value\n";
    metrics << "scenario,tau,trials_per_edge,method,metric,value\n";
    json manifest;
    manifest["pennma_version"] = version;
    manifest["eigen_version"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                std::to_string(EIGEN_MINOR_VERSION);
    manifest["config"] = {{"scenarios", scenarios}, {"taus", taus}, {"trials_per_edge", tpes}, {"methods", methods},
                          {"replicates", s.replicates}, {"seed", s.seed}, {"periods", f.periods},
                          {"grid_points", f.grid_points}, {"boundaries", f.boundaries},
                          {"heterogeneity", f.heterogeneity},
                          {"bic_sample_size", "person-period rows of the uncollapsed expansion"}};
    json runs = json::array();
    std::size_t failures = 0;
    for (std::size_t c = 0; c < cells.size(); ++c) {
        const auto& spec = cells[c].spec;
        const std::string prefix = spec.id + "," + format_double(spec.tau) + "," + std::to_string(spec.trials_per_edge) + ",";
        for (std::size_t m = 0; m < methods.size(); ++m) {
            std::vector<ReplicateScore> scores;
            for (std::size_t i = 0; i < jobs.size(); ++i) {
                if (jobs[i].cell != c) continue;
                const auto& o = results[i][m];
                if (!o.score) continue;
                for (const auto& [k, v] : replicate_metrics(*o.score)) {
                    raw << prefix << methods[m] << ',' << jobs[i].rep << ',' << jobs[i].seed << ',' << k << ','
                        << format_double(v) << '\n';
                }
                scores.push_back(*o.score);
            }
            if (scores.empty()) continue;
            for (const auto& [k, v] : aggregate(scores).metrics) {
                metrics << prefix << methods[m] << ',' << k << ',' << format_double(v) << '\n';
            }
        }
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            if (jobs[i].cell != c) continue;
            json entry{{"scenario", spec.id}, {"tau", spec.tau}, {"trials_per_edge", spec.trials_per_edge},
                       {"replicate", jobs[i].rep}, {"seed", jobs[i].seed}};
            json status = json::object();
            for (std::size_t m = 0; m < methods.size(); ++m) {
                const auto& o = results[i][m];
                status[methods[m]] = o.score ? "ok" : o.error;
                if (!o.score) ++failures;
            }
            entry["status"] = status;
            runs.push_back(entry);
        }
    }
    manifest["replicates"] = runs;
    manifest["failures"] = failures;
    // scheduling-dependent fields live here and nowhere else
    manifest["runtime"] = {
        {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()},
        {"threads", threads}};
    write_text_file((fs::path(out) / "raw.csv").string(), raw.str());
    write_text_file((fs::path(out) / "metrics.csv").string(), metrics.str());
    write_text_file((fs::path(out) / "manifest.json").string(), manifest.dump(2) + "\n");
    if (failures) std::cerr << "sweep: " << failures << " replicate fits failed\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Penalized IPD network meta-analysis of survival data"};
    app.name("pennma");
    app.set_version_flag("--version", version);
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();
    unsigned threads_flag = 0;
    app.add_option("--threads", threads_flag, "Worker threads (0: PENNMA_THREADS or all cores)");

    // simulate
    auto* sim = app.add_subcommand("simulate", "Simulate one dataset from a scenario");
    std::string scenario;
    double tau = 0.1;
    int tpe = 3;
    std::uint64_t seed = 0;
    std::string out;
    sim->add_option("--scenario", scenario, "Scenario id (S1..S5)")->required();
    sim->add_option("--tau", tau, "Between-trial SD of treatment effects")->check(CLI::NonNegativeNumber);
    sim->add_option("--trials-per-edge", tpe, "Trials per network edge")->check(CLI::PositiveNumber);
    sim->add_option("--seed", seed, "Random seed")->required();
    sim->add_option("--out", out, "Output directory")->required();

    // fit
    auto* fit = app.add_subcommand("fit", "Select and fit a model on an IPD dataset");
    std::string ipd, schema, model_path, fit_out;
    FitFlags fit_flags;
    bool collapse = false;
    fit->add_option("--ipd", ipd, "IPD CSV file")->required()->check(CLI::ExistingFile);
    fit->add_option("--schema", schema, "Covariate schema JSON (default: schema.json next to the IPD file)")
        ->check(CLI::ExistingFile);
    fit->add_option("--model", model_path, "Model configuration JSON")->check(CLI::ExistingFile);
    fit->add_option("--method", fit_flags.method, "Selection method: het or fx");
    add_fit_flags(fit, fit_flags);
    fit->add_flag("--collapse", collapse, "Collapse identical risk rows (categorical covariates only)");
    fit->add_option("--out", fit_out, "Output directory")->required();

    // sweep
    auto* sweep = app.add_subcommand("sweep", "Run a simulation study over scenarios, tau values and methods");
    SweepFlags sweep_flags;
    FitFlags sweep_fit;
    std::string sweep_out;
    sweep->add_option("--scenarios", sweep_flags.scenarios, "Comma list of scenario ids");
    sweep->add_option("--taus", sweep_flags.taus, "Comma list of tau values");
    sweep->add_option("--trials-per-edge", sweep_flags.trials_per_edge, "Comma list of trials per edge");
    sweep->add_option("--methods", sweep_flags.methods, "Comma list of methods");
    sweep->add_option("--replicates", sweep_flags.replicates, "Replicates per cell")->check(CLI::PositiveNumber);
    sweep->add_option("--seed", sweep_flags.seed, "Base random seed")->required();
    add_fit_flags(sweep, sweep_fit);
    sweep->add_option("--out", sweep_out, "Output directory")->required();

    // bootstrap
    auto* boot = app.add_subcommand("bootstrap", "Percentile intervals for a fitted model");
    std::string boot_ipd, boot_schema, boot_report, boot_out;
    std::size_t B = 200;
    std::uint64_t boot_seed = 0;
    boot->add_option("--ipd", boot_ipd, "IPD CSV file")->required()->check(CLI::ExistingFile);
    boot->add_option("--schema", boot_schema, "Covariate schema JSON (default: schema.json next to the IPD file)")
        ->check(CLI::ExistingFile);
    boot->add_option("--report", boot_report, "report.json from fit")->required()->check(CLI::ExistingFile);
    boot->add_option("--B", B, "Number of resamples")->check(CLI::Range(std::size_t{2}, std::size_t{1000000}));
    boot->add_option("--seed", boot_seed, "Random seed")->required();
    boot->add_option("--out", boot_out, "Output CSV file")->required();

    // score
    auto* score = app.add_subcommand("score", "Score a report against simulation truth");
    std::string score_report, score_truth, score_out;
    score->add_option("--report", score_report, "report.json from fit")->required()->check(CLI::ExistingFile);
    score->add_option("--truth", score_truth, "truth.json from simulate")->required()->check(CLI::ExistingFile);
    score->add_option("--out", score_out, "Output JSON file (default: stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        const unsigned threads = resolve_threads(threads_flag);
        if (*sim) return cmd_simulate(scenario, tau, tpe, seed, out);
        if (*fit) return cmd_fit(ipd, schema, model_path, fit_flags, collapse, fit_out);
        if (*sweep) return cmd_sweep(sweep_flags, sweep_fit, sweep_out, threads);
        if (*boot) return cmd_bootstrap(boot_ipd, boot_schema, boot_report, B, boot_seed, boot_out, threads);
        if (*score) return cmd_score(score_report, score_truth, score_out);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
