#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "panelsel/json_io.hpp"
#include "panelsel/parallel.hpp"

namespace {

using namespace panelsel;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;

struct Options {
    std::string input;
    std::string out;
    std::string format = "json";
    std::string method = "ls";
    int K = 2;
    std::uint64_t seed = 1;
    int s_max = 100;
    std::string pair = "1,2";
    int covariate = 0;  // 1-based; 0 means joint test
    double alpha = 0.05;
    double phi = -1.0;
    int dgp = 1;
    int N = 60;
    int T = 15;
    double delta = 0.0;
    double kappa = 0.0;
    int p = 4;
    int M = 1000;
    std::string emit_data;
    std::string mode = "auto";  // simulate: auto | size | power
};

PanelDataset read_panel(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open input file '" + path + "'");
    return load_panel(in);
}

std::pair<int, int> parse_pair(const std::string& text, int K) {
    int k = 0, kp = 0;
    char sep = 0;
    std::istringstream ss(text);
    if (!(ss >> k >> sep >> kp) || (sep != ',' && sep != '-'))
        throw InvalidSpec("cannot parse --pair '" + text + "' (expected k,k')");
    if (k < 1 || kp < 1 || k > K || kp > K || k == kp)
        throw InvalidPair("pair (" + text + ") invalid for K=" + std::to_string(K));
    return {k - 1, kp - 1};
}

void emit(const Options& opt, const json& payload) {
    if (opt.out.empty()) {
        std::cout << payload.dump(2) << std::endl;
        return;
    }
    std::ofstream out(opt.out);
    if (!out) throw ParseError("cannot open output file '" + opt.out + "'");
    out << payload.dump(2) << std::endl;
}

struct Fitted {
    PanelDataset data;
    std::vector<IndividualFit> fits;
    ClusterRun run;
    Matrix sigma;
};

Fitted fit_pipeline(const Options& opt) {
    Fitted f{read_panel(opt.input), {}, {}, {}};
    if (opt.K < 1 || opt.K > f.data.n_units())
        throw KTooLarge("K=" + std::to_string(opt.K) + " exceeds N=" +
                        std::to_string(f.data.n_units()));
    if (opt.method == "gmm") {
        if (!f.data.has_instruments())
            throw InvalidSpec("--method gmm requires instrument columns z1..zq");
        f.fits = fit_all_gmm(first_difference(f.data));
    } else {
        f.fits = fit_all_ols(within_demean(f.data));
    }
    f.run = run_kmeans(f.fits, opt.K, opt.seed, opt.s_max);
    f.sigma = plugin_covariance(f.fits, f.run.final_partition);
    return f;
}

int cmd_fit(const Options& opt) {
    Fitted f = fit_pipeline(opt);
    json out = cluster_run_to_json(f.run, f.data.units);

    const int p = static_cast<int>(f.fits[0].beta.size());
    json se = json::array();
    for (int k = 0; k < f.run.final_partition.K; ++k) {
        json row = json::array();
        for (int j = 0; j < p; ++j)
            row.push_back(std::sqrt(f.sigma(k * p + j, k * p + j)));
        se.push_back(std::move(row));
    }
    out["group_standard_errors"] = se;

    json fits = json::array();
    for (int i = 0; i < f.data.n_units(); ++i)
        fits.push_back(fit_to_json(f.data.units[i], f.fits[i]));
    out["fits"] = fits;
    out["method"] = opt.method;
    emit(opt, out);
    return kExitOk;
}

int cmd_test(const Options& opt) {
    Fitted f = fit_pipeline(opt);
    auto [k, kp] = parse_pair(opt.pair, opt.K);
    SelectiveTestResult result =
        opt.covariate > 0
            ? selective_test_covariate(f.fits, f.run, k, kp, opt.covariate - 1, f.sigma)
            : selective_test(f.fits, f.run, k, kp, f.sigma);
    json out = test_result_to_json(result, opt.method);
    out["pair"] = {k + 1, kp + 1};
    emit(opt, out);
    return kExitOk;
}

int cmd_perturb(const Options& opt) {
    if (opt.phi < 0) throw InvalidSpec("--phi must be a nonnegative number");
    Fitted f = fit_pipeline(opt);
    auto [k, kp] = parse_pair(opt.pair, opt.K);

    Contrast contrast = build_contrast(f.fits, f.run, k, kp);
    PerturbationPath path = projection_path(f.fits, contrast);
    Matrix betas = path.betas_at(opt.phi);
    bool same = replay_matches_trace(f.fits, betas, f.run);
    IntervalUnion set = truncation_set(f.fits, f.run, path);

    json blocks = json::array();
    for (int i = 0; i < f.data.n_units(); ++i) {
        json beta = json::array();
        for (int j = 0; j < betas.cols(); ++j) beta.push_back(betas(i, j));
        blocks.push_back(json{{"unit", f.data.units[i]}, {"beta", std::move(beta)}});
    }
    emit(opt, json{{"phi", opt.phi},
                   {"observed", path.observed},
                   {"same_clustering", same},
                   {"truncation", interval_union_to_json(set)},
                   {"betas", std::move(blocks)}});
    return kExitOk;
}

int cmd_simulate(const Options& opt) {
    DgpSpec spec;
    if (opt.dgp < 1 || opt.dgp > 6) throw InvalidSpec("--dgp must be in 1..6");
    spec.id = static_cast<Dgp>(opt.dgp);
    spec.N = opt.N;
    spec.T = opt.T;
    spec.delta = opt.delta;
    spec.kappa = opt.kappa;
    spec.p = spec.id == Dgp::WideP6 ? 6 : (spec.id == Dgp::WideP4 ? 4 : opt.p);
    spec.seed = opt.seed;

    if (!opt.emit_data.empty()) {
        std::ofstream out(opt.emit_data);
        if (!out) throw ParseError("cannot open '" + opt.emit_data + "'");
        write_panel_csv(out, dgp_generate(spec));
    }

    ExperimentConfig config;
    config.K = opt.K;
    config.M = opt.M;
    config.alpha = opt.alpha;
    config.s_max = opt.s_max;
    config.method = opt.method == "gmm" ? Method::Gmm : Method::LeastSquares;
    config.covariate_test = opt.covariate > 0 ||
                            (spec.id == Dgp::WideP4 || spec.id == Dgp::WideP6);

    bool power = opt.mode == "power" || (opt.mode == "auto" && spec.delta > 0.0);
    ExperimentReport report = power ? run_power_experiment(spec, config)
                                    : run_size_experiment(spec, config);

    json summary = experiment_report_to_json(report);
    summary["dgp"] = opt.dgp;
    summary["method"] = opt.method;
    summary["N"] = spec.N;
    summary["T"] = spec.T;
    summary["delta"] = spec.delta;
    summary["kappa"] = spec.kappa;

    if (!opt.out.empty()) {
        std::ofstream csv(opt.out + ".csv");
        if (!csv) throw ParseError("cannot open '" + opt.out + ".csv'");
        write_replication_csv(csv, report);
        std::ofstream js(opt.out + ".json");
        js << summary.dump(2) << std::endl;
    }
    std::cout << summary.dump(2) << std::endl;
    return kExitOk;
}

int cmd_qq(const Options& opt) {
    std::ifstream in(opt.input);
    if (!in) throw ParseError("cannot open input file '" + opt.input + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty input");

    // Accept either a replication CSV (selects the p_selective column) or a
    // headerless single column of values.
    std::vector<double> values;
    int column = -1;
    {
        std::istringstream header(line);
        std::string field;
        int idx = 0;
        while (std::getline(header, field, ',')) {
            if (field == "p_selective") column = idx;
            ++idx;
        }
    }
    if (column < 0) {
        try {
            values.push_back(std::stod(line));
            column = 0;
        } catch (const std::exception&) {
            throw ParseError("input has neither a p_selective column nor plain numbers");
        }
        while (std::getline(in, line))
            if (!line.empty()) values.push_back(std::stod(line));
    } else {
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::istringstream row(line);
            std::string field;
            for (int c = 0; c <= column; ++c) std::getline(row, field, ',');
            values.push_back(std::stod(field));
        }
    }

    auto pairs = qq_data(values);
    if (opt.format == "csv") {
        if (opt.out.empty()) {
            write_qq_csv(std::cout, pairs);
        } else {
            std::ofstream out(opt.out);
            write_qq_csv(out, pairs);
        }
        return kExitOk;
    }
    json out = json::array();
    for (const auto& [u, p] : pairs) out.push_back({u, p});
    emit(opt, json{{"ks_stat", ks_uniform_distance(values)}, {"qq", std::move(out)}});
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Group-structure estimation and selective inference for linear panels"};
    app.require_subcommand(1);

    Options opt;
    auto add_common = [&](CLI::App* sub, bool needs_input) {
        if (needs_input)
            sub->add_option("--input", opt.input, "CSV panel (unit,time,y,x1..[,z1..])")
                ->required();
        sub->add_option("--K", opt.K, "number of clusters");
        sub->add_option("--seed", opt.seed, "random seed");
        sub->add_option("--method", opt.method, "ls | gmm")
            ->check(CLI::IsMember({"ls", "gmm"}));
        sub->add_option("--smax", opt.s_max, "iteration cap");
        sub->add_option("--out", opt.out, "output path (default stdout)");
        sub->add_option("--format", opt.format, "json | csv")
            ->check(CLI::IsMember({"json", "csv"}));
    };

    CLI::App* fit = app.add_subcommand("fit", "cluster a panel and report group estimates");
    add_common(fit, true);

    CLI::App* test = app.add_subcommand("test", "selective and naive tests for a pair");
    add_common(test, true);
    test->add_option("--pair", opt.pair, "tested pair, e.g. 1,2");
    test->add_option("--covariate", opt.covariate, "restrict to coefficient j (1-based)");
    test->add_option("--alpha", opt.alpha, "significance level");

    CLI::App* sim = app.add_subcommand("simulate", "run a seeded experiment");
    add_common(sim, false);
    sim->add_option("--dgp", opt.dgp, "design 1..6")->required();
    sim->add_option("--N", opt.N, "units (multiple of 3)");
    sim->add_option("--T", opt.T, "periods");
    sim->add_option("--delta", opt.delta, "group separation");
    sim->add_option("--kappa", opt.kappa, "AR spread (design 4)");
    sim->add_option("--p", opt.p, "regressors (designs 5-6)");
    sim->add_option("--M", opt.M, "replications");
    sim->add_option("--alpha", opt.alpha, "significance level");
    sim->add_option("--covariate", opt.covariate, "force the covariate test");
    sim->add_option("--mode", opt.mode, "auto | size | power")
        ->check(CLI::IsMember({"auto", "size", "power"}));
    sim->add_option("--emit-data", opt.emit_data, "write one generated panel CSV");

    CLI::App* perturb = app.add_subcommand("perturb", "emit B(phi) and the recluster verdict");
    add_common(perturb, true);
    perturb->add_option("--pair", opt.pair, "tested pair, e.g. 1,2");
    perturb->add_option("--phi", opt.phi, "path parameter")->required();

    CLI::App* qq = app.add_subcommand("qq", "QQ plot data from p-values");
    qq->add_option("--input", opt.input, "replication CSV or plain p-value column")
        ->required();
    qq->add_option("--out", opt.out, "output path (default stdout)");
    qq->add_option("--format", opt.format, "json | csv")
        ->check(CLI::IsMember({"json", "csv"}));

    CLI11_PARSE(app, argc, argv);

    try {
        if (fit->parsed()) return cmd_fit(opt);
        if (test->parsed()) return cmd_test(opt);
        if (sim->parsed()) return cmd_simulate(opt);
        if (perturb->parsed()) return cmd_perturb(opt);
        if (qq->parsed()) return cmd_qq(opt);
    } catch (const DegenerateDirection& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitNumeric;
    } catch (const ObservedStatExcluded& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitNumeric;
    } catch (const StatOutsideSupport& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitNumeric;
    } catch (const ZeroMassSupport& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitNumeric;
    } catch (const SingularCovariance& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitNumeric;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return kExitInput;
    }
    return kExitOk;
}
