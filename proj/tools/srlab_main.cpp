// SPDX-License-Identifier: Apache-2.0
//
// srlab: run quantized-SGD experiment sweeps and verification probes.
//
//   srlab run <spec-file>            train every sweep cell, write CSVs
//   srlab verify-lemmas <spec-file>  run the statistical probe battery
//   srlab quantize <x> --grid u:0.5 --mode sr --seed 7
//
// Exit codes: 0 all cells and gates pass, 1 a cell or gate failed,
// 2 usage/config error. SRLAB_WORKERS caps sweep parallelism.

#include "srlab/experiment.hpp"
#include "srlab/quant.hpp"
#include "srlab/text.hpp"

#include <CLI11.hpp>

#include <exception>
#include <iostream>
#include <string>

namespace {

int cmd_run(const std::string& spec_path) {
    const srlab::exp::ExperimentSpec spec = srlab::exp::parse_spec_file(spec_path);
    const srlab::exp::ExperimentResult result = srlab::exp::run_experiment(spec);
    for (const auto& cell : result.cells) {
        std::cout << cell.run_id << ": " << cell.status;
        if (!cell.error.empty()) std::cout << " (" << cell.error << ")";
        std::cout << "\n";
    }
    if (spec.lemmas)
        std::cout << "lemma gates: " << (result.lemmas_pass ? "pass" : "FAIL") << "\n";
    std::cout << "outputs written to " << spec.outputs << "\n";
    return result.all_ok() ? 0 : 1;
}

int cmd_verify(const std::string& spec_path) {
    const srlab::exp::ExperimentSpec spec = srlab::exp::parse_spec_file(spec_path);
    const bool pass = srlab::exp::verify_lemmas(spec);
    std::cout << "lemma gates: " << (pass ? "pass" : "FAIL") << " (see " << spec.outputs
              << "/lemmas.csv)\n";
    return pass ? 0 : 1;
}

int cmd_quantize(double x, const std::string& grid_spec, const std::string& mode,
                 std::uint64_t seed, const std::string& source_spec) {
    const srlab::quant::QuantGrid grid = srlab::quant::parse_grid(grid_spec);
    double result = 0.0;
    if (mode == "rtn") {
        result = srlab::quant::rtn(x, grid);
    } else if (mode == "sr") {
        const srlab::quant::ThresholdSource source =
            source_spec.empty() ? srlab::quant::ThresholdSource::prng(seed)
                                : srlab::quant::parse_threshold_source(source_spec);
        srlab::quant::ThresholdStream stream = srlab::quant::ThresholdStream::from_source(source);
        result = srlab::quant::sr(x, grid, stream);
    } else {
        throw std::invalid_argument("mode must be rtn or sr, got '" + mode + "'");
    }
    std::cout << srlab::text::format_double(result) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"stochastic-rounding mixed-precision SGD lab"};
    app.require_subcommand(1);

    std::string spec_path;
    auto* run = app.add_subcommand("run", "train every cell of a sweep spec");
    run->add_option("spec", spec_path, "spec file")->required();

    std::string verify_path;
    auto* verify = app.add_subcommand("verify-lemmas", "run the statistical probe battery");
    verify->add_option("spec", verify_path, "spec file")->required();

    double x = 0.0;
    std::string grid_spec, source_spec;
    std::string mode = "rtn";
    std::uint64_t seed = 0;
    auto* quantize = app.add_subcommand("quantize", "quantize one value");
    quantize->add_option("x", x, "value to quantize")->required();
    quantize->add_option("--grid", grid_spec, "grid spec: u:<step> | fp:E<e>M<m> | id")->required();
    quantize->add_option("--mode", mode, "rtn | sr");
    quantize->add_option("--seed", seed, "threshold seed for sr");
    quantize->add_option("--source", source_spec, "threshold source: prng:<seed> | lfsr6:<state>");

    try {
        app.parse(argc, argv);
        if (*run) return cmd_run(spec_path);
        if (*verify) return cmd_verify(verify_path);
        if (*quantize) return cmd_quantize(x, grid_spec, mode, seed, source_spec);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
