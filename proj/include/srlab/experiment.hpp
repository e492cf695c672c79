// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration, dataset generation and the sweep runner.
//
// Config files are plain key/value text: one `key = value` per line, lists
// as `key = [a, b, c]`, comments from '#'. Unknown keys are rejected with
// their line number. The sweep is the Cartesian product of modes, formats,
// batch sizes, learning rates and seeds; each cell derives a distinct seed
// via rng::seed_mix(seed value, coordinate indexes).

#pragma once

#include "srlab/net.hpp"
#include "srlab/statlab.hpp"
#include "srlab/trainer.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace srlab::exp {

enum class TaskKind { SyntheticRegression, TwoBlobClassification, ExternalCsv };

struct TaskSpec {
    TaskKind kind = TaskKind::SyntheticRegression;
    int samples = 256;
    int d_in = 8;
    int d_out = 4;
    double noise_sd = 0.05;
    std::string csv_path;
    int csv_targets = 1;
};

struct ExperimentSpec {
    std::string name;
    TaskSpec task;
    std::vector<int> hidden = {16};
    net::Activation activation = net::Activation::Relu;
    net::LossKind loss = net::LossKind::Mse;
    std::vector<trainer::TrainMode> modes = {trainer::TrainMode::full_precision()};
    std::vector<quant::QuantGrid> formats = {quant::QuantGrid::identity()};
    std::vector<int> batch_sizes = {8};
    std::vector<double> learning_rates = {0.01};
    std::vector<std::uint64_t> seeds = {1};
    int steps = 500;
    int eval_every = 20;
    quant::RoundMode weight_rounding = quant::RoundMode::Sr;
    bool split_weight_thresholds = false;
    std::uint64_t data_seed = 1;
    std::string outputs = "out";
    bool lemmas = false;
    long lemma_trials = 20000;

    std::size_t cell_count() const {
        return modes.size() * formats.size() * batch_sizes.size() * learning_rates.size() *
               seeds.size();
    }
};

// Parses and validates a config. Throws std::invalid_argument carrying the
// line number for syntax errors and the field name for semantic ones.
ExperimentSpec parse_spec(const std::string& spec_text);
ExperimentSpec parse_spec_file(const std::string& path);

// Deterministic dataset for a task. Regression draws a fixed teacher matrix
// and Gaussian inputs with labels teacher^T x + noise; classification draws
// two Gaussian blobs with one-hot labels; external CSV takes the last
// csv_targets columns as targets (a non-numeric first row is treated as a
// header).
net::Dataset generate_dataset(const TaskSpec& task, std::uint64_t seed);

net::Dataset load_csv_dataset(const std::string& path, int target_cols);

// Model with the spec's layer widths around the dataset's input/output
// dims, initialized from data_seed (identical across sweep cells so that
// cells differ only in their training streams).
net::MlpModel build_model(const ExperimentSpec& spec, const net::Dataset& data);

// Training configuration of one sweep cell, derived from the spec and the
// cell coordinates alone; any cell can be reproduced in isolation.
trainer::TrainConfig cell_train_config(const ExperimentSpec& spec, std::size_t mode_idx,
                                       std::size_t format_idx, std::size_t batch_idx,
                                       std::size_t lr_idx, std::size_t seed_idx);

struct CellResult {
    std::string run_id;
    std::string mode;
    std::string format;
    int batch_size = 0;
    double learning_rate = 0.0;
    std::uint64_t seed = 0;  // sweep seed value, not the derived one
    std::vector<trainer::RunRecord> records;
    std::string status = "ok";  // ok | diverged | failed
    std::string error;
};

struct ExperimentResult {
    std::vector<CellResult> cells;
    bool lemmas_pass = true;
    bool all_ok() const {
        for (const auto& c : cells)
            if (c.status != "ok") return false;
        return lemmas_pass;
    }
};

// Runs every sweep cell (in parallel up to SRLAB_WORKERS) and writes
// runs.csv and summary.csv (and lemmas.csv when enabled) into spec.outputs.
// Re-running the same spec rewrites byte-identical files. A failing cell is
// marked and the sweep continues.
ExperimentResult run_experiment(const ExperimentSpec& spec);

// The statlab probe battery driven by a spec: MSE decomposition cross-term,
// batch-size and precision scaling of the quantization term, and the weight
// bias bounds. Writes lemmas.csv; true when every gate passes.
bool verify_lemmas(const ExperimentSpec& spec);

// CSV schemas (documented, stable):
//   runs.csv    run_id,step,loss,grad_norm_sq,mode,format,batch_size,lr,seed
//   summary.csv run_id,mode,format,batch_size,lr,seed,evals,tail_mean_loss,
//               tail_mean_grad_norm_sq,status
//   lemmas.csv  probe,metric,value,stderr,threshold,pass
std::string runs_csv(const ExperimentResult& result);
std::string summary_csv(const ExperimentResult& result);

} // namespace srlab::exp
