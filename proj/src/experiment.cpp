// SPDX-License-Identifier: Apache-2.0

#include "srlab/experiment.hpp"
#include "srlab/text.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace srlab::exp {

namespace {

constexpr std::uint64_t kDataTag = 0xDA7Aull;
constexpr std::uint64_t kInitTag = 0x1217ull;
constexpr std::uint64_t kCellTag = 0xCE11D00Dull;

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

[[noreturn]] void fail_line(int line_no, const std::string& msg) {
    throw std::invalid_argument("spec line " + std::to_string(line_no) + ": " + msg);
}

[[noreturn]] void fail_field(const std::string& key, const std::string& msg) {
    throw std::invalid_argument("spec field '" + key + "': " + msg);
}

std::vector<std::string> value_list(const std::string& key, std::string_view raw, int line_no,
                                    bool allow_empty = false) {
    const std::string_view v = text::trim(raw);
    if (v.empty()) fail_line(line_no, "empty value for '" + key + "'");
    std::vector<std::string> items;
    if (v.front() == '[') {
        if (v.back() != ']') fail_line(line_no, "unterminated list for '" + key + "'");
        for (const std::string& item : text::split(v.substr(1, v.size() - 2), ',')) {
            const std::string trimmed{text::trim(item)};
            if (!trimmed.empty()) items.push_back(trimmed);
        }
        if (items.empty() && !allow_empty) fail_line(line_no, "empty list for '" + key + "'");
    } else {
        items.emplace_back(v);
    }
    return items;
}

std::string value_scalar(const std::string& key, std::string_view raw, int line_no) {
    auto items = value_list(key, raw, line_no);
    if (items.size() != 1) fail_line(line_no, "'" + key + "' takes a single value");
    return items[0];
}

int to_int(const std::string& key, const std::string& tok) {
    const auto v = text::parse_int(tok);
    if (!v) fail_field(key, "'" + tok + "' is not an integer");
    return static_cast<int>(*v);
}

std::uint64_t to_uint(const std::string& key, const std::string& tok) {
    const auto v = text::parse_uint(tok);
    if (!v) fail_field(key, "'" + tok + "' is not a non-negative integer");
    return *v;
}

double to_double(const std::string& key, const std::string& tok) {
    const auto v = text::parse_double(tok);
    if (!v) fail_field(key, "'" + tok + "' is not a number");
    return *v;
}

bool to_bool(const std::string& key, const std::string& tok) {
    if (tok == "true" || tok == "1") return true;
    if (tok == "false" || tok == "0") return false;
    fail_field(key, "'" + tok + "' is not a boolean");
}

// Accepts the canonical grid spec plus bare ExMy names like "E4M2".
quant::QuantGrid parse_format(const std::string& key, const std::string& tok) {
    try {
        if (!tok.empty() && tok[0] == 'E' && tok.find('M') != std::string::npos)
            return quant::parse_grid("fp:" + tok);
        return quant::parse_grid(tok);
    } catch (const std::exception& e) {
        fail_field(key, e.what());
    }
}

trainer::ModeTag parse_mode_tag(const std::string& key, const std::string& tok) {
    if (tok == "full_precision") return trainer::ModeTag::FullPrecision;
    if (tok == "rtn_all") return trainer::ModeTag::RtnAll;
    if (tok == "weight_only") return trainer::ModeTag::WeightOnlyQat;
    if (tok == "sr_mixed") return trainer::ModeTag::SrMixedQat;
    fail_field(key, "unknown mode '" + tok + "'");
}

unsigned worker_count(std::size_t cells) {
    unsigned workers = std::thread::hardware_concurrency();
    if (const char* env = std::getenv("SRLAB_WORKERS")) {
        const auto v = text::parse_uint(env);
        if (v && *v >= 1) workers = static_cast<unsigned>(*v);
    }
    if (workers < 1) workers = 1;
    return static_cast<unsigned>(std::min<std::size_t>(workers, std::max<std::size_t>(cells, 1)));
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

double tail_mean(const std::vector<double>& vals) {
    if (vals.empty()) return kNan;
    const std::size_t tail = std::max<std::size_t>(1, vals.size() / 4);
    double acc = 0.0;
    for (std::size_t i = vals.size() - tail; i < vals.size(); ++i) acc += vals[i];
    return acc / static_cast<double>(tail);
}

struct LemmaRow {
    std::string probe, metric;
    double value = 0.0, se = kNan, threshold = kNan;
    bool pass = true;
};

} // namespace

ExperimentSpec parse_spec(const std::string& spec_text) {
    ExperimentSpec spec;
    std::set<std::string> seen;
    std::vector<trainer::ModeTag> mode_tags = {trainer::ModeTag::FullPrecision};
    bool d_out_set = false;

    std::istringstream in(spec_text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        const std::string_view body = text::trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string_view::npos) fail_line(line_no, "expected 'key = value'");
        const std::string key{text::trim(body.substr(0, eq))};
        const std::string_view raw = body.substr(eq + 1);
        if (key.empty()) fail_line(line_no, "missing key");
        if (!seen.insert(key).second) fail_line(line_no, "duplicate key '" + key + "'");

        if (key == "name") {
            spec.name = value_scalar(key, raw, line_no);
        } else if (key == "task") {
            const std::string v = value_scalar(key, raw, line_no);
            if (v == "synthetic_regression") spec.task.kind = TaskKind::SyntheticRegression;
            else if (v == "two_blob_classification") spec.task.kind = TaskKind::TwoBlobClassification;
            else if (v == "external_csv") spec.task.kind = TaskKind::ExternalCsv;
            else fail_field(key, "unknown task '" + v + "'");
        } else if (key == "samples") {
            spec.task.samples = to_int(key, value_scalar(key, raw, line_no));
        } else if (key == "d_in") {
            spec.task.d_in = to_int(key, value_scalar(key, raw, line_no));
        } else if (key == "d_out") {
            spec.task.d_out = to_int(key, value_scalar(key, raw, line_no));
            d_out_set = true;
        } else if (key == "noise_sd") {
            spec.task.noise_sd = to_double(key, value_scalar(key, raw, line_no));
        } else if (key == "csv_path") {
            spec.task.csv_path = value_scalar(key, raw, line_no);
        } else if (key == "csv_targets") {
            spec.task.csv_targets = to_int(key, value_scalar(key, raw, line_no));
        } else if (key == "hidden") {
            spec.hidden.clear();
            // "hidden = []" gives a linear model.
            for (const auto& tok : value_list(key, raw, line_no, /*allow_empty=*/true))
                spec.hidden.push_back(to_int(key, tok));
        } else if (key == "activation") {
            const std::string v = value_scalar(key, raw, line_no);
            if (v == "relu") spec.activation = net::Activation::Relu;
            else if (v == "none") spec.activation = net::Activation::None;
            else fail_field(key, "unknown activation '" + v + "'");
        } else if (key == "loss") {
            const std::string v = value_scalar(key, raw, line_no);
            if (v == "mse") spec.loss = net::LossKind::Mse;
            else if (v == "softmax_ce") spec.loss = net::LossKind::SoftmaxCrossEntropy;
            else fail_field(key, "unknown loss '" + v + "'");
        } else if (key == "modes") {
            mode_tags.clear();
            for (const auto& tok : value_list(key, raw, line_no))
                mode_tags.push_back(parse_mode_tag(key, tok));
        } else if (key == "formats") {
            spec.formats.clear();
            for (const auto& tok : value_list(key, raw, line_no))
                spec.formats.push_back(parse_format(key, tok));
        } else if (key == "batch_sizes") {
            spec.batch_sizes.clear();
            for (const auto& tok : value_list(key, raw, line_no))
                spec.batch_sizes.push_back(to_int(key, tok));
        } else if (key == "learning_rates") {
            spec.learning_rates.clear();
            for (const auto& tok : value_list(key, raw, line_no))
                spec.learning_rates.push_back(to_double(key, tok));
        } else if (key == "seeds") {
            spec.seeds.clear();
            for (const auto& tok : value_list(key, raw, line_no))
                spec.seeds.push_back(to_uint(key, tok));
        } else if (key == "steps") {
            spec.steps = to_int(key, value_scalar(key, raw, line_no));
        } else if (key == "eval_every") {
            spec.eval_every = to_int(key, value_scalar(key, raw, line_no));
        } else if (key == "weight_rounding") {
            const std::string v = value_scalar(key, raw, line_no);
            if (v == "sr") spec.weight_rounding = quant::RoundMode::Sr;
            else if (v == "rtn") spec.weight_rounding = quant::RoundMode::Rtn;
            else fail_field(key, "expected sr or rtn, got '" + v + "'");
        } else if (key == "split_weight_thresholds") {
            spec.split_weight_thresholds = to_bool(key, value_scalar(key, raw, line_no));
        } else if (key == "data_seed") {
            spec.data_seed = to_uint(key, value_scalar(key, raw, line_no));
        } else if (key == "outputs") {
            spec.outputs = value_scalar(key, raw, line_no);
        } else if (key == "lemmas") {
            spec.lemmas = to_bool(key, value_scalar(key, raw, line_no));
        } else if (key == "lemma_trials") {
            spec.lemma_trials = to_int(key, value_scalar(key, raw, line_no));
        } else {
            fail_line(line_no, "unknown key '" + key + "'");
        }
    }

    if (spec.name.empty()) throw std::invalid_argument("spec field 'name': required");
    if (spec.task.samples < 1) fail_field("samples", "must be >= 1");
    if (spec.task.d_in < 1) fail_field("d_in", "must be >= 1");
    if (spec.task.d_out < 1) fail_field("d_out", "must be >= 1");
    if (spec.task.noise_sd < 0.0) fail_field("noise_sd", "must be >= 0");
    if (spec.task.csv_targets < 1) fail_field("csv_targets", "must be >= 1");
    if (spec.task.kind == TaskKind::ExternalCsv && spec.task.csv_path.empty())
        fail_field("csv_path", "required for external_csv");
    if (spec.task.kind == TaskKind::TwoBlobClassification) {
        if (d_out_set && spec.task.d_out != 2) fail_field("d_out", "two-blob task is binary");
        spec.task.d_out = 2;
    }
    for (int h : spec.hidden)
        if (h < 1) fail_field("hidden", "widths must be >= 1");
    for (int b : spec.batch_sizes)
        if (b < 1) fail_field("batch_sizes", "must be >= 1");
    for (double lr : spec.learning_rates)
        if (!(lr > 0.0)) fail_field("learning_rates", "must be > 0");
    if (spec.steps < 1) fail_field("steps", "must be >= 1");
    if (spec.eval_every < 1) fail_field("eval_every", "must be >= 1");
    if (spec.lemma_trials < 1) fail_field("lemma_trials", "must be >= 1");

    spec.modes.clear();
    for (const trainer::ModeTag tag : mode_tags) {
        trainer::TrainMode mode;
        mode.tag = tag;
        mode.weight_rounding =
            tag == trainer::ModeTag::RtnAll ? quant::RoundMode::Rtn : spec.weight_rounding;
        spec.modes.push_back(mode);
    }
    return spec;
}

ExperimentSpec parse_spec_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot read spec file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_spec(buf.str());
}

net::Dataset generate_dataset(const TaskSpec& task, std::uint64_t seed) {
    switch (task.kind) {
        case TaskKind::SyntheticRegression: {
            rng::Rng r(rng::seed_mix(seed, kDataTag, 1));
            linalg::Mat teacher(task.d_in, task.d_out);
            const double scale = 1.0 / std::sqrt(static_cast<double>(task.d_in));
            for (double& v : teacher.data()) v = r.gaussian() * scale;
            linalg::Mat x(task.samples, task.d_in);
            for (double& v : x.data()) v = r.gaussian();
            linalg::Mat y = linalg::matmul(x, teacher);
            if (task.noise_sd > 0.0)
                for (double& v : y.data()) v += task.noise_sd * r.gaussian();
            return net::Dataset{std::move(x), std::move(y)};
        }
        case TaskKind::TwoBlobClassification: {
            rng::Rng r(rng::seed_mix(seed, kDataTag, 2));
            const double mu = 1.5 / std::sqrt(static_cast<double>(task.d_in));
            linalg::Mat x(task.samples, task.d_in);
            linalg::Mat y(task.samples, 2);
            for (int k = 0; k < task.samples; ++k) {
                const int cls = k & 1;
                for (int c = 0; c < task.d_in; ++c)
                    x(k, c) = (cls ? mu : -mu) + r.gaussian();
                y(k, cls) = 1.0;
            }
            return net::Dataset{std::move(x), std::move(y)};
        }
        case TaskKind::ExternalCsv:
            return load_csv_dataset(task.csv_path, task.csv_targets);
    }
    throw std::invalid_argument("generate_dataset: unknown task");
}

net::Dataset load_csv_dataset(const std::string& path, int target_cols) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot read csv '" + path + "'");
    std::vector<std::vector<double>> rows;
    std::string line;
    int line_no = 0;
    int n_cols = -1;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view body = text::trim(line);
        if (body.empty()) continue;
        const std::vector<std::string> toks = text::split(body, ',');
        std::vector<double> row;
        row.reserve(toks.size());
        bool numeric = true;
        for (std::size_t c = 0; c < toks.size(); ++c) {
            const auto v = text::parse_double(text::trim(toks[c]));
            if (!v) {
                if (rows.empty() && n_cols < 0) {
                    numeric = false;  // header row
                    break;
                }
                throw std::invalid_argument(path + ": row " + std::to_string(line_no) + ", col " +
                                            std::to_string(c + 1) + ": '" + toks[c] +
                                            "' is not a number");
            }
            row.push_back(*v);
        }
        if (!numeric) continue;
        if (n_cols < 0) n_cols = static_cast<int>(row.size());
        if (static_cast<int>(row.size()) != n_cols)
            throw std::invalid_argument(path + ": row " + std::to_string(line_no) + ": expected " +
                                        std::to_string(n_cols) + " columns, got " +
                                        std::to_string(row.size()));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::invalid_argument(path + ": no data rows");
    if (target_cols >= n_cols)
        throw std::invalid_argument(path + ": csv_targets " + std::to_string(target_cols) +
                                    " leaves no input columns");
    const int d_in = n_cols - target_cols;
    linalg::Mat x(static_cast<int>(rows.size()), d_in);
    linalg::Mat y(static_cast<int>(rows.size()), target_cols);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        for (int c = 0; c < d_in; ++c) x(static_cast<int>(k), c) = rows[k][c];
        for (int c = 0; c < target_cols; ++c) y(static_cast<int>(k), c) = rows[k][d_in + c];
    }
    return net::Dataset{std::move(x), std::move(y)};
}

net::MlpModel build_model(const ExperimentSpec& spec, const net::Dataset& data) {
    std::vector<int> widths;
    widths.push_back(data.inputs.cols());
    widths.insert(widths.end(), spec.hidden.begin(), spec.hidden.end());
    widths.push_back(data.targets.cols());

    net::MlpModel model;
    model.activation = spec.activation;
    model.loss = spec.loss;
    rng::Rng r(rng::seed_mix(spec.data_seed, kInitTag));
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        linalg::Mat w(widths[i], widths[i + 1]);
        const double scale = std::sqrt(1.0 / static_cast<double>(widths[i]));
        for (double& v : w.data()) v = r.gaussian() * scale;
        model.weights.push_back(std::move(w));
    }
    return model;
}

namespace {

struct CellCoord {
    std::size_t mi, fi, bi, li, si;
};

CellResult make_cell(const ExperimentSpec& spec, const CellCoord& c) {
    CellResult cell;
    cell.mode = trainer::mode_to_string(spec.modes[c.mi]);
    cell.format = quant::grid_to_string(spec.formats[c.fi]);
    cell.batch_size = spec.batch_sizes[c.bi];
    cell.learning_rate = spec.learning_rates[c.li];
    cell.seed = spec.seeds[c.si];
    cell.run_id = cell.mode + "_" + cell.format + "_b" + std::to_string(cell.batch_size) + "_lr" +
                  text::format_double(cell.learning_rate) + "_s" + std::to_string(cell.seed);
    return cell;
}

std::vector<LemmaRow> lemma_probe_rows(const ExperimentSpec& spec);

std::string lemmas_csv(const std::vector<LemmaRow>& rows) {
    std::string out = "probe,metric,value,stderr,threshold,pass\n";
    for (const LemmaRow& r : rows) {
        out += r.probe + "," + r.metric + "," + text::format_double(r.value) + "," +
               text::format_double(r.se) + "," + text::format_double(r.threshold) + "," +
               (r.pass ? "1" : "0") + "\n";
    }
    return out;
}

} // namespace

trainer::TrainConfig cell_train_config(const ExperimentSpec& spec, std::size_t mode_idx,
                                       std::size_t format_idx, std::size_t batch_idx,
                                       std::size_t lr_idx, std::size_t seed_idx) {
    trainer::TrainConfig cfg;
    cfg.mode = spec.modes.at(mode_idx);
    cfg.grid = spec.formats.at(format_idx);
    cfg.batch_size = spec.batch_sizes.at(batch_idx);
    cfg.learning_rate = spec.learning_rates.at(lr_idx);
    cfg.steps = spec.steps;
    cfg.eval_every = spec.eval_every;
    cfg.split_weight_thresholds = spec.split_weight_thresholds;
    cfg.seed = rng::seed_mix(kCellTag, spec.seeds.at(seed_idx), mode_idx, format_idx, batch_idx,
                             lr_idx);
    return cfg;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
    const net::Dataset data = generate_dataset(spec.task, spec.data_seed);
    const net::MlpModel model = build_model(spec, data);

    std::vector<CellCoord> coords;
    for (std::size_t mi = 0; mi < spec.modes.size(); ++mi)
        for (std::size_t fi = 0; fi < spec.formats.size(); ++fi)
            for (std::size_t bi = 0; bi < spec.batch_sizes.size(); ++bi)
                for (std::size_t li = 0; li < spec.learning_rates.size(); ++li)
                    for (std::size_t si = 0; si < spec.seeds.size(); ++si)
                        coords.push_back(CellCoord{mi, fi, bi, li, si});

    ExperimentResult result;
    result.cells.resize(coords.size());

    std::atomic<std::size_t> next{0};
    const auto run_cells = [&] {
        for (;;) {
            const std::size_t idx = next.fetch_add(1);
            if (idx >= coords.size()) return;
            CellResult cell = make_cell(spec, coords[idx]);
            try {
                const CellCoord& c = coords[idx];
                const trainer::TrainConfig cfg =
                    cell_train_config(spec, c.mi, c.fi, c.bi, c.li, c.si);
                cell.records = trainer::train(model, data, cfg);
                if (!cell.records.empty() && cell.records.back().diverged)
                    cell.status = "diverged";
            } catch (const std::exception& e) {
                cell.status = "failed";
                cell.error = e.what();
            }
            result.cells[idx] = std::move(cell);
        }
    };

    const unsigned workers = worker_count(coords.size());
    if (workers <= 1) {
        run_cells();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run_cells);
        for (std::thread& t : pool) t.join();
    }

    std::filesystem::create_directories(spec.outputs);
    write_file(std::filesystem::path(spec.outputs) / "runs.csv", runs_csv(result));
    write_file(std::filesystem::path(spec.outputs) / "summary.csv", summary_csv(result));
    if (spec.lemmas) {
        const std::vector<LemmaRow> rows = lemma_probe_rows(spec);
        write_file(std::filesystem::path(spec.outputs) / "lemmas.csv", lemmas_csv(rows));
        for (const LemmaRow& r : rows) result.lemmas_pass = result.lemmas_pass && r.pass;
    }
    return result;
}

std::string runs_csv(const ExperimentResult& result) {
    std::string out = "run_id,step,loss,grad_norm_sq,mode,format,batch_size,lr,seed\n";
    for (const CellResult& cell : result.cells) {
        for (const trainer::RunRecord& rec : cell.records) {
            out += cell.run_id + "," + std::to_string(rec.step) + "," +
                   text::format_double(rec.train_loss) + "," +
                   text::format_double(rec.grad_norm_sq) + "," + cell.mode + "," + cell.format +
                   "," + std::to_string(cell.batch_size) + "," +
                   text::format_double(cell.learning_rate) + "," + std::to_string(cell.seed) +
                   "\n";
        }
    }
    return out;
}

std::string summary_csv(const ExperimentResult& result) {
    std::string out =
        "run_id,mode,format,batch_size,lr,seed,evals,tail_mean_loss,tail_mean_grad_norm_sq,"
        "status\n";
    for (const CellResult& cell : result.cells) {
        std::vector<double> losses, norms;
        for (const trainer::RunRecord& rec : cell.records) {
            if (rec.diverged) continue;
            losses.push_back(rec.train_loss);
            norms.push_back(rec.grad_norm_sq);
        }
        out += cell.run_id + "," + cell.mode + "," + cell.format + "," +
               std::to_string(cell.batch_size) + "," + text::format_double(cell.learning_rate) +
               "," + std::to_string(cell.seed) + "," + std::to_string(cell.records.size()) + "," +
               text::format_double(tail_mean(losses)) + "," + text::format_double(tail_mean(norms)) +
               "," + cell.status + "\n";
    }
    return out;
}

namespace {

std::vector<LemmaRow> lemma_probe_rows(const ExperimentSpec& spec) {
    std::vector<LemmaRow> rows;
    const long trials = spec.lemma_trials;
    const std::uint64_t s = spec.data_seed;

    // Cross-term of the sampling/quantization split on a small fixture.
    {
        rng::Rng r(rng::seed_mix(s, 21));
        linalg::Mat a(8, 3), aout(8, 2);
        for (double& v : a.data()) v = 2.0 * r.gaussian();
        for (double& v : aout.data()) v = 2.0 * r.gaussian();
        const auto grid = quant::QuantGrid::uniform(1.0);
        const statlab::MseDecomposition d =
            statlab::mse_decompose(a, aout, 2, grid, grid, trials, rng::seed_mix(s, 22));
        rows.push_back(LemmaRow{"decomposition", "cross", d.cross, d.cross_se, 4.0 * d.cross_se,
                                std::fabs(d.cross) <= 4.0 * d.cross_se});
        const double gap = std::fabs(d.total - (d.sampling + d.quant + d.cross));
        rows.push_back(LemmaRow{"decomposition", "identity_gap", gap, kNan, 1e-12, gap <= 1e-12});
    }

    // Quantization-term scaling in batch size and step size.
    {
        rng::Rng r(rng::seed_mix(s, 23));
        linalg::Mat a(64, 2), aout(64, 2);
        for (double& v : a.data()) v = 1.5 * r.gaussian();
        for (double& v : aout.data()) v = 1.5 * r.gaussian();

        const std::vector<double> bs = {1, 2, 4, 8, 16, 32};
        std::vector<double> tq;
        bool bounds_ok = true;
        for (double b : bs) {
            const statlab::TqBoundResult res =
                statlab::tq_bound_check(a, aout, static_cast<int>(b), 0.5, 0.5, trials,
                                        rng::seed_mix(s, 24, static_cast<std::uint64_t>(b)));
            rows.push_back(LemmaRow{"tq_bound", "b" + std::to_string(static_cast<int>(b)),
                                    res.measured, res.measured_se, res.bound, res.within});
            bounds_ok = bounds_ok && res.within;
            tq.push_back(res.measured);
        }
        const statlab::ScalingFit fit = statlab::fit_scaling(bs, tq, statlab::ScalingLaw::InverseB);
        rows.push_back(LemmaRow{"batch_scaling", "slope", fit.slope, fit.residual, 0.15,
                                std::fabs(fit.slope + 1.0) <= 0.15});

        const std::vector<double> bits = {0, 1, 2, 3};
        std::vector<double> tq_bits;
        for (double bit : bits) {
            const double delta = 0.5 * std::pow(2.0, -bit);
            const statlab::TqBoundResult res =
                statlab::tq_bound_check(a, aout, 4, delta, delta, trials,
                                        rng::seed_mix(s, 25, static_cast<std::uint64_t>(bit)));
            tq_bits.push_back(res.measured);
        }
        const statlab::ScalingFit bit_fit =
            statlab::fit_scaling(bits, tq_bits, statlab::ScalingLaw::TwoPowMinus2B);
        rows.push_back(LemmaRow{"precision_scaling", "slope_per_bit", bit_fit.slope,
                                bit_fit.residual, 0.3, std::fabs(bit_fit.slope + 2.0) <= 0.3});
    }

    // Weight-quantization bias bounds on least-squares models.
    {
        rng::Rng r(rng::seed_mix(s, 26));
        linalg::Mat x(32, 3), y(32, 2);
        for (double& v : x.data()) v = r.gaussian();
        for (double& v : y.data()) v = r.gaussian();
        const net::Dataset data{x, y};
        double worst_rtn = 0.0, worst_sr = 0.0;
        bool ok_rtn = true, ok_sr = true;
        for (int draw = 0; draw < 50; ++draw) {
            net::MlpModel model;
            model.activation = net::Activation::None;
            model.loss = net::LossKind::Mse;
            linalg::Mat w(3, 2);
            for (double& v : w.data()) v = 2.0 * r.gaussian();
            model.weights.push_back(w);
            const auto rtn_rep = statlab::bias_check(model, data, 0.25, quant::RoundMode::Rtn, 1,
                                                     rng::seed_mix(s, 27, draw));
            const auto sr_rep = statlab::bias_check(model, data, 0.25, quant::RoundMode::Sr, 100,
                                                    rng::seed_mix(s, 28, draw));
            ok_rtn = ok_rtn && rtn_rep.measured_bias <= rtn_rep.bound;
            ok_sr = ok_sr && sr_rep.measured_bias <= sr_rep.bound;
            if (rtn_rep.bound > 0.0)
                worst_rtn = std::max(worst_rtn, rtn_rep.measured_bias / rtn_rep.bound);
            if (sr_rep.bound > 0.0)
                worst_sr = std::max(worst_sr, sr_rep.measured_bias / sr_rep.bound);
        }
        rows.push_back(LemmaRow{"weight_bias", "rtn_worst_ratio", worst_rtn, kNan, 1.0, ok_rtn});
        rows.push_back(LemmaRow{"weight_bias", "sr_worst_ratio", worst_sr, kNan, 1.0, ok_sr});
    }
    return rows;
}

} // namespace

bool verify_lemmas(const ExperimentSpec& spec) {
    const std::vector<LemmaRow> rows = lemma_probe_rows(spec);
    std::filesystem::create_directories(spec.outputs);
    write_file(std::filesystem::path(spec.outputs) / "lemmas.csv", lemmas_csv(rows));
    bool pass = true;
    for (const LemmaRow& r : rows) pass = pass && r.pass;
    return pass;
}

} // namespace srlab::exp
