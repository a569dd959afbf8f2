#include "poselift/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "poselift/checkpoint.hpp"
#include "poselift/errors.hpp"
#include "poselift/evaluation.hpp"
#include "poselift/kernels.hpp"
#include "poselift/ops.hpp"

namespace poselift::cli {

namespace fs = std::filesystem;
using nlohmann::json;

json RunConfig::to_json() const {
    json j{{"skeleton", skeleton},
           {"dm", model.d_model},
           {"blocks", model.blocks},
           {"fusion", std::string(to_string(model.fusion))},
           {"scales", scales_to_string(model.scales)},
           {"timesteps", timesteps},
           {"hypotheses", hypotheses},
           {"iterations", iterations},
           {"seed", seed ? json(*seed) : json(nullptr)},
           {"lr", adam.lr},
           {"beta1", adam.beta1},
           {"beta2", adam.beta2},
           {"adam_eps", adam.eps},
           {"epochs", epochs},
           {"batch_size", batch_size},
           {"noise_draws", noise_draws},
           {"lr_decay_start", lr_decay_start},
           {"data", data},
           {"checkpoint", checkpoint},
           {"predictions", predictions},
           {"out", out},
           {"pose_scale_mm", scaling.pose_mm},
           {"input_scale", scaling.input},
           {"count", count},
           {"noise_2d", noise_2d},
           {"bench_seconds", bench_seconds},
           {"bench_batch", bench_batch},
           {"ddim_printed", printed_radicand}};
    return j;
}

void RunConfig::merge_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "skeleton") skeleton = v.get<std::string>();
            else if (key == "dm") model.d_model = v.get<std::size_t>();
            else if (key == "blocks") model.blocks = v.get<std::size_t>();
            else if (key == "fusion") model.fusion = parse_fusion(v.get<std::string>());
            else if (key == "scales") model.scales = parse_scales(v.get<std::string>());
            else if (key == "timesteps") timesteps = v.get<int>();
            else if (key == "hypotheses") hypotheses = v.get<int>();
            else if (key == "iterations") iterations = v.get<int>();
            else if (key == "seed") { if (!v.is_null()) seed = v.get<std::uint64_t>(); }
            else if (key == "lr") adam.lr = v.get<double>();
            else if (key == "beta1") adam.beta1 = v.get<double>();
            else if (key == "beta2") adam.beta2 = v.get<double>();
            else if (key == "adam_eps") adam.eps = v.get<double>();
            else if (key == "epochs") epochs = v.get<std::size_t>();
            else if (key == "noise_draws") noise_draws = v.get<std::size_t>();
            else if (key == "lr_decay_start") lr_decay_start = v.get<double>();
            else if (key == "batch_size") batch_size = v.get<std::size_t>();
            else if (key == "data") data = v.get<std::string>();
            else if (key == "checkpoint") checkpoint = v.get<std::string>();
            else if (key == "predictions") predictions = v.get<std::string>();
            else if (key == "out") out = v.get<std::string>();
            else if (key == "pose_scale_mm") scaling.pose_mm = v.get<double>();
            else if (key == "input_scale") scaling.input = v.get<double>();
            else if (key == "count") count = v.get<std::size_t>();
            else if (key == "noise_2d") noise_2d = v.get<double>();
            else if (key == "bench_seconds") bench_seconds = v.get<double>();
            else if (key == "bench_batch") bench_batch = v.get<std::size_t>();
            else if (key == "ddim_printed") printed_radicand = v.get<bool>();
            else throw ConfigError("unknown config key '" + key + "'");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config file: ") + e.what());
    }
}

namespace {

struct Flags {
    std::optional<std::string> config, skeleton, fusion, scales, data, checkpoint, predictions, out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> dm, blocks, epochs, batch_size, noise_draws, count, bench_batch;
    std::optional<int> timesteps, hypotheses, iterations;
    std::optional<double> lr, lr_decay_start, noise_2d, bench_seconds;
    bool ddim_printed = false;
};

void add_shared(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "JSON run configuration; flags override it");
    cmd->add_option("--seed", f.seed, "RNG seed");
    cmd->add_option("--skeleton", f.skeleton, "skeleton JSON file or 'default'");
    cmd->add_option("--dm", f.dm, "embedding width d_m");
    cmd->add_option("--blocks", f.blocks, "number of hypergraph GCN blocks");
    cmd->add_option("--fusion", f.fusion, "branch fusion: weighted|concat|product");
    cmd->add_option("--scales", f.scales, "comma-separated subset of joint,part,body");
    cmd->add_option("--timesteps", f.timesteps, "diffusion steps T");
    cmd->add_option("--hypotheses,-H", f.hypotheses, "hypotheses per input");
    cmd->add_option("--iterations,-K", f.iterations, "reverse-process iterations");
    cmd->add_option("--out", f.out, "output directory");
}

struct Resolved {
    RunConfig config;
    bool timesteps_set = false;
};

Resolved resolve(const Flags& f) {
    Resolved r;
    RunConfig& c = r.config;
    if (f.config) {
        std::ifstream in(*f.config, std::ios::binary);
        if (!in) throw ConfigError("cannot open config file " + *f.config);
        json j;
        try {
            j = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ParseError(*f.config + ": " + e.what());
        }
        c.merge_json(j);
        r.timesteps_set = j.contains("timesteps");
    }
    if (f.seed) c.seed = *f.seed;
    if (f.skeleton) c.skeleton = *f.skeleton;
    if (f.dm) c.model.d_model = *f.dm;
    if (f.blocks) c.model.blocks = *f.blocks;
    if (f.fusion) c.model.fusion = parse_fusion(*f.fusion);
    if (f.scales) c.model.scales = parse_scales(*f.scales);
    if (f.timesteps) {
        c.timesteps = *f.timesteps;
        r.timesteps_set = true;
    }
    if (f.hypotheses) c.hypotheses = *f.hypotheses;
    if (f.iterations) c.iterations = *f.iterations;
    if (f.out) c.out = *f.out;
    if (f.data) c.data = *f.data;
    if (f.checkpoint) c.checkpoint = *f.checkpoint;
    if (f.predictions) c.predictions = *f.predictions;
    if (f.epochs) c.epochs = *f.epochs;
    if (f.batch_size) c.batch_size = *f.batch_size;
    if (f.noise_draws) c.noise_draws = *f.noise_draws;
    if (f.lr) c.adam.lr = *f.lr;
    if (f.lr_decay_start) c.lr_decay_start = *f.lr_decay_start;
    if (f.count) c.count = *f.count;
    if (f.noise_2d) c.noise_2d = *f.noise_2d;
    if (f.bench_seconds) c.bench_seconds = *f.bench_seconds;
    if (f.bench_batch) c.bench_batch = *f.bench_batch;
    if (f.ddim_printed) c.printed_radicand = true;
    c.model.max_timestep = c.timesteps;
    return r;
}

void require_seed(const RunConfig& c) {
    if (!c.seed) throw ConfigError("a seed is required (--seed or \"seed\" in the config file)");
}

const std::string& require_path(const std::string& path, const char* what) {
    if (path.empty()) throw ConfigError(std::string("missing ") + what);
    if (!fs::exists(path)) throw ConfigError(std::string(what) + " '" + path + "' does not exist");
    return path;
}

Skeleton resolve_skeleton(const RunConfig& c) {
    if (c.skeleton == "default") return default_skeleton();
    return load_skeleton(require_path(c.skeleton, "skeleton file"));
}

fs::path prepare_out(const RunConfig& c) {
    fs::path dir(c.out);
    fs::create_directories(dir);
    std::ofstream echo(dir / "config.json", std::ios::binary);
    echo << c.to_json().dump(2) << '\n';
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
}

std::string number(double v) { return json(v).dump(); }

int cmd_synth(const RunConfig& c, std::ostream& out) {
    require_seed(c);
    const Skeleton skeleton = resolve_skeleton(c);
    const auto records = synth_dataset(c.count, skeleton, *c.seed, c.noise_2d);
    const fs::path dir = prepare_out(c);
    save_records(records, dir / "records.jsonl");
    out << "wrote " << records.size() << " records to " << (dir / "records.jsonl").string() << '\n';
    return 0;
}

int cmd_train(const RunConfig& c, std::ostream& out) {
    require_seed(c);
    const Skeleton skeleton = resolve_skeleton(c);
    const auto records = load_records(require_path(c.data, "training data"), skeleton);
    Denoiser model(c.model, skeleton, *c.seed);
    const DiffusionSchedule sched = cosine_schedule(c.timesteps);
    const fs::path dir = prepare_out(c);

    TrainConfig tc{.epochs = c.epochs, .batch_size = c.batch_size, .noise_draws = c.noise_draws, .adam = c.adam,
                   .lr_decay_start = c.lr_decay_start, .lr_floor = TrainConfig{}.lr_floor, .seed = *c.seed, .scaling = c.scaling};
    std::ofstream log(dir / "train_log.csv", std::ios::binary);
    log << "epoch,loss\n";
    const auto losses = train(model, records, tc, sched, [&](std::size_t epoch, double loss) {
        log << epoch << ',' << number(loss) << '\n';
    });

    Checkpoint ckpt = model.to_checkpoint();
    ckpt.meta["timesteps"] = c.timesteps;
    ckpt.meta["scaling"] = {{"pose_mm", c.scaling.pose_mm}, {"input", c.scaling.input}};
    save_checkpoint(dir / "checkpoint.json", ckpt);
    out << "trained " << losses.size() << " epochs on " << records.size() << " records; final loss "
        << (losses.empty() ? std::string("n/a") : number(losses.back())) << '\n';
    return 0;
}

int cmd_sample(Resolved r, std::ostream& out, std::ostream& err) {
    RunConfig& c = r.config;
    require_seed(c);
    const Checkpoint ckpt = load_checkpoint(require_path(c.checkpoint, "checkpoint"));
    Denoiser model = Denoiser::from_checkpoint(ckpt);
    const int T = ckpt.meta.value("timesteps", model.config().max_timestep);
    if (r.timesteps_set && c.timesteps != T)
        throw ConfigError("--timesteps " + std::to_string(c.timesteps) + " differs from the checkpoint's " + std::to_string(T));
    c.timesteps = T;
    c.model = model.config();
    if (ckpt.meta.contains("scaling")) {
        c.scaling.pose_mm = ckpt.meta["scaling"].value("pose_mm", c.scaling.pose_mm);
        c.scaling.input = ckpt.meta["scaling"].value("input", c.scaling.input);
    }
    const auto records = load_records(require_path(c.data, "input records"), model.skeleton());
    const DiffusionSchedule sched = cosine_schedule(T);

    std::size_t clamped = 0;
    SamplerConfig sc{.hypotheses = c.hypotheses, .iterations = c.iterations, .seed = *c.seed, .step = {}};
    if (c.printed_radicand) {
        sc.step.radicand = Radicand::kPrinted;
        sc.step.clamped = &clamped;
    }
    const fs::path dir = prepare_out(c);
    const auto hyps = predict(model, records, sc, sched, c.scaling);
    save_predictions(records, hyps, dir / "predictions.jsonl");
    if (clamped) err << json{{"warning", {{"kind", "radicand"}, {"clamped_steps", clamped}}}}.dump() << '\n';
    out << "wrote " << c.hypotheses << " hypotheses for " << records.size() << " records to "
        << (dir / "predictions.jsonl").string() << '\n';
    return 0;
}

int cmd_eval(const RunConfig& c, std::ostream& out) {
    const Skeleton skeleton = resolve_skeleton(c);
    const auto records = load_records(require_path(c.data, "ground-truth records"), skeleton);
    const auto hyps = load_predictions(require_path(c.predictions, "predictions"), skeleton);
    const MetricReport report = evaluate(records, hyps, skeleton.root());
    const fs::path dir = prepare_out(c);
    write_text(dir / "report.json", report.to_json().dump(2) + "\n");
    write_text(dir / "report.txt", report.to_text());
    out << report.to_text();
    return 0;
}

int cmd_bench(const RunConfig& c, std::ostream& out) {
    std::unique_ptr<Denoiser> model;
    int T = c.timesteps;
    if (!c.checkpoint.empty()) {
        const Checkpoint ckpt = load_checkpoint(require_path(c.checkpoint, "checkpoint"));
        model = std::make_unique<Denoiser>(Denoiser::from_checkpoint(ckpt));
        T = ckpt.meta.value("timesteps", model->config().max_timestep);
    } else {
        model = std::make_unique<Denoiser>(c.model, resolve_skeleton(c), c.seed.value_or(0));
    }
    const DiffusionSchedule sched = cosine_schedule(T);
    const SamplerConfig sc{.hypotheses = c.hypotheses, .iterations = c.iterations, .seed = c.seed.value_or(0), .step = {}};
    sc.validate(T);

    const std::uint64_t forward_macs = analytic_forward_macs(model->config(), model->skeleton());
    const auto probe = synth_dataset(std::max<std::size_t>(1, c.bench_batch), model->skeleton(), c.seed.value_or(0));
    std::uint64_t measured = 0;
    {
        ag::NoGradGuard no_grad;
        std::vector<const PoseRecord*> one{&probe.front()};
        const std::vector<int> t{T};
        ag::reset_mac_count();
        model->forward(stack_targets(one, c.scaling), stack_inputs(one, c.scaling), t, Mode::kEval);
        measured = ag::mac_count();
    }

    json report{{"param_count", model->parameter_count()},
                {"param_count_analytic", analytic_parameter_count(model->config(), model->skeleton())},
                {"flops_per_forward", forward_macs},
                {"flops_per_forward_measured", measured},
                {"flops_per_sample", forward_macs * static_cast<std::uint64_t>(c.hypotheses) *
                                         static_cast<std::uint64_t>(c.iterations)},
                {"hypotheses", c.hypotheses},
                {"iterations", c.iterations},
                {"model", model->config().to_json()},
                {"poses_per_second", nullptr}};

    if (c.bench_seconds > 0.0) {
        std::vector<PoseRecord> inputs = probe;
        for (auto& r : inputs) r.y.reset();
        using clock = std::chrono::steady_clock;
        const auto start = clock::now();
        std::size_t poses = 0;
        double elapsed = 0.0;
        do {
            predict(*model, inputs, sc, sched, c.scaling);
            poses += inputs.size();
            elapsed = std::chrono::duration<double>(clock::now() - start).count();
        } while (elapsed < c.bench_seconds);
        report["poses_per_second"] = static_cast<double>(poses) / elapsed;
        report["seconds_measured"] = elapsed;
    }

    const fs::path dir = prepare_out(c);
    write_text(dir / "bench.json", report.dump(2) + "\n");
    out << report.dump(2) << '\n';
    return 0;
}

json kernel_json(const Skeleton& skeleton, HyperScale scale) {
    if (skeleton.hyperedges(scale).empty()) return nullptr;
    const Tensor h = incidence(skeleton, scale);
    std::vector<std::string> names;
    for (const auto& j : skeleton.joints()) names.push_back(j.name);
    const std::vector<double> ones(h.dim(1), 1.0);
    const HypergraphKernel k = hypergraph_kernel(h, ones, names);
    json rows = json::array();
    for (std::size_t i = 0; i < k.matrix.dim(0); ++i)
        rows.push_back(std::vector<double>(k.matrix.data().begin() + i * k.matrix.dim(1),
                                           k.matrix.data().begin() + (i + 1) * k.matrix.dim(1)));
    return json{{"matrix", rows}, {"vertex_degrees", k.vertex_degrees}, {"edge_degrees", k.edge_degrees}};
}

int cmd_kernels(const RunConfig& c, std::ostream& out) {
    const Skeleton skeleton = resolve_skeleton(c);
    const GraphKernel g = graph_kernel(adjacency(skeleton));
    json rows = json::array();
    for (std::size_t i = 0; i < g.matrix.dim(0); ++i)
        rows.push_back(std::vector<double>(g.matrix.data().begin() + i * g.matrix.dim(1),
                                           g.matrix.data().begin() + (i + 1) * g.matrix.dim(1)));
    json names = json::array();
    for (const auto& j : skeleton.joints()) names.push_back(j.name);
    const json dump{{"joints", names},
                    {"joint", {{"matrix", rows}, {"degrees", g.degrees}}},
                    {"part", kernel_json(skeleton, HyperScale::kPart)},
                    {"body", kernel_json(skeleton, HyperScale::kBody)}};
    const fs::path dir = prepare_out(c);
    write_text(dir / "kernels.json", dump.dump(2) + "\n");
    out << dump.dump(2) << '\n';
    return 0;
}

void write_error(std::ostream& err, const std::string& kind, const std::string& message) {
    err << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Hypergraph-GCN diffusion lifter for 2D-to-3D human pose"};
    app.require_subcommand(1);
    Flags f;

    auto* synth = app.add_subcommand("synth", "generate a synthetic pose-record file");
    add_shared(synth, f);
    synth->add_option("--count", f.count, "number of records");
    synth->add_option("--noise-2d", f.noise_2d, "std-dev of 2D keypoint noise");

    auto* train = app.add_subcommand("train", "train a denoiser on pose records");
    add_shared(train, f);
    train->add_option("--data", f.data, "training records (JSON lines)");
    train->add_option("--epochs", f.epochs, "passes over the training set");
    train->add_option("--batch-size", f.batch_size, "records per optimizer step");
    train->add_option("--noise-draws", f.noise_draws, "(t, eps) draws per record per epoch");
    train->add_option("--lr", f.lr, "Adam learning rate");
    train->add_option("--lr-decay-start", f.lr_decay_start, "fraction of steps before linear lr decay (1 = constant)");

    auto* sample_cmd = app.add_subcommand("sample", "write multi-hypothesis predictions");
    add_shared(sample_cmd, f);
    sample_cmd->add_option("--checkpoint", f.checkpoint, "trained checkpoint");
    sample_cmd->add_option("--data", f.data, "input records (JSON lines)");
    sample_cmd->add_flag("--ddim-printed", f.ddim_printed, "use the 1 + abar_t - sigma^2 radicand (debug)");

    auto* eval = app.add_subcommand("eval", "score predictions against ground truth");
    add_shared(eval, f);
    eval->add_option("--predictions", f.predictions, "prediction file from 'sample'");
    eval->add_option("--data", f.data, "records with ground truth");

    auto* bench = app.add_subcommand("bench", "parameter count, FLOPs and throughput");
    add_shared(bench, f);
    bench->add_option("--checkpoint", f.checkpoint, "optional checkpoint to benchmark");
    bench->add_option("--bench-seconds", f.bench_seconds, "minimum timed duration; 0 skips timing");
    bench->add_option("--bench-batch", f.bench_batch, "inputs per timed sampling call");

    auto* kernels = app.add_subcommand("kernels", "dump graph and hypergraph kernels");
    add_shared(kernels, f);

    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) rev.pop_back();
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        write_error(err, "usage", e.what());
        return 2;
    }

    try {
        Resolved r = resolve(f);
        if (*synth) return cmd_synth(r.config, out);
        if (*train) return cmd_train(r.config, out);
        if (*sample_cmd) return cmd_sample(std::move(r), out, err);
        if (*eval) return cmd_eval(r.config, out);
        if (*bench) return cmd_bench(r.config, out);
        if (*kernels) return cmd_kernels(r.config, out);
    } catch (const Error& e) {
        write_error(err, e.kind(), e.what());
        return 1;
    } catch (const std::exception& e) {
        write_error(err, "internal", e.what());
        return 1;
    }
    return 1;
}

}  // namespace poselift::cli
