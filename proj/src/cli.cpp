#include "moe_depth/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>

#include "moe_depth/config.hpp"
#include "moe_depth/detail/binary_io.hpp"
#include "moe_depth/error.hpp"
#include "moe_depth/gridio.hpp"
#include "moe_depth/keyvalue.hpp"
#include "moe_depth/parallel.hpp"
#include "moe_depth/pipeline.hpp"
#include "moe_depth/trainer.hpp"

namespace fs = std::filesystem;

namespace moe_depth {

namespace {

struct CommonArgs {
    std::string config_path;
    std::map<std::string, std::string> overrides;
};

// Registers --config and one --<key> option per schema entry.
void add_config_options(CLI::App& cmd, CommonArgs& args) {
    cmd.add_option("--config", args.config_path, "key=value configuration file");
    for (const auto& key : config_schema()) {
        auto* opt = cmd.add_option_function<std::string>(
            "--" + key.name, [&args, name = key.name](const std::string& v) { args.overrides[name] = v; },
            key.help + " [" + key.default_value + "]");
        opt->type_name(key.type == KeyType::Text ? "TEXT" : key.type == KeyType::Int ? "INT" : key.type == KeyType::Bool ? "BOOL" : "REAL");
    }
}

RunConfig resolve_config(const CommonArgs& args) {
    RunConfig cfg = args.config_path.empty() ? RunConfig{} : read_config(args.config_path);
    for (const auto& [k, v] : args.overrides)
        cfg.set(k, v);
    return cfg;
}

// Configuration errors surfaced by a component's own validation are usage errors.
template <class T, class F>
T validated(F&& make) {
    try {
        return make();
    } catch (const ContractError& e) {
        throw UsageError(e.what());
    }
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw IoError(dir, ec.message());
}

std::string join(const std::string& dir, const std::string& leaf) { return (fs::path(dir) / leaf).string(); }

struct Dataset {
    DatasetIndex index;
    std::vector<Scene> scenes;

    std::vector<Scene> split(bool test) const {
        std::vector<Scene> out;
        for (std::size_t i = 0; i < scenes.size(); ++i)
            if (index.is_test[i] == test)
                out.push_back(scenes[i]);
        return out;
    }
    std::vector<std::size_t> test_indices() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < scenes.size(); ++i)
            if (index.is_test[i])
                out.push_back(i);
        return out;
    }
};

Dataset load(const std::string& dir) {
    Dataset d;
    d.index = read_manifest(dir);
    for (const auto& s : d.index.scene_dirs)
        d.scenes.push_back(load_scene(s));
    return d;
}

std::string scene_name(const Dataset& d, std::size_t i) { return fs::path(d.index.scene_dirs[i]).filename().string(); }

int cmd_gen(const CommonArgs& args, const std::string& out_dir, std::ostream& out) {
    const RunConfig cfg = resolve_config(args);
    const SceneSpec spec = validated<SceneSpec>([&] {
        SceneSpec s = cfg.scene();
        s.validate();
        return s;
    });
    const auto count = static_cast<int>(cfg.get_int("count"));
    const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
    const auto scenes = make_dataset(spec, count, seed);
    save_dataset(scenes, spec, seed, out_dir);
    out << "wrote " << count << " scenes to " << out_dir << "\n";
    return kExitOk;
}

int cmd_train(const CommonArgs& args, const std::string& data_dir, const std::string& out_dir, std::ostream& out) {
    const RunConfig cfg = resolve_config(args);
    const NetConfig net = validated<NetConfig>([&] {
        NetConfig n = cfg.net();
        n.validate();
        return n;
    });
    const TrainConfig tc = cfg.train();
    const Dataset data = load(data_dir);
    const auto train_set = data.split(false);
    if (train_set.empty())
        throw FormatError(data_dir + ": dataset has no training scenes");

    const TrainResult res = train(net, tc, train_set);
    ensure_dir(out_dir);
    write_checkpoint(res.checkpoint, join(out_dir, "model.mdc"));
    detail::write_file_text(join(out_dir, "train.log"), format_log(res.log));
    detail::write_file_text(join(out_dir, "config.txt"), print_config(cfg));
    const auto test_set = data.split(true);
    const Scene& shown = test_set.empty() ? train_set.front() : test_set.front();
    const Prediction p = predict_scene(res.checkpoint, shown);
    export_color_image(p.gate.weights, ColorMode::GateArgmax, join(out_dir, "gate_argmax.ppm"));
    out << "trained " << tc.steps << " steps, final total loss "
        << (res.log.empty() ? std::string("n/a") : format_double(res.log.back().total)) << "\n";
    return kExitOk;
}

std::vector<double> parse_lambdas(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            const double v = parse_double(item, "--lambdas");
            if (!(v >= 0.0) || !std::isfinite(v))
                throw UsageError("--lambdas: values must be finite and nonnegative, got '" + item + "'");
            out.push_back(v);
        } catch (const FormatError& e) {
            throw UsageError(e.what());
        }
    }
    if (out.empty())
        throw UsageError("--lambdas: expected a comma-separated list of numbers");
    return out;
}

int cmd_ablate(const CommonArgs& args, const std::string& data_dir, const std::string& out_dir,
               const std::string& lambdas_text, std::ostream& out) {
    const RunConfig cfg = resolve_config(args);
    const std::vector<double> lambdas = lambdas_text.empty() ? kDefaultLambdas : parse_lambdas(lambdas_text);
    const NetConfig net = validated<NetConfig>([&] {
        NetConfig n = cfg.net();
        n.validate();
        return n;
    });
    const Dataset data = load(data_dir);
    const auto train_set = data.split(false), test_set = data.split(true);
    if (train_set.empty() || test_set.empty())
        throw FormatError(data_dir + ": ablation needs both training and test scenes");

    const auto rows = ablate_entropy(net, cfg.train(), train_set, test_set, lambdas);
    ensure_dir(out_dir);
    const std::string table = format_ablation(rows);
    detail::write_file_text(join(out_dir, "ablation.tsv"), table);
    for (std::size_t i = 0; i < rows.size(); ++i)
        export_color_image(rows[i].gate.weights, ColorMode::GateArgmax,
                           join(out_dir, "gate_lambda_" + std::to_string(i) + ".ppm"));
    out << table;
    return kExitOk;
}

int cmd_eval(const CommonArgs& args, const std::string& data_dir, const std::string& ckpt_path,
             const std::string& out_dir, bool oracle, std::ostream& out) {
    const RunConfig cfg = resolve_config(args);
    if (!oracle && ckpt_path.empty())
        throw UsageError("eval: --ckpt is required unless --oracle is given");
    EvalOptions opt;
    opt.edges = cfg.edges();
    opt.median_scaling = cfg.get_bool("median-scaling");
    opt.flying_k = static_cast<int>(cfg.get_int("flying-k"));
    opt.flying_ratio = cfg.get_real("flying-ratio");
    opt.confidence_percentile = cfg.get_real("confidence-mask");

    const Dataset data = load(data_dir);
    const auto idx = data.test_indices();
    if (idx.empty())
        throw FormatError(data_dir + ": dataset has no test scenes");
    std::optional<Checkpoint> ckpt;
    if (!oracle)
        ckpt = read_checkpoint(ckpt_path);

    std::vector<SceneEvaluation> evals(idx.size());
    parallel_for(idx.size(), [&](std::size_t i) {
        const Scene& s = data.scenes[idx[i]];
        const Prediction p = oracle ? oracle_prediction(s) : predict_scene(*ckpt, s);
        evals[i] = evaluate_scene(p, s, opt);
    });

    ensure_dir(out_dir);
    std::string summary;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const std::string name = scene_name(data, idx[i]);
        detail::write_file_text(join(out_dir, name + ".txt"), format_scene_record(name, evals[i]));
        summary += summary_row(name, evals[i]);
    }
    const std::string mean = summary_mean_row(evals);
    summary += mean;
    detail::write_file_text(join(out_dir, "summary.tsv"), summary);
    out << mean;
    return kExitOk;
}

int cmd_render(const CommonArgs& args, const std::string& data_dir, const std::string& ckpt_path,
               const std::string& out_dir, const std::vector<std::string>& scene_ids, std::ostream& out) {
    resolve_config(args);  // rejects malformed overrides even though rendering uses none
    const Dataset data = load(data_dir);
    std::vector<std::size_t> picks;
    for (const auto& id : scene_ids) {
        std::optional<std::size_t> found;
        for (std::size_t i = 0; i < data.scenes.size() && !found; ++i)
            if (id == scene_name(data, i))
                found = i;
        if (!found && !id.empty() && id.size() < 10 && id.find_first_not_of("0123456789") == std::string::npos &&
            std::stoul(id) < data.scenes.size())
            found = std::stoul(id);
        if (!found)
            throw UsageError("render: unknown scene '" + id + "'");
        picks.push_back(*found);
    }
    const Checkpoint ckpt = read_checkpoint(ckpt_path);
    ensure_dir(out_dir);
    for (auto i : picks) {
        const Scene& s = data.scenes[i];
        const std::string name = scene_name(data, i);
        const Prediction p = predict_scene(ckpt, s);
        export_color_image(p.depth, ColorMode::DepthColormap, join(out_dir, name + "_depth.ppm"));
        export_color_image(p.gate.weights, ColorMode::GateArgmax, join(out_dir, name + "_gate_argmax.ppm"));
        export_color_image(p.gate.weights, ColorMode::GateBlend, join(out_dir, name + "_gate_blend.ppm"));
        export_ply(estimate_normals(unproject(p.depth, s.intrinsics)), join(out_dir, name + "_cloud.ply"));
        out << "rendered " << name << "\n";
    }
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Mixture-of-experts depth head: data generation, training, evaluation", "moe_depth"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    CommonArgs common;
    std::string out_dir, data_dir, ckpt_path, lambdas;
    std::vector<std::string> scenes;
    bool oracle = false;

    auto* gen = app.add_subcommand("gen", "generate a synthetic scene dataset");
    add_config_options(*gen, common);
    gen->add_option("--out", out_dir, "output directory")->required();

    auto* trn = app.add_subcommand("train", "train a model on the training split");
    add_config_options(*trn, common);
    trn->add_option("--data", data_dir, "dataset directory")->required();
    trn->add_option("--out", out_dir, "output directory")->required();

    auto* abl = app.add_subcommand("ablate", "sweep the entropy weight");
    add_config_options(*abl, common);
    abl->add_option("--data", data_dir, "dataset directory")->required();
    abl->add_option("--out", out_dir, "output directory")->required();
    abl->add_option("--lambdas", lambdas, "comma-separated entropy weights [0.01,0.001,0.0001,0]");

    auto* evl = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_config_options(*evl, common);
    evl->add_option("--data", data_dir, "dataset directory")->required();
    evl->add_option("--ckpt", ckpt_path, "checkpoint file");
    evl->add_option("--out", out_dir, "report directory")->required();
    evl->add_flag("--oracle", oracle, "evaluate ground truth against itself");

    auto* rnd = app.add_subcommand("render", "export depth, gate images and point clouds");
    add_config_options(*rnd, common);
    rnd->add_option("--data", data_dir, "dataset directory")->required();
    rnd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
    rnd->add_option("--out", out_dir, "output directory")->required();
    rnd->add_option("--scene", scenes, "scene index or directory name (repeatable)")->required();

    std::vector<std::string> argv(args.rbegin(), args.rend());
    try {
        app.parse(argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        const CLI::App* sub = nullptr;
        for (auto* s : {gen, trn, abl, evl, rnd})
            if (s->parsed())
                sub = s;
        err << (sub ? sub->help() : app.help());
        return kExitUsage;
    }

    try {
        if (gen->parsed())
            return cmd_gen(common, out_dir, out);
        if (trn->parsed())
            return cmd_train(common, data_dir, out_dir, out);
        if (abl->parsed())
            return cmd_ablate(common, data_dir, out_dir, lambdas, out);
        if (evl->parsed())
            return cmd_eval(common, data_dir, ckpt_path, out_dir, oracle, out);
        return cmd_render(common, data_dir, ckpt_path, out_dir, scenes, out);
    } catch (const UsageError& e) {
        err << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

}  // namespace moe_depth
