#include "umrl/cli.hpp"

#include <CLI11.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <ostream>
#include <set>

namespace umrl::cli {

namespace fs = std::filesystem;

namespace {

const std::map<std::string, std::set<std::string>>& known_keys()
{
    static const std::map<std::string, std::set<std::string>> keys = {
        {"train",
         {"data", "checkpoint", "log", "log_every", "variant", "seed", "epochs", "batch_size", "steps_per_epoch",
          "lr_initial", "lr_after_epoch10", "lr_switch_epoch", "lambda1_initial", "lambda1_switched", "lambda2",
          "conf_switch_threshold", "adam_beta1", "adam_beta2", "adam_eps", "augment", "crop", "feature_weights", "dump_dir"}},
        {"ablate", {"train_data", "test_data", "report", "cycle_step", "workers"}},
    };
    return keys;
}

/// Typed access to one section with key-qualified error messages.
class Section {
public:
    Section(const ConfigSections& all, std::string name, fs::path base)
        : name_(std::move(name)), base_(std::move(base))
    {
        if (auto it = all.find(name_); it != all.end()) values_ = it->second;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string qualified(const std::string& key) const { return name_ + "." + key; }

    const std::string& raw(const std::string& key) const
    {
        auto it = values_.find(key);
        if (it == values_.end()) throw UsageError("missing required config key " + qualified(key));
        return it->second;
    }

    template <typename T>
    void read(const std::string& key, T& target) const
    {
        if (!has(key)) return;
        const std::string& text = raw(key);
        try {
            std::size_t used = 0;
            if constexpr (std::is_same_v<T, int>) {
                target = std::stoi(text, &used);
            } else if constexpr (std::is_same_v<T, std::uint64_t>) {
                if (!text.empty() && text[0] == '-') throw std::invalid_argument("negative");
                target = std::stoull(text, &used);
            } else {
                target = std::stod(text, &used);
            }
            if (used != text.size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            throw UsageError("config key " + qualified(key) + ": cannot parse '" + text + "'");
        }
    }

    void read_bool(const std::string& key, bool& target) const
    {
        if (!has(key)) return;
        const std::string& text = raw(key);
        if (text == "true" || text == "1") {
            target = true;
        } else if (text == "false" || text == "0") {
            target = false;
        } else {
            throw UsageError("config key " + qualified(key) + ": expected true or false, got '" + text + "'");
        }
    }

    fs::path path(const std::string& key) const
    {
        const fs::path p = raw(key);
        return p.is_absolute() ? p : base_ / p;
    }

    fs::path existing_dir(const std::string& key) const
    {
        const fs::path p = path(key);
        if (!fs::is_directory(p)) throw UsageError("config key " + qualified(key) + ": directory " + p.string() + " does not exist");
        return p;
    }

private:
    std::string name_;
    fs::path base_;
    std::map<std::string, std::string> values_;
};

fs::path config_base(const fs::path& config_path)
{
    const fs::path parent = config_path.parent_path();
    return parent.empty() ? fs::path(".") : parent;
}

std::uint64_t seed_override(std::uint64_t configured)
{
    const char* env = std::getenv("UMRL_SEED");
    if (env == nullptr || *env == '\0') return configured;
    try {
        std::size_t used = 0;
        const std::string text = env;
        if (text[0] == '-') throw std::invalid_argument("negative");
        const std::uint64_t v = std::stoull(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw UsageError(std::string("UMRL_SEED must be a nonnegative integer, got '") + env + "'");
    }
}

TrainConfig read_train_config(const Section& s, int& log_every)
{
    TrainConfig cfg;
    if (s.has("variant")) {
        try {
            cfg.variant = parse_variant(s.raw("variant"));
        } catch (const std::invalid_argument& e) {
            throw UsageError("config key " + s.qualified("variant") + ": " + e.what());
        }
    }
    s.read("seed", cfg.seed);
    s.read("epochs", cfg.epochs);
    s.read("batch_size", cfg.batch_size);
    s.read("steps_per_epoch", cfg.steps_per_epoch);
    s.read("lr_initial", cfg.lr_initial);
    s.read("lr_after_epoch10", cfg.lr_after_epoch10);
    s.read("lr_switch_epoch", cfg.lr_switch_epoch);
    s.read("lambda1_initial", cfg.lambda1_initial);
    s.read("lambda1_switched", cfg.lambda1_switched);
    s.read("lambda2", cfg.lambda2);
    s.read("conf_switch_threshold", cfg.conf_switch_threshold);
    s.read("adam_beta1", cfg.adam_beta1);
    s.read("adam_beta2", cfg.adam_beta2);
    s.read("adam_eps", cfg.adam_eps);
    s.read_bool("augment", cfg.augment);
    s.read("crop", cfg.crop);
    s.read("log_every", log_every);
    if (s.has("feature_weights")) {
        cfg.feature_weights = s.path("feature_weights");
        if (!fs::is_regular_file(cfg.feature_weights)) {
            throw UsageError("config key " + s.qualified("feature_weights") + ": file " + cfg.feature_weights.string() +
                             " does not exist");
        }
    }
    if (s.has("dump_dir")) cfg.dump_dir = s.path("dump_dir");
    cfg.seed = seed_override(cfg.seed);
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("config section [train]: ") + e.what());
    }
    if (log_every < 1) throw UsageError("config key " + s.qualified("log_every") + " must be >= 1");
    return cfg;
}

void ensure_parent(const fs::path& file, const std::string& key)
{
    const fs::path parent = file.parent_path();
    if (parent.empty()) return;
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (ec || !fs::is_directory(parent)) throw UsageError("config key " + key + ": cannot create " + parent.string());
}

std::vector<RainyPair> load_dataset(const fs::path& root, std::ostream& err)
{
    LoadedDataset d = load_pair_dataset(root);
    if (d.warnings > 0) err << "warning: " << d.warnings << " unmatched file(s) under " << root.string() << " skipped\n";
    if (d.pairs.empty()) throw UsageError("no matched rainy/clean pairs under " + root.string());
    return std::move(d.pairs);
}

StepCallback progress(std::ostream& err, int every, std::ofstream* log)
{
    return [&err, every, log](const StepLog& s) {
        if (log != nullptr) *log << train_log_line(s) << '\n';
        if (s.step % every == 0) {
            err << "step " << s.step << " epoch " << s.epoch << " total " << s.total << " mean_conf " << s.mean_conf
                << " lambda1 " << s.lambda1 << " lr " << s.lr << '\n';
        }
    };
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

/// Parses "lo:hi" or a single value into [lo, hi].
template <typename T>
void parse_range(const std::string& flag, const std::string& text, T& lo, T& hi)
{
    auto number = [&](const std::string& s) -> T {
        std::size_t used = 0;
        T v{};
        try {
            if constexpr (std::is_same_v<T, int>) {
                v = std::stoi(s, &used);
            } else {
                v = std::stod(s, &used);
            }
        } catch (const std::exception&) {
            used = std::string::npos;
        }
        if (used != s.size()) throw UsageError("--" + flag + ": cannot parse '" + text + "'");
        return v;
    };
    const auto colon = text.find(':');
    if (colon == std::string::npos) {
        lo = hi = number(text);
    } else {
        lo = number(text.substr(0, colon));
        hi = number(text.substr(colon + 1));
    }
}

Image to_rgb(const Image& img)
{
    if (img.channels() == 3) return img;
    if (img.channels() != 1) throw UsageError("expected a grayscale or RGB image, got " + img.shape_string());
    Image rgb(img.height(), img.width(), 3);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < img.height(); ++y) std::copy_n(img.row(0, y), img.width(), rgb.row(c, y));
    }
    return rgb;
}

int padded_size(int n) { return (n + 15) / 16 * 16; }

struct GenArgs {
    fs::path out;
    int count = 8;
    std::uint64_t seed = 0;
    int height = 64;
    int width = 64;
    std::string angle;
    std::string density;
    std::string length;
    std::string intensity;
};

int cmd_gen(const GenArgs& a, std::ostream& out)
{
    StreakRanges ranges;
    if (!a.angle.empty()) parse_range("angle", a.angle, ranges.angle_min, ranges.angle_max);
    if (!a.density.empty()) parse_range("density", a.density, ranges.density_min, ranges.density_max);
    if (!a.length.empty()) parse_range("length", a.length, ranges.length_min, ranges.length_max);
    if (!a.intensity.empty()) parse_range("intensity", a.intensity, ranges.intensity_min, ranges.intensity_max);
    try {
        ranges.validate();
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (a.count < 0) throw UsageError("--count must be >= 0");
    if (a.height < 16 || a.width < 16) throw UsageError("--height and --width must be >= 16");
    const auto corpus = generate_corpus(a.count, a.height, a.width, ranges, a.seed);
    write_corpus(a.out, corpus, ranges, a.seed);
    out << "wrote " << corpus.size() << " pair(s) to " << a.out.string() << '\n';
    return kExitOk;
}

int cmd_train(const fs::path& config, std::ostream& out, std::ostream& err)
{
    const TrainJob job = load_train_job(config);
    const auto data = load_dataset(job.data, err);
    std::ofstream log(job.log, std::ios::binary);
    if (!log) throw UsageError("cannot write training log " + job.log.string());
    log << kTrainLogHeader << '\n';
    const TrainResult result = train(data, job.train, progress(err, job.log_every, &log));
    save_checkpoint(job.checkpoint, result.checkpoint);
    out << "checkpoint " << job.checkpoint.string() << " after " << result.checkpoint.schedule.step << " step(s)\n";
    return kExitOk;
}

struct DerainArgs {
    fs::path in;
    fs::path ckpt;
    fs::path out;
    std::string external;
    bool cycle_spin = false;
    int step = 50;
    int workers = 1;
};

int cmd_derain(const DerainArgs& a, std::ostream& out)
{
    if (a.ckpt.empty() == a.external.empty()) throw UsageError("derain needs exactly one of --ckpt or --external");
    if (a.step < 1) throw UsageError("--step must be >= 1");
    if (!fs::is_regular_file(a.in)) throw UsageError("--in: " + a.in.string() + " is not a file");

    PngInfo info;
    const Image input = to_rgb(read_png(a.in, &info));
    const Image padded = pad_reflect(input, padded_size(input.height()) - input.height(),
                                     padded_size(input.width()) - input.width());

    std::optional<UmrlWeights> weights;
    Variant variant = Variant::UMRL;
    Restorer restorer;
    if (!a.ckpt.empty()) {
        if (!fs::is_regular_file(a.ckpt)) throw UsageError("--ckpt: " + a.ckpt.string() + " is not a file");
        const Checkpoint ckpt = load_checkpoint(a.ckpt);
        weights.emplace(ckpt.to_weights());
        variant = ckpt.variant;
        restorer = [&](const Image& y) { return derain(y, *weights, variant); };
    } else {
        restorer = external_restorer(a.external);
    }
    const Image restored =
        a.cycle_spin
            ? cycle_spin_restore(restorer, padded, make_shift_grid(padded.height(), padded.width(), a.step), a.workers)
            : restorer(padded);
    write_png(a.out, crop(restored, input.height(), input.width()), info.bit_depth == 16 ? 16 : 8);
    out << "wrote " << a.out.string() << '\n';
    return kExitOk;
}

struct EvalArgs {
    fs::path pred;
    fs::path gt;
    fs::path ckpt;
    fs::path data;
    fs::path report = "eval_report.csv";
    bool cycle_spin = false;
    int step = 50;
    int workers = 1;
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream& err)
{
    const bool by_dirs = !a.pred.empty() || !a.gt.empty();
    const bool by_ckpt = !a.ckpt.empty() || !a.data.empty();
    if (by_dirs == by_ckpt) throw UsageError("eval needs either --pred and --gt, or --ckpt and --data");

    EvalReport report;
    if (by_dirs) {
        if (a.pred.empty() || a.gt.empty()) throw UsageError("eval needs both --pred and --gt");
        for (const auto& d : {a.pred, a.gt}) {
            if (!fs::is_directory(d)) throw UsageError(d.string() + " is not a directory");
        }
        const LoadedDataset matched = load_matched_pngs(a.pred, a.gt);
        if (matched.warnings > 0) err << "warning: " << matched.warnings << " unmatched file(s) skipped\n";
        if (matched.pairs.empty()) throw UsageError("no file names shared by " + a.pred.string() + " and " + a.gt.string());
        std::vector<std::string> names;
        std::vector<Image> pred;
        std::vector<Image> gt;
        for (const auto& p : matched.pairs) {
            names.push_back(p.name);
            pred.push_back(p.rainy);
            gt.push_back(p.clean);
        }
        report = evaluate_images(names, pred, gt);
    } else {
        if (a.ckpt.empty() || a.data.empty()) throw UsageError("eval needs both --ckpt and --data");
        if (!fs::is_regular_file(a.ckpt)) throw UsageError("--ckpt: " + a.ckpt.string() + " is not a file");
        if (!fs::is_directory(a.data)) throw UsageError("--data: " + a.data.string() + " is not a directory");
        if (a.step < 1) throw UsageError("--step must be >= 1");
        const auto data = load_dataset(a.data, err);
        report = evaluate(load_checkpoint(a.ckpt), data, EvalOptions{a.cycle_spin, a.step, a.workers});
    }
    out << report.render_text();
    write_text(a.report, report.render_csv());
    return kExitOk;
}

int cmd_ablate(const fs::path& config, std::ostream& out, std::ostream& err)
{
    const AblateJob job = load_ablate_job(config);
    const auto train_set = load_dataset(job.train_data, err);
    const auto test_set = load_dataset(job.test_data, err);
    const AblationResult result =
        ablate(train_set, test_set, job.train, AblationOptions{job.cycle_step, job.workers}, progress(err, job.log_every, nullptr));
    const std::string text = result.render_text();
    out << text;
    out << "ordering UMRL >= BN+RN >= BN: " << (result.ordering_holds() ? "holds" : "violated") << '\n';
    out << "largest cycle-spinning PSNR drop: " << result.worst_cycle_spin_drop() << " dB\n";
    write_text(job.report, text);
    fs::path csv = job.report;
    csv.replace_extension(".csv");
    write_text(csv, result.render_csv());
    return kExitOk;
}

} // namespace

ConfigSections read_config(const fs::path& path)
{
    if (!fs::is_regular_file(path)) throw UsageError("config file " + path.string() + " does not exist");
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::read_ini(path.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw UsageError("config " + path.string() + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    ConfigSections sections;
    for (const auto& [name, section] : tree) {
        if (section.empty()) throw UsageError("config key '" + name + "' lies outside any section");
        auto known = known_keys().find(name);
        if (known == known_keys().end()) throw UsageError("unknown config section [" + name + "]");
        for (const auto& [key, value] : section) {
            if (!known->second.count(key)) throw UsageError("unknown config key " + name + "." + key);
            sections[name][key] = value.data();
        }
    }
    return sections;
}

TrainJob load_train_job(const fs::path& config_path)
{
    const ConfigSections all = read_config(config_path);
    const Section s(all, "train", config_base(config_path));
    TrainJob job;
    job.train = read_train_config(s, job.log_every);
    job.data = s.existing_dir("data");
    job.checkpoint = s.path("checkpoint");
    ensure_parent(job.checkpoint, s.qualified("checkpoint"));
    if (s.has("log")) {
        job.log = s.path("log");
    } else {
        job.log = job.checkpoint;
        job.log.replace_extension(".log.csv");
    }
    ensure_parent(job.log, s.qualified("log"));
    return job;
}

AblateJob load_ablate_job(const fs::path& config_path)
{
    const ConfigSections all = read_config(config_path);
    const fs::path base = config_base(config_path);
    const Section t(all, "train", base);
    const Section s(all, "ablate", base);
    AblateJob job;
    job.train = read_train_config(t, job.log_every);
    job.train_data = s.existing_dir("train_data");
    job.test_data = s.existing_dir("test_data");
    job.report = s.path("report");
    ensure_parent(job.report, s.qualified("report"));
    s.read("cycle_step", job.cycle_step);
    s.read("workers", job.workers);
    if (job.cycle_step < 1) throw UsageError("config key ablate.cycle_step must be >= 1");
    if (job.workers < 1) throw UsageError("config key ablate.workers must be >= 1");
    return job;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Single-image de-raining with residual and confidence maps", "umrl"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen", "Write a synthetic paired dataset");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();
    gen_cmd->add_option("--count", gen.count, "Number of pairs")->capture_default_str();
    gen_cmd->add_option("--seed", gen.seed, "Corpus seed")->capture_default_str();
    gen_cmd->add_option("--height", gen.height, "Image height")->capture_default_str();
    gen_cmd->add_option("--width", gen.width, "Image width")->capture_default_str();
    gen_cmd->add_option("--angle", gen.angle, "Streak angle from vertical, degrees, V or LO:HI");
    gen_cmd->add_option("--density", gen.density, "Streak pixel fraction, V or LO:HI");
    gen_cmd->add_option("--length", gen.length, "Streak length in pixels, V or LO:HI");
    gen_cmd->add_option("--intensity", gen.intensity, "Streak brightness, V or LO:HI");

    fs::path train_config;
    auto* train_cmd = app.add_subcommand("train", "Train one network from a config file");
    train_cmd->add_option("--config", train_config, "Config file")->required();

    DerainArgs der;
    auto* derain_cmd = app.add_subcommand("derain", "De-rain one PNG");
    derain_cmd->add_option("--in", der.in, "Input PNG")->required();
    derain_cmd->add_option("--ckpt", der.ckpt, "Checkpoint");
    derain_cmd->add_option("--external", der.external, "External restorer command with {in} and {out}");
    derain_cmd->add_option("--out", der.out, "Output PNG")->required();
    derain_cmd->add_flag("--cycle-spin", der.cycle_spin, "Average over cyclic shifts");
    derain_cmd->add_option("--step", der.step, "Shift grid step in pixels")->capture_default_str();
    derain_cmd->add_option("--workers", der.workers, "Concurrent restorations")->capture_default_str();

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "PSNR|SSIM report");
    eval_cmd->add_option("--pred", ev.pred, "Directory of restored PNGs");
    eval_cmd->add_option("--gt", ev.gt, "Directory of reference PNGs");
    eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint to evaluate");
    eval_cmd->add_option("--data", ev.data, "Dataset root with rainy/ and clean/");
    eval_cmd->add_flag("--cycle-spin", ev.cycle_spin, "Average over cyclic shifts");
    eval_cmd->add_option("--step", ev.step, "Shift grid step in pixels")->capture_default_str();
    eval_cmd->add_option("--workers", ev.workers, "Concurrent restorations")->capture_default_str();
    eval_cmd->add_option("--report", ev.report, "CSV report path")->capture_default_str();

    fs::path ablate_config;
    auto* ablate_cmd = app.add_subcommand("ablate", "Train and compare BN, BN+RN and UMRL");
    ablate_cmd->add_option("--config", ablate_config, "Config file")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        if (*gen_cmd) return cmd_gen(gen, out);
        if (*train_cmd) return cmd_train(train_config, out, err);
        if (*derain_cmd) return cmd_derain(der, out);
        if (*eval_cmd) return cmd_eval(ev, out, err);
        if (*ablate_cmd) return cmd_ablate(ablate_config, out, err);
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const TrainingAborted& e) {
        err << "training aborted: " << e.what() << '\n';
        return kExitRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}

} // namespace umrl::cli
