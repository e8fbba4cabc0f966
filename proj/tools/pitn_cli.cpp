#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pitn/io.hpp"
#include "pitn/workflow.hpp"

namespace fs = std::filesystem;
namespace wf = pitn::workflow;

namespace {

struct Options {
    std::optional<fs::path> config;
    std::vector<std::string> set;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
    fs::path out;
    fs::path input;
    fs::path models;

    std::optional<std::size_t> n_beats, n_subjects, epochs, steps;
    std::optional<double> gamma, y_shift, tau, epsilon, lr;
    std::optional<std::string> method;
    std::vector<std::string> bp;

    std::string param;
    std::vector<double> values;
};

template <class T>
void push(std::vector<std::string>& o, const char* key, const std::optional<T>& v)
{
    if (v)
        o.push_back(std::string(key) + "=" + std::to_string(*v));
}

void push_double(std::vector<std::string>& o, const char* key, const std::optional<double>& v)
{
    if (!v)
        return;
    std::ostringstream s;
    s.precision(17);
    s << *v;
    o.push_back(std::string(key) + "=" + s.str());
}

// File values first, then --set entries, then typed flags.
std::vector<std::string> overrides(const Options& opt)
{
    std::vector<std::string> o = opt.set;
    push(o, "seed", opt.seed);
    push(o, "jobs", opt.jobs);
    push(o, "synth.n_beats", opt.n_beats);
    push(o, "synth.n_subjects", opt.n_subjects);
    push(o, "train.epochs", opt.epochs);
    push(o, "pgd.steps", opt.steps);
    push_double(o, "train.gamma", opt.gamma);
    push_double(o, "train.y_shift", opt.y_shift);
    push_double(o, "train.tau", opt.tau);
    push_double(o, "pgd.epsilon", opt.epsilon);
    push_double(o, "train.learning_rate", opt.lr);
    if (opt.method)
        o.push_back("train.augmentation=\"" + *opt.method + "\"");
    if (!opt.bp.empty()) {
        std::string list = "train.bp_types=[";
        for (std::size_t i = 0; i < opt.bp.size(); ++i)
            list += (i ? ",\"" : "\"") + opt.bp[i] + "\"";
        o.push_back(list + "]");
    }
    return o;
}

void check_distinct(const fs::path& out, std::initializer_list<fs::path> inputs)
{
    for (const fs::path& in : inputs) {
        if (in.empty() || !fs::exists(in) || !fs::exists(out))
            continue;
        if (fs::equivalent(in, out))
            throw pitn::ConfigError("output directory " + out.string() + " must differ from input " + in.string());
    }
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Personalized beat-to-beat blood-pressure regression"};
    app.require_subcommand(1);
    app.set_version_flag("--version", PITN_VERSION);

    Options opt;
    app.add_option("--config", opt.config, "TOML configuration file")->check(CLI::ExistingFile);
    app.add_option("--set", opt.set, "Config override key=value; repeatable")->take_all();
    app.add_option("--seed", opt.seed, "Random seed");
    app.add_option("--jobs", opt.jobs, "Worker threads for train and sweep");
    app.add_option("-o,--out", opt.out, "Output directory")->required();

    auto* synth = app.add_subcommand("synth", "Generate synthetic recordings");
    synth->add_option("--n-beats", opt.n_beats, "Beats per subject");
    synth->add_option("--n-subjects", opt.n_subjects, "Number of subjects");

    auto* preprocess = app.add_subcommand("preprocess", "Segment recordings into beats");
    auto* split = app.add_subcommand("split", "Minimal-training split");
    auto* train = app.add_subcommand("train", "Train one model per subject and BP type");
    auto* augment = app.add_subcommand("augment", "Emit adversarial or flipped beats");
    auto* eval = app.add_subcommand("eval", "Evaluate trained models");
    auto* report = app.add_subcommand("report", "Aggregate evaluation results");
    auto* sweep = app.add_subcommand("sweep", "Train and evaluate over a parameter grid");

    for (CLI::App* sub : {preprocess, split, train, augment, eval, report, sweep})
        sub->add_option("-i,--input", opt.input, "Input directory")->required()->check(CLI::ExistingDirectory);
    for (CLI::App* sub : {augment, eval})
        sub->add_option("--models", opt.models, "Model directory from train")->required()->check(CLI::ExistingDirectory);
    for (CLI::App* sub : {train, augment, eval, sweep}) {
        sub->add_option("--bp", opt.bp, "BP types: sbp, dbp")->check(CLI::IsMember({"sbp", "dbp"}))->delimiter(',');
    }
    for (CLI::App* sub : {train, augment, sweep}) {
        sub->add_option("--gamma", opt.gamma, "Physics loss weight");
        sub->add_option("--y-shift", opt.y_shift, "Contrastive positive threshold in mmHg");
        sub->add_option("--tau", opt.tau, "Contrastive temperature");
        sub->add_option("--epsilon", opt.epsilon, "PGD budget");
        sub->add_option("--steps", opt.steps, "PGD steps");
        sub->add_option("--lr", opt.lr, "Learning rate");
        sub->add_option("--epochs", opt.epochs, "Training epochs");
    }
    augment->add_option("--method", opt.method, "pgd or flip")->check(CLI::IsMember({"pgd", "flip"}));
    sweep->add_option("--param", opt.param, "gamma, y_shift, tau, epsilon, steps, lr, sigma or epochs")->required();
    sweep->add_option("--values", opt.values, "Comma-separated grid")->required()->delimiter(',');

    for (CLI::App* sub : app.get_subcommands({}))
        sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        const pitn::AppConfig cfg = pitn::load_config(opt.config, overrides(opt));
        check_distinct(opt.out, {opt.input, opt.models});
        std::ostream& log = std::cerr;
        if (synth->parsed())
            wf::run_synth(cfg, opt.out, log);
        else if (preprocess->parsed())
            wf::run_preprocess(cfg, opt.input, opt.out, log);
        else if (split->parsed())
            wf::run_split(cfg, opt.input, opt.out, log);
        else if (train->parsed())
            wf::run_train(cfg, opt.input, opt.out, log);
        else if (augment->parsed())
            wf::run_augment(cfg, opt.input, opt.models, opt.out, log);
        else if (eval->parsed())
            wf::run_eval(cfg, opt.input, opt.models, opt.out, log);
        else if (report->parsed())
            wf::run_report(cfg, opt.input, opt.out, log);
        else if (sweep->parsed())
            wf::run_sweep(cfg, opt.input, opt.param, opt.values, opt.out, log);
        std::cout << opt.out.string() << '\n';
        return 0;
    } catch (const pitn::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const pitn::IngestError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return 1;
    } catch (const pitn::io::InputError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return 1;
    } catch (const pitn::NonFiniteError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
