#include "pitn/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include <toml.hpp>

#include "pitn/io.hpp"

namespace pitn {

namespace {

using Setter = std::function<void(AppConfig&, const toml::node&)>;

[[noreturn]] void type_error(const std::string& key, const char* expected)
{
    throw ConfigError("config key " + key + " must be " + expected);
}

double as_double(const std::string& key, const toml::node& n)
{
    if (auto v = n.value<double>())
        return *v;
    type_error(key, "a number");
}

std::int64_t as_int(const std::string& key, const toml::node& n)
{
    if (!n.is_integer())
        type_error(key, "an integer");
    return *n.value<std::int64_t>();
}

std::size_t as_size(const std::string& key, const toml::node& n)
{
    const std::int64_t v = as_int(key, n);
    if (v < 0)
        throw ConfigError("config key " + key + " must be >= 0");
    return static_cast<std::size_t>(v);
}

bool as_bool(const std::string& key, const toml::node& n)
{
    if (!n.is_boolean())
        type_error(key, "true or false");
    return *n.value<bool>();
}

std::string as_string(const std::string& key, const toml::node& n)
{
    if (!n.is_string())
        type_error(key, "a string");
    return *n.value<std::string>();
}

template <class T>
std::vector<T> as_array(const std::string& key, const toml::node& n,
                        const std::function<T(const std::string&, const toml::node&)>& item)
{
    const toml::array* arr = n.as_array();
    if (!arr)
        type_error(key, "an array");
    std::vector<T> out;
    for (const toml::node& e : *arr)
        out.push_back(item(key, e));
    return out;
}

#define PITN_DOUBLE(path, field) {path, [](AppConfig& c, const toml::node& n) { c.field = as_double(path, n); }}
#define PITN_SIZE(path, field) {path, [](AppConfig& c, const toml::node& n) { c.field = as_size(path, n); }}
#define PITN_BOOL(path, field) {path, [](AppConfig& c, const toml::node& n) { c.field = as_bool(path, n); }}

const std::map<std::string, Setter>& schema()
{
    static const std::map<std::string, Setter> keys = {
        {"seed", [](AppConfig& c, const toml::node& n) { c.seed = static_cast<std::uint64_t>(as_size("seed", n)); }},
        PITN_SIZE("jobs", jobs),
        PITN_SIZE("synth.n_subjects", n_subjects),
        PITN_SIZE("synth.n_beats", synth.n_beats),
        PITN_DOUBLE("synth.sample_rate_hz", synth.sample_rate_hz),
        PITN_DOUBLE("synth.base_period_s", synth.base_period_s),
        PITN_DOUBLE("synth.amplitude", synth.amplitude),
        PITN_DOUBLE("synth.baseline", synth.baseline),
        PITN_DOUBLE("synth.noise_std", synth.noise_std),
        PITN_DOUBLE("synth.drift_rate", synth.drift.rate),
        PITN_DOUBLE("synth.drift_amplitude_depth", synth.drift.amplitude_depth),
        PITN_DOUBLE("synth.drift_period_depth", synth.drift.period_depth),
        PITN_DOUBLE("synth.drift_delay_depth", synth.drift.delay_depth),
        PITN_BOOL("synth.affine", synth_affine),
        PITN_SIZE("segment.fixed_len", segment.fixed_len),
        PITN_SIZE("segment.channel", segment.channel),
        PITN_BOOL("segment.invert", segment.invert),
        PITN_DOUBLE("segment.upstroke_fraction", segment.upstroke_fraction),
        PITN_DOUBLE("segment.upstroke_percentile", segment.upstroke_percentile),
        PITN_DOUBLE("segment.refractory_s", segment.refractory_s),
        PITN_DOUBLE("segment.lead_fraction", segment.lead_fraction),
        PITN_DOUBLE("segment.min_bpm", segment.min_bpm),
        PITN_DOUBLE("segment.max_bpm", segment.max_bpm),
        PITN_DOUBLE("split.bin_width", bin_width),
        PITN_SIZE("model.d_model", train.model.d_model),
        PITN_SIZE("model.num_blocks", train.model.num_blocks),
        {"model.kernel_sizes",
         [](AppConfig& c, const toml::node& n) {
             c.train.model.kernel_sizes = as_array<std::size_t>("model.kernel_sizes", n, as_size);
         }},
        PITN_DOUBLE("train.learning_rate", train.learning_rate),
        PITN_SIZE("train.epochs", train.epochs),
        PITN_SIZE("train.patience", train.patience),
        PITN_BOOL("train.early_stop", train.early_stop),
        PITN_DOUBLE("train.gamma", train.gamma),
        PITN_DOUBLE("train.y_shift", train.y_shift),
        PITN_DOUBLE("train.tau", train.tau),
        PITN_BOOL("train.normalize_embeddings", train.normalize_embeddings),
        PITN_BOOL("train.detach_grad_u", train.detach_grad_u),
        PITN_BOOL("train.adversarial", train.adversarial),
        PITN_BOOL("train.contrastive", train.contrastive),
        {"train.augmentation",
         [](AppConfig& c, const toml::node& n) {
             c.train.augmentation = parse_augmentation(as_string("train.augmentation", n));
         }},
        {"train.bp_types",
         [](AppConfig& c, const toml::node& n) {
             const auto names = as_array<std::string>("train.bp_types", n, as_string);
             c.bp_types.clear();
             for (const std::string& s : names)
                 c.bp_types.push_back(parse_bp_type(s));
         }},
        PITN_DOUBLE("pgd.epsilon", train.pgd.epsilon),
        PITN_SIZE("pgd.steps", train.pgd.steps),
        {"pgd.eta", [](AppConfig& c, const toml::node& n) { c.train.pgd.eta = as_double("pgd.eta", n); }},
        PITN_DOUBLE("pgd.sigma", train.pgd.sigma),
        PITN_BOOL("pgd.project_epsilon", train.pgd.project_epsilon),
        PITN_BOOL("pgd.grad_at_adversarial", train.pgd.grad_at_adversarial),
    };
    return keys;
}

#undef PITN_DOUBLE
#undef PITN_SIZE
#undef PITN_BOOL

void collect_leaves(const toml::table& t, const std::string& prefix, std::map<std::string, const toml::node*>& out)
{
    for (const auto& [k, v] : t) {
        const std::string key = prefix.empty() ? std::string(k.str()) : prefix + "." + std::string(k.str());
        if (const toml::table* sub = v.as_table())
            collect_leaves(*sub, key, out);
        else
            out[key] = &v;
    }
}

toml::table parse_toml(std::string_view text, const std::string& origin)
{
    try {
        return toml::parse(text, std::string_view(origin));
    } catch (const toml::parse_error& e) {
        std::ostringstream s;
        s << e;
        throw ConfigError("invalid TOML in " + origin + ": " + s.str());
    }
}

/// Value of one `key=value` override as a single-entry table.
toml::table override_table(const std::string& entry)
{
    const std::size_t eq = entry.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + entry + "' must have the form key=value");
    const std::string key = entry.substr(0, eq);
    const std::string value = entry.substr(eq + 1);
    try {
        const std::string doc = key + " = " + value;
        return toml::parse(std::string_view(doc), std::string_view("override"));
    } catch (const toml::parse_error&) {
        // Bare words such as `flip` are strings.
        return parse_toml(key + " = \"" + value + "\"", "override '" + entry + "'");
    }
}

void merge_into(toml::table& base, const toml::table& over)
{
    for (const auto& [k, v] : over) {
        toml::table* dst = base[k].as_table();
        const toml::table* src = v.as_table();
        if (dst && src)
            merge_into(*dst, *src);
        else
            base.insert_or_assign(k, v);
    }
}

std::string fmt(double v)
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, ptr);
    if (s.find_first_of(".eEn") == std::string::npos)
        s += ".0";
    return s;
}

std::string fmt(bool v)
{
    return v ? "true" : "false";
}

}  // namespace

void AppConfig::validate() const
{
    if (jobs == 0)
        throw ConfigError("jobs must be at least 1");
    if (n_subjects == 0)
        throw ConfigError("synth.n_subjects must be at least 1");
    if (!(bin_width > 0.0))
        throw ConfigError("split.bin_width must be positive");
    if (bp_types.empty())
        throw ConfigError("train.bp_types must name at least one of sbp, dbp");
    if (segment.fixed_len < 8)
        throw ConfigError("segment.fixed_len must be at least 8");
    train.validate();
    ModelHyper h = train.model;
    h.seq_len = segment.fixed_len;
    h.validate();
}

AppConfig parse_config(std::string_view toml_text, const std::vector<std::string>& overrides)
{
    toml::table table = parse_toml(toml_text, "config");
    for (const std::string& o : overrides)
        merge_into(table, override_table(o));

    std::map<std::string, const toml::node*> leaves;
    collect_leaves(table, "", leaves);
    AppConfig cfg;
    for (const auto& [key, node] : leaves) {
        const auto it = schema().find(key);
        if (it == schema().end())
            throw ConfigError("unknown config key '" + key + "'");
        it->second(cfg, *node);
    }
    cfg.synth.bp_map = cfg.synth_affine ? BpMap{}.affine() : BpMap{};
    cfg.synth.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

AppConfig load_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides)
{
    return parse_config(file ? io::read_text(*file) : std::string(), overrides);
}

std::string to_toml(const AppConfig& c)
{
    std::ostringstream s;
    s << "seed = " << c.seed << "\njobs = " << c.jobs << "\n";
    s << "\n[synth]\n"
      << "n_subjects = " << c.n_subjects << "\nn_beats = " << c.synth.n_beats
      << "\nsample_rate_hz = " << fmt(c.synth.sample_rate_hz) << "\nbase_period_s = " << fmt(c.synth.base_period_s)
      << "\namplitude = " << fmt(c.synth.amplitude) << "\nbaseline = " << fmt(c.synth.baseline)
      << "\nnoise_std = " << fmt(c.synth.noise_std) << "\ndrift_rate = " << fmt(c.synth.drift.rate)
      << "\ndrift_amplitude_depth = " << fmt(c.synth.drift.amplitude_depth)
      << "\ndrift_period_depth = " << fmt(c.synth.drift.period_depth)
      << "\ndrift_delay_depth = " << fmt(c.synth.drift.delay_depth) << "\naffine = " << fmt(c.synth_affine) << "\n";
    s << "\n[segment]\n"
      << "fixed_len = " << c.segment.fixed_len << "\nchannel = " << c.segment.channel
      << "\ninvert = " << fmt(c.segment.invert) << "\nupstroke_fraction = " << fmt(c.segment.upstroke_fraction)
      << "\nupstroke_percentile = " << fmt(c.segment.upstroke_percentile)
      << "\nrefractory_s = " << fmt(c.segment.refractory_s) << "\nlead_fraction = " << fmt(c.segment.lead_fraction)
      << "\nmin_bpm = " << fmt(c.segment.min_bpm) << "\nmax_bpm = " << fmt(c.segment.max_bpm) << "\n";
    s << "\n[split]\nbin_width = " << fmt(c.bin_width) << "\n";
    s << "\n[model]\nd_model = " << c.train.model.d_model << "\nnum_blocks = " << c.train.model.num_blocks
      << "\nkernel_sizes = [";
    for (std::size_t i = 0; i < c.train.model.kernel_sizes.size(); ++i)
        s << (i ? ", " : "") << c.train.model.kernel_sizes[i];
    s << "]\n";
    const TrainConfig& t = c.train;
    s << "\n[train]\n"
      << "learning_rate = " << fmt(t.learning_rate) << "\nepochs = " << t.epochs << "\npatience = " << t.patience
      << "\nearly_stop = " << fmt(t.early_stop) << "\ngamma = " << fmt(t.gamma) << "\ny_shift = " << fmt(t.y_shift)
      << "\ntau = " << fmt(t.tau) << "\nnormalize_embeddings = " << fmt(t.normalize_embeddings)
      << "\ndetach_grad_u = " << fmt(t.detach_grad_u) << "\nadversarial = " << fmt(t.adversarial)
      << "\ncontrastive = " << fmt(t.contrastive) << "\naugmentation = \"" << to_string(t.augmentation) << "\""
      << "\nbp_types = [";
    for (std::size_t i = 0; i < c.bp_types.size(); ++i)
        s << (i ? ", " : "") << '"' << to_string(c.bp_types[i]) << '"';
    s << "]\n";
    s << "\n[pgd]\nepsilon = " << fmt(t.pgd.epsilon) << "\nsteps = " << t.pgd.steps;
    if (t.pgd.eta)
        s << "\neta = " << fmt(*t.pgd.eta);
    s << "\nsigma = " << fmt(t.pgd.sigma) << "\nproject_epsilon = " << fmt(t.pgd.project_epsilon)
      << "\ngrad_at_adversarial = " << fmt(t.pgd.grad_at_adversarial) << "\n";
    return s.str();
}

}  // namespace pitn
