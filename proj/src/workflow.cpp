#include "pitn/workflow.hpp"

#include <algorithm>
#include <charconv>
#include <map>
#include <optional>
#include <sstream>

#include "pitn/adversarial.hpp"
#include "pitn/checkpoint.hpp"
#include "pitn/io.hpp"
#include "pitn/pool.hpp"

namespace pitn::workflow {

using nlohmann::json;

namespace {

struct Subject {
    std::string id;
    std::string file;
    std::vector<BeatRecord> beats;
    std::map<BpType, SplitPlan> splits;
};

struct Job {
    const Subject* subject;
    BpType bp;
};

std::string num(double v)
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::string job_name(const std::string& id, BpType bp)
{
    return id + "." + to_string(bp);
}

void report_warnings(std::ostream& log, const std::string& who, const Diagnostics& d)
{
    for (const std::string& w : d.warnings)
        log << "warning: " << who << ": " << w << '\n';
}

json manifest_for(const std::string& kind, const AppConfig& cfg)
{
    return io::make_manifest(kind, cfg.seed, to_toml(cfg));
}

std::vector<Subject> load_split(const fs::path& in)
{
    const json m = io::read_manifest(in, "split");
    std::vector<Subject> out;
    for (const json& s : m.at("subjects")) {
        Subject sub;
        sub.id = s.at("id").get<std::string>();
        sub.file = s.at("file").get<std::string>();
        sub.beats = io::read_beats(in / sub.file);
        for (const auto& [bp, plan] : s.at("splits").items()) {
            SplitPlan p = io::split_from_json(plan);
            for (const auto* idx : {&p.train, &p.test})
                for (std::size_t i : *idx)
                    if (i >= sub.beats.size())
                        throw io::InputError(in.string() + ": split index " + std::to_string(i) +
                                             " out of range for subject " + sub.id);
            sub.splits[parse_bp_type(bp)] = std::move(p);
        }
        out.push_back(std::move(sub));
    }
    return out;
}

std::vector<Job> make_jobs(const std::vector<Subject>& subjects, const AppConfig& cfg)
{
    std::vector<Job> jobs;
    for (const Subject& s : subjects)
        for (BpType bp : cfg.bp_types) {
            if (!s.splits.count(bp))
                throw io::InputError("subject " + s.id + " has no " + to_string(bp) + " split");
            jobs.push_back({&s, bp});
        }
    return jobs;
}

std::vector<BeatRecord> select(const std::vector<BeatRecord>& beats, const std::vector<std::size_t>& idx)
{
    std::vector<BeatRecord> out;
    for (std::size_t i : idx)
        out.push_back(beats[i]);
    return out;
}

json metrics_json(const MetricsReport& r, const std::string& id, BpType bp)
{
    return {{"subject", id},
            {"bp_type", to_string(bp)},
            {"rmse", r.rmse},
            {"pearson_r", r.pearson_r ? json(*r.pearson_r) : json(nullptr)},
            {"me", r.me},
            {"sde", r.sde},
            {"aami_pass", r.aami_pass},
            {"n_test", r.n_test}};
}

struct Evaluation {
    MetricsReport metrics;
    std::vector<double> truth, pred;
    std::vector<std::int64_t> beat_index;
};

Evaluation evaluate_model(const Subject& s, BpType bp, const ModelState& model, const Standardizer& scaler)
{
    const std::vector<BeatRecord> test = select(s.beats, s.splits.at(bp).test);
    if (test.empty())
        throw io::InputError("subject " + s.id + " has no " + to_string(bp) + " test beats");
    Evaluation e;
    e.pred = predict(test, model, scaler);
    for (const BeatRecord& b : test) {
        e.truth.push_back(b.label(bp));
        e.beat_index.push_back(b.beat_index);
    }
    if (model.aux_reads.load() != 0)
        throw std::logic_error("evaluation read auxiliary layer-norm parameters");
    e.metrics = evaluate_metrics(e.pred, e.truth);
    return e;
}

std::string predictions_csv(const Evaluation& e)
{
    std::ostringstream s;
    s << "beat_index,truth_mmhg,pred_mmhg\n";
    for (std::size_t i = 0; i < e.pred.size(); ++i)
        s << e.beat_index[i] << ',' << num(e.truth[i]) << ',' << num(e.pred[i]) << '\n';
    return s.str();
}

std::optional<json> find_model(const json& manifest, const std::string& id, BpType bp)
{
    for (const json& m : manifest.at("models"))
        if (m.at("id") == id && m.at("bp_type") == to_string(bp))
            return std::optional<json>(std::in_place, m);
    return std::nullopt;
}

Checkpoint load_model(const fs::path& models, const json& manifest, const std::string& id, BpType bp)
{
    const auto entry = find_model(manifest, id, bp);
    if (!entry)
        throw io::InputError(models.string() + " has no " + to_string(bp) + " model for subject " + id);
    return load_checkpoint(models / entry->at("checkpoint").get<std::string>());
}

}  // namespace

void run_synth(const AppConfig& cfg, const fs::path& out, std::ostream& log)
{
    io::ensure_directory(out);
    json m = manifest_for("recordings", cfg);
    m["subjects"] = json::array();
    for (std::size_t k = 0; k < cfg.n_subjects; ++k) {
        SynthConfig s = cfg.synth;
        s.seed = cfg.seed + k;
        char id[32];
        std::snprintf(id, sizeof id, "synth-%02zu", k);
        s.subject_id = id;
        const SynthOutput gen = generate(s, cfg.segment);
        const std::string sig = s.subject_id + ".signal.csv";
        const std::string lab = s.subject_id + ".labels.csv";
        io::write_recording_csv(gen.recording, out / sig, out / lab);
        m["subjects"].push_back({{"id", s.subject_id},
                                 {"signal", sig},
                                 {"labels", lab},
                                 {"n_samples", gen.recording.length()},
                                 {"n_labels", gen.recording.labels.size()}});
        log << s.subject_id << ": " << gen.recording.labels.size() << " labelled beats\n";
    }
    io::write_manifest(out, m);
}

void run_preprocess(const AppConfig& cfg, const fs::path& in, const fs::path& out, std::ostream& log)
{
    std::vector<std::tuple<std::string, fs::path, fs::path>> recordings;
    if (fs::exists(in / "manifest.json")) {
        const json m = io::read_manifest(in, "recordings");
        for (const json& s : m.at("subjects"))
            recordings.emplace_back(s.at("id").get<std::string>(), in / s.at("signal").get<std::string>(),
                                    in / s.at("labels").get<std::string>());
    } else {
        if (!fs::is_directory(in))
            throw io::InputError("input directory " + in.string() + " does not exist");
        for (const auto& e : fs::directory_iterator(in)) {
            const std::string name = e.path().filename().string();
            const std::string suffix = ".signal.csv";
            if (name.size() > suffix.size() && name.ends_with(suffix)) {
                const std::string id = name.substr(0, name.size() - suffix.size());
                recordings.emplace_back(id, e.path(), in / (id + ".labels.csv"));
            }
        }
        std::sort(recordings.begin(), recordings.end());
    }
    if (recordings.empty())
        throw io::InputError(in.string() + " contains no <id>.signal.csv recordings");

    io::ensure_directory(out);
    json m = manifest_for("beats", cfg);
    m["inputs"] = {{"recordings", io::directory_hash(in)}};
    m["fixed_len"] = cfg.segment.fixed_len;
    m["subjects"] = json::array();
    for (const auto& [id, sig, lab] : recordings) {
        const RawRecording rec = io::read_recording_csv(sig, lab, id);
        Diagnostics d;
        const std::vector<BeatRecord> beats = preprocess_recording(rec, cfg.segment, &d);
        report_warnings(log, id, d);
        if (beats.empty()) {
            log << "warning: " << id << ": no usable beats, subject skipped\n";
            continue;
        }
        const std::string file = id + ".beats.json";
        io::write_beats(out / file, beats);
        m["channels"] = rec.channels();
        m["subjects"].push_back({{"id", id}, {"file", file}, {"n_beats", beats.size()}, {"warnings", d.warnings}});
        log << id << ": " << beats.size() << " beats\n";
    }
    io::write_manifest(out, m);
}

void run_split(const AppConfig& cfg, const fs::path& in, const fs::path& out, std::ostream& log)
{
    const json src = io::read_manifest(in, "beats");
    io::ensure_directory(out);
    json m = manifest_for("split", cfg);
    m["inputs"] = {{"beats", io::directory_hash(in)}};
    m["fixed_len"] = src.value("fixed_len", cfg.segment.fixed_len);
    m["subjects"] = json::array();
    for (const json& s : src.at("subjects")) {
        const std::string id = s.at("id").get<std::string>();
        const std::string file = s.at("file").get<std::string>();
        const std::vector<BeatRecord> beats = io::read_beats(in / file);
        io::write_beats(out / file, beats);
        json splits = json::object();
        for (BpType bp : {BpType::Sbp, BpType::Dbp}) {
            Diagnostics d;
            const SplitPlan p = minimal_split(beats, bp, cfg.bin_width, cfg.seed, &d);
            report_warnings(log, job_name(id, bp), d);
            splits[to_string(bp)] = io::split_to_json(p);
            log << job_name(id, bp) << ": " << p.train.size() << " train, " << p.test.size() << " test\n";
        }
        m["subjects"].push_back({{"id", id}, {"file", file}, {"n_beats", beats.size()}, {"splits", splits}});
    }
    io::write_manifest(out, m);
}

void run_train(const AppConfig& cfg, const fs::path& in, const fs::path& out, std::ostream& log)
{
    const std::vector<Subject> subjects = load_split(in);
    const std::vector<Job> jobs = make_jobs(subjects, cfg);
    io::ensure_directory(out);

    std::vector<json> entries(jobs.size());
    std::vector<Diagnostics> diags(jobs.size());
    parallel_for(cfg.jobs, jobs.size(), [&](std::size_t k) {
        const Job& job = jobs[k];
        TrainConfig tc = cfg.train;
        tc.bp_type = job.bp;
        const TrainResult r = train_subject(job.subject->beats, job.subject->splits.at(job.bp), tc, &diags[k]);
        const std::string name = job_name(job.subject->id, job.bp);
        save_checkpoint(out / (name + ".ckpt.json"), {r.model, r.standardizer, tc.seed, job.bp, job.subject->id});
        std::string lines;
        for (const EpochLog& e : r.log)
            lines += to_json_line(e) + "\n";
        io::write_text(out / (name + ".log.jsonl"), lines);
        entries[k] = {{"id", job.subject->id},
                      {"bp_type", to_string(job.bp)},
                      {"checkpoint", name + ".ckpt.json"},
                      {"log", name + ".log.jsonl"},
                      {"epochs_run", r.log.size()},
                      {"final_loss", r.log.back().loss.l_total},
                      {"early_stopped", r.early_stopped},
                      {"warnings", diags[k].warnings}};
    });

    json m = manifest_for("models", cfg);
    m["inputs"] = {{"split", io::directory_hash(in)}};
    m["models"] = entries;
    for (std::size_t k = 0; k < jobs.size(); ++k) {
        report_warnings(log, job_name(jobs[k].subject->id, jobs[k].bp), diags[k]);
        log << entries[k].at("checkpoint").get<std::string>() << ": final loss " << entries[k].at("final_loss")
            << " after " << entries[k].at("epochs_run") << " epochs\n";
    }
    io::write_manifest(out, m);
}

void run_augment(const AppConfig& cfg, const fs::path& in, const fs::path& models, const fs::path& out,
                 std::ostream& log)
{
    const std::vector<Subject> subjects = load_split(in);
    const json mm = io::read_manifest(models, "models");
    const BpType bp = cfg.bp_types.front();
    const std::string origin = cfg.train.augmentation == Augmentation::Pgd ? "adversarial" : "flip";
    io::ensure_directory(out);

    json m = manifest_for("beats", cfg);
    m["inputs"] = {{"split", io::directory_hash(in)}, {"models", io::directory_hash(models)}};
    m["fixed_len"] = cfg.segment.fixed_len;
    m["subjects"] = json::array();
    for (const Subject& s : subjects) {
        const Checkpoint ckpt = load_model(models, mm, s.id, bp);
        const Standardizer& sc = ckpt.standardizer;
        std::vector<BeatRecord> train = select(s.beats, s.splits.at(bp).train);

        std::vector<BeatRecord> scaled = train;
        for (BeatRecord& b : scaled)
            b.x = sc.x(b.x);
        const DomainBounds domain = compute_domain(scaled);

        std::vector<BeatRecord> out_beats = train;
        for (std::size_t i = 0; i < train.size(); ++i) {
            Tensor adv;
            if (cfg.train.augmentation == Augmentation::Pgd) {
                auto rng = beat_stream(cfg.seed, 0, train[i].beat_index);
                adv = pgd_generate(scaled[i].x, sc.u(train[i].u), ckpt.model, domain, cfg.train.pgd, rng);
            } else {
                adv = flip_waveform(scaled[i].x);
            }
            for (std::size_t t = 0; t < adv.dim(0); ++t)
                for (std::size_t c = 0; c < adv.dim(1); ++c)
                    adv.at(t, c) = adv.at(t, c) * sc.x_std[c] + sc.x_mean[c];
            BeatRecord b = train[i];
            b.x = std::move(adv);
            b.origin = origin;
            out_beats.push_back(std::move(b));
        }
        const std::string file = s.id + ".beats.json";
        io::write_beats(out / file, out_beats);
        m["subjects"].push_back({{"id", s.id}, {"file", file}, {"n_beats", out_beats.size()}, {"warnings", json::array()}});
        log << s.id << ": " << train.size() << " clean and " << train.size() << " " << origin << " beats\n";
    }
    io::write_manifest(out, m);
}

void run_eval(const AppConfig& cfg, const fs::path& in, const fs::path& models, const fs::path& out,
              std::ostream& log)
{
    const std::vector<Subject> subjects = load_split(in);
    const json mm = io::read_manifest(models, "models");
    const std::vector<Job> jobs = make_jobs(subjects, cfg);
    io::ensure_directory(out);

    json m = manifest_for("eval", cfg);
    m["inputs"] = {{"split", io::directory_hash(in)}, {"models", io::directory_hash(models)}};
    m["reports"] = json::array();
    for (const Job& job : jobs) {
        const std::string name = job_name(job.subject->id, job.bp);
        const Checkpoint ckpt = load_model(models, mm, job.subject->id, job.bp);
        const Evaluation e = evaluate_model(*job.subject, job.bp, ckpt.model, ckpt.standardizer);
        io::write_json(out / (name + ".metrics.json"), metrics_json(e.metrics, job.subject->id, job.bp));
        io::write_text(out / (name + ".predictions.csv"), predictions_csv(e));
        m["reports"].push_back({{"id", job.subject->id},
                                {"bp_type", to_string(job.bp)},
                                {"metrics", name + ".metrics.json"},
                                {"predictions", name + ".predictions.csv"}});
        log << name << ": rmse " << e.metrics.rmse << " r "
            << (e.metrics.pearson_r ? num(*e.metrics.pearson_r) : "null") << " me " << e.metrics.me << " sde "
            << e.metrics.sde << (e.metrics.aami_pass ? " (AAMI pass)" : " (AAMI fail)") << '\n';
    }
    io::write_manifest(out, m);
}

void run_report(const AppConfig& cfg, const fs::path& in, const fs::path& out, std::ostream& log)
{
    const json src = io::read_manifest(in, "eval");
    std::vector<std::string> ids;
    std::map<std::string, std::map<std::string, json>> table;
    for (const json& r : src.at("reports")) {
        const std::string id = r.at("id").get<std::string>();
        if (std::find(ids.begin(), ids.end(), id) == ids.end())
            ids.push_back(id);
        table[id][r.at("bp_type").get<std::string>()] = io::read_json(in / r.at("metrics").get<std::string>());
    }

    const char* fields[] = {"rmse", "pearson_r", "me", "sde", "aami_pass", "n_test"};
    std::ostringstream csv;
    csv << "subject";
    for (const char* bp : {"sbp", "dbp"})
        for (const char* f : fields)
            csv << ',' << bp << '_' << f;
    csv << '\n';

    std::map<std::string, std::pair<double, std::size_t>> sums;
    for (const std::string& id : ids) {
        csv << id;
        for (const char* bp : {"sbp", "dbp"}) {
            const auto it = table[id].find(bp);
            for (const char* f : fields) {
                csv << ',';
                if (it == table[id].end() || it->second.at(f).is_null())
                    continue;
                const json& v = it->second.at(f);
                const double d = v.is_boolean() ? (v.get<bool>() ? 1.0 : 0.0) : v.get<double>();
                csv << (v.is_boolean() ? (v.get<bool>() ? "true" : "false") : num(d));
                auto& [total, count] = sums[std::string(bp) + "_" + f];
                total += d;
                ++count;
            }
        }
        csv << '\n';
    }
    csv << "mean";
    json mean = json::object();
    for (const char* bp : {"sbp", "dbp"})
        for (const char* f : fields) {
            csv << ',';
            const std::string key = std::string(bp) + "_" + f;
            if (const auto it = sums.find(key); it != sums.end()) {
                const double v = it->second.first / static_cast<double>(it->second.second);
                csv << num(v);
                mean[key] = v;
            }
        }
    csv << '\n';

    io::ensure_directory(out);
    io::write_text(out / "report.csv", csv.str());
    json subjects = json::object();
    for (const auto& [id, row] : table)
        subjects[id] = row;
    io::write_json(out / "report.json", {{"subjects", subjects}, {"mean", mean}});
    json m = manifest_for("report", cfg);
    m["inputs"] = {{"eval", io::directory_hash(in)}};
    io::write_manifest(out, m);
    log << "report for " << ids.size() << " subjects written to " << (out / "report.csv").string() << '\n';
}

std::string sweep_key(const std::string& param)
{
    static const std::map<std::string, std::string> aliases = {
        {"gamma", "train.gamma"},       {"y_shift", "train.y_shift"}, {"tau", "train.tau"},
        {"epsilon", "pgd.epsilon"},     {"steps", "pgd.steps"},       {"learning_rate", "train.learning_rate"},
        {"lr", "train.learning_rate"},  {"sigma", "pgd.sigma"},       {"epochs", "train.epochs"}};
    if (const auto it = aliases.find(param); it != aliases.end())
        return it->second;
    for (const auto& [alias, key] : aliases)
        if (key == param)
            return key;
    throw ConfigError("cannot sweep '" + param + "'; choose one of gamma, y_shift, tau, epsilon, steps, lr, sigma, epochs");
}

void run_sweep(const AppConfig& cfg, const fs::path& in, const std::string& param, const std::vector<double>& values,
               const fs::path& out, std::ostream& log)
{
    if (values.empty())
        throw ConfigError("sweep needs at least one value");
    const std::string key = sweep_key(param);
    std::vector<AppConfig> configs;
    for (double v : values)
        configs.push_back(parse_config(to_toml(cfg), {key + "=" + num(v)}));

    const std::vector<Subject> subjects = load_split(in);
    const std::vector<Job> base_jobs = make_jobs(subjects, cfg);
    const std::size_t per_value = base_jobs.size();
    std::vector<json> results(values.size() * per_value);
    parallel_for(cfg.jobs, results.size(), [&](std::size_t k) {
        const AppConfig& vc = configs[k / per_value];
        const Job& job = base_jobs[k % per_value];
        TrainConfig tc = vc.train;
        tc.bp_type = job.bp;
        Diagnostics d;
        const TrainResult r = train_subject(job.subject->beats, job.subject->splits.at(job.bp), tc, &d);
        const Evaluation e = evaluate_model(*job.subject, job.bp, r.model, r.standardizer);
        json j = metrics_json(e.metrics, job.subject->id, job.bp);
        j["param"] = param;
        j["value"] = values[k / per_value];
        results[k] = j;
    });

    io::ensure_directory(out);
    std::ostringstream csv;
    csv << "param,value,subject,bp_type,rmse,pearson_r,me,sde,aami_pass,n_test\n";
    for (const json& j : results) {
        csv << param << ',' << num(j.at("value").get<double>()) << ',' << j.at("subject").get<std::string>() << ','
            << j.at("bp_type").get<std::string>() << ',' << num(j.at("rmse").get<double>()) << ','
            << (j.at("pearson_r").is_null() ? "" : num(j.at("pearson_r").get<double>())) << ','
            << num(j.at("me").get<double>()) << ',' << num(j.at("sde").get<double>()) << ','
            << (j.at("aami_pass").get<bool>() ? "true" : "false") << ',' << j.at("n_test").get<std::size_t>() << '\n';
        log << param << '=' << num(j.at("value").get<double>()) << ' ' << j.at("subject").get<std::string>() << '.'
            << j.at("bp_type").get<std::string>() << ": rmse " << j.at("rmse") << " r " << j.at("pearson_r") << '\n';
    }
    io::write_text(out / "sweep.csv", csv.str());
    io::write_json(out / "sweep.json", results);
    json m = manifest_for("sweep", cfg);
    m["inputs"] = {{"split", io::directory_hash(in)}};
    m["param"] = key;
    m["values"] = values;
    io::write_manifest(out, m);
}

}  // namespace pitn::workflow
