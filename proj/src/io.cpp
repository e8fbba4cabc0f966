#include "pitn/io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#ifndef PITN_VERSION
#define PITN_VERSION "unknown"
#endif

namespace pitn::io {

namespace {

std::string location(const fs::path& file, std::size_t line)
{
    return file.string() + ":" + std::to_string(line) + ": ";
}

std::vector<std::string_view> split_commas(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos)
            return out;
        start = comma + 1;
    }
}

std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return s;
}

double parse_double(std::string_view field, const fs::path& file, std::size_t line, std::string_view column)
{
    field = trim(field);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size() || field.empty())
        throw IngestError(location(file, line) + "column " + std::string(column) + ": '" + std::string(field) +
                          "' is not a number");
    if (!std::isfinite(v))
        throw IngestError(location(file, line) + "column " + std::string(column) + " is not finite");
    return v;
}

std::int64_t parse_int(std::string_view field, const fs::path& file, std::size_t line, std::string_view column)
{
    field = trim(field);
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size() || field.empty())
        throw IngestError(location(file, line) + "column " + std::string(column) + ": '" + std::string(field) +
                          "' is not an integer");
    return v;
}

std::string format_double(double v)
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

std::vector<std::string> read_lines(const fs::path& file)
{
    std::ifstream in(file);
    if (!in)
        throw InputError("cannot open " + file.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
        lines.push_back(line);
    return lines;
}

}  // namespace

RawRecording read_recording_csv(const fs::path& signal, const fs::path& labels, std::string subject_id)
{
    RawRecording rec;
    rec.subject_id = subject_id.empty() ? signal.stem().stem().string() : std::move(subject_id);

    const auto lines = read_lines(signal);
    if (lines.empty())
        throw IngestError(signal.string() + ": empty file, expected header t_sec,ch0[,ch1,...]");
    const auto header = split_commas(lines[0]);
    if (header.size() < 2 || trim(header[0]) != "t_sec")
        throw IngestError(location(signal, 1) + "header must be t_sec,ch0[,ch1,...]");
    for (std::size_t c = 1; c < header.size(); ++c)
        if (trim(header[c]) != "ch" + std::to_string(c - 1))
            throw IngestError(location(signal, 1) + "expected column ch" + std::to_string(c - 1) + ", found '" +
                              std::string(trim(header[c])) + "'");
    const std::size_t C = header.size() - 1;

    std::vector<double> t, values;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (trim(lines[i]).empty())
            continue;
        const auto fields = split_commas(lines[i]);
        if (fields.size() != C + 1)
            throw IngestError(location(signal, i + 1) + "expected " + std::to_string(C + 1) + " fields, found " +
                              std::to_string(fields.size()));
        t.push_back(parse_double(fields[0], signal, i + 1, "t_sec"));
        for (std::size_t c = 0; c < C; ++c)
            values.push_back(parse_double(fields[c + 1], signal, i + 1, "ch" + std::to_string(c)));
    }
    if (t.size() < 2)
        throw IngestError(signal.string() + ": need at least two samples");
    const double span = t.back() - t.front();
    if (!(span > 0.0))
        throw IngestError(signal.string() + ": time column must increase");
    const double dt = span / static_cast<double>(t.size() - 1);
    const double first = t[1] - t[0];
    for (std::size_t i = 1; i < t.size(); ++i) {
        const double step = t[i] - t[i - 1];
        if (!(step > 0.0) || std::abs(step - first) > 1e-3 * first)
            throw IngestError(location(signal, i + 2) + "time column is not uniformly increasing");
    }
    rec.sample_rate_hz = 1.0 / dt;
    rec.samples = Tensor(Shape{t.size(), C}, std::move(values));

    const auto label_lines = read_lines(labels);
    if (label_lines.empty())
        throw IngestError(labels.string() + ": empty file, expected header beat_index,sbp_mmhg,dbp_mmhg");
    const auto lh = split_commas(label_lines[0]);
    const char* expected[] = {"beat_index", "sbp_mmhg", "dbp_mmhg"};
    for (std::size_t k = 0; k < 3; ++k)
        if (lh.size() <= k || trim(lh[k]) != expected[k])
            throw IngestError(location(labels, 1) + "missing label column " + expected[k] +
                              " (header must be beat_index,sbp_mmhg,dbp_mmhg)");
    if (lh.size() != 3)
        throw IngestError(location(labels, 1) + "unexpected extra label columns");
    for (std::size_t i = 1; i < label_lines.size(); ++i) {
        if (trim(label_lines[i]).empty())
            continue;
        const auto f = split_commas(label_lines[i]);
        if (f.size() != 3)
            throw IngestError(location(labels, i + 1) + "expected 3 fields, found " + std::to_string(f.size()));
        BeatLabel l;
        l.beat_index = parse_int(f[0], labels, i + 1, "beat_index");
        l.sbp = parse_double(f[1], labels, i + 1, "sbp_mmhg");
        l.dbp = parse_double(f[2], labels, i + 1, "dbp_mmhg");
        if (!rec.labels.empty() && l.beat_index <= rec.labels.back().beat_index)
            throw IngestError(location(labels, i + 1) + "beat_index must increase");
        rec.labels.push_back(l);
    }
    return rec;
}

void write_recording_csv(const RawRecording& rec, const fs::path& signal, const fs::path& labels)
{
    std::ostringstream s;
    s << "t_sec";
    for (std::size_t c = 0; c < rec.channels(); ++c)
        s << ",ch" << c;
    s << '\n';
    for (std::size_t i = 0; i < rec.length(); ++i) {
        s << format_double(static_cast<double>(i) / rec.sample_rate_hz);
        for (std::size_t c = 0; c < rec.channels(); ++c)
            s << ',' << format_double(rec.samples.at(i, c));
        s << '\n';
    }
    write_text(signal, s.str());

    std::ostringstream l;
    l << "beat_index,sbp_mmhg,dbp_mmhg\n";
    for (const BeatLabel& b : rec.labels)
        l << b.beat_index << ',' << format_double(b.sbp) << ',' << format_double(b.dbp) << '\n';
    write_text(labels, l.str());
}

json beat_to_json(const BeatRecord& b)
{
    return {{"beat_index", b.beat_index}, {"sbp", b.sbp},   {"dbp", b.dbp}, {"u", b.u},
            {"duration_s", b.duration_s}, {"origin", b.origin}, {"shape", b.x.shape()}, {"x", b.x.values()}};
}

BeatRecord beat_from_json(const json& j)
{
    try {
        BeatRecord b;
        b.beat_index = j.at("beat_index").get<std::int64_t>();
        b.sbp = j.at("sbp").get<double>();
        b.dbp = j.at("dbp").get<double>();
        b.u = j.at("u").get<Features>();
        b.duration_s = j.at("duration_s").get<double>();
        b.origin = j.at("origin").get<std::string>();
        if (b.origin != "clean" && b.origin != "adversarial" && b.origin != "flip")
            throw InputError("beat origin must be clean, adversarial or flip, found '" + b.origin + "'");
        b.x = Tensor(j.at("shape").get<Shape>(), j.at("x").get<std::vector<double>>());
        if (b.x.rank() != 2)
            throw InputError("beat waveform must be [T x C]");
        return b;
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed beat record: ") + e.what());
    } catch (const DimensionError& e) {
        throw InputError(std::string("malformed beat record: ") + e.what());
    }
}

void write_beats(const fs::path& file, std::span<const BeatRecord> beats)
{
    json arr = json::array();
    for (const BeatRecord& b : beats)
        arr.push_back(beat_to_json(b));
    write_json(file, arr);
}

std::vector<BeatRecord> read_beats(const fs::path& file)
{
    const json j = read_json(file);
    if (!j.is_array())
        throw InputError(file.string() + ": expected an array of beats");
    std::vector<BeatRecord> out;
    for (const json& b : j)
        out.push_back(beat_from_json(b));
    return out;
}

json split_to_json(const SplitPlan& p)
{
    return {{"train", p.train},
            {"test", p.test},
            {"bin_width", p.bin_width},
            {"bp_type", to_string(p.bp_type)},
            {"seed", p.seed}};
}

SplitPlan split_from_json(const json& j)
{
    try {
        SplitPlan p;
        p.train = j.at("train").get<std::vector<std::size_t>>();
        p.test = j.at("test").get<std::vector<std::size_t>>();
        p.bin_width = j.at("bin_width").get<double>();
        p.bp_type = parse_bp_type(j.at("bp_type").get<std::string>());
        p.seed = j.at("seed").get<std::uint64_t>();
        return p;
    } catch (const json::exception& e) {
        throw InputError(std::string("malformed split plan: ") + e.what());
    }
}

std::string read_text(const fs::path& file)
{
    std::ifstream in(file, std::ios::binary);
    if (!in)
        throw InputError("cannot open " + file.string());
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_text(const fs::path& file, std::string_view text)
{
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out)
        throw OutputError("cannot write " + file.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out)
        throw OutputError("write failed for " + file.string());
}

json read_json(const fs::path& file)
{
    try {
        return json::parse(read_text(file));
    } catch (const json::parse_error& e) {
        throw InputError(file.string() + ": invalid JSON: " + e.what());
    }
}

void write_json(const fs::path& file, const json& j)
{
    write_text(file, j.dump(1) + "\n");
}

std::string sha1_hex(std::string_view data)
{
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha1(), nullptr) != 1)
        throw std::runtime_error("SHA-1 computation failed");
    std::ostringstream s;
    for (unsigned int i = 0; i < len; ++i)
        s << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    return s.str();
}

std::string git_blob_hash(std::string_view data)
{
    std::string blob = "blob " + std::to_string(data.size());
    blob.push_back('\0');
    blob.append(data);
    return sha1_hex(blob);
}

json make_manifest(const std::string& kind, std::uint64_t seed, const std::string& config_toml)
{
    return {{"kind", kind}, {"tool_version", PITN_VERSION}, {"seed", seed}, {"config", config_toml},
            {"inputs", json::object()}};
}

void write_manifest(const fs::path& dir, json manifest)
{
    std::vector<std::string> outputs;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().filename() != "manifest.json")
            outputs.push_back(fs::relative(entry.path(), dir).generic_string());
    std::sort(outputs.begin(), outputs.end());
    manifest["outputs"] = outputs;

    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::ostringstream ts;
    ts << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
    manifest["timestamps"] = {{"created", ts.str()}};
    write_json(dir / "manifest.json", manifest);
}

json read_manifest(const fs::path& dir, const std::string& kind)
{
    const fs::path file = dir / "manifest.json";
    if (!fs::exists(file))
        throw InputError(dir.string() + " has no manifest.json");
    json m = read_json(file);
    if (!kind.empty() && m.value("kind", "") != kind)
        throw InputError(dir.string() + ": expected a '" + kind + "' directory, found '" + m.value("kind", "?") + "'");
    return m;
}

std::string directory_hash(const fs::path& dir)
{
    if (!fs::is_directory(dir))
        throw InputError(dir.string() + " is not a directory");
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file())
            files.push_back(entry.path());
    std::vector<std::pair<std::string, fs::path>> named;
    for (const fs::path& f : files)
        named.emplace_back(fs::relative(f, dir).generic_string(), f);
    std::sort(named.begin(), named.end());

    std::string listing;
    for (const auto& [rel, path] : named) {
        std::string content = read_text(path);
        if (rel == "manifest.json") {
            json m = json::parse(content);
            m.erase("timestamps");
            content = m.dump();
        }
        listing += rel + '\0' + git_blob_hash(content) + '\n';
    }
    return sha1_hex(listing);
}

void ensure_directory(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (!fs::is_directory(dir))
        throw OutputError("cannot create directory " + dir.string() + (ec ? ": " + ec.message() : ""));
}

}  // namespace pitn::io
