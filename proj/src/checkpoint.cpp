#include "pitn/checkpoint.hpp"

#include "pitn/io.hpp"

namespace pitn {

using nlohmann::json;

namespace {

json tensor_json(const Tensor& t)
{
    return {{"shape", t.shape()}, {"data", t.values()}};
}

Tensor tensor_from(const json& j)
{
    return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

json hyper_json(const ModelHyper& h)
{
    return {{"d_model", h.d_model},   {"num_blocks", h.num_blocks}, {"kernel_sizes", h.kernel_sizes},
            {"seq_len", h.seq_len},   {"channels", h.channels},     {"n_features", h.n_features}};
}

ModelHyper hyper_from(const json& j)
{
    ModelHyper h;
    h.d_model = j.at("d_model").get<std::size_t>();
    h.num_blocks = j.at("num_blocks").get<std::size_t>();
    h.kernel_sizes = j.at("kernel_sizes").get<std::vector<std::size_t>>();
    h.seq_len = j.at("seq_len").get<std::size_t>();
    h.channels = j.at("channels").get<std::size_t>();
    h.n_features = j.at("n_features").get<std::size_t>();
    return h;
}

json standardizer_json(const Standardizer& s)
{
    return {{"x_mean", s.x_mean}, {"x_std", s.x_std}, {"u_mean", s.u_mean},
            {"u_std", s.u_std},   {"y_mean", s.y_mean}, {"y_std", s.y_std}};
}

Standardizer standardizer_from(const json& j)
{
    Standardizer s;
    s.x_mean = j.at("x_mean").get<std::vector<double>>();
    s.x_std = j.at("x_std").get<std::vector<double>>();
    s.u_mean = j.at("u_mean").get<std::vector<double>>();
    s.u_std = j.at("u_std").get<std::vector<double>>();
    s.y_mean = j.at("y_mean").get<double>();
    s.y_std = j.at("y_std").get<double>();
    return s;
}

std::string content_hash(const json& body)
{
    return io::git_blob_hash(body.dump());
}

}  // namespace

json checkpoint_to_json(const Checkpoint& ckpt)
{
    json params = json::object();
    const auto names = ckpt.model.parameter_names();
    const auto tensors = ckpt.model.parameters();
    for (std::size_t i = 0; i < names.size(); ++i)
        params[names[i]] = tensor_json(*tensors[i]);
    json body = {{"format", "pitn-checkpoint-1"},
                 {"hyper", hyper_json(ckpt.model.hyper)},
                 {"parameters", params},
                 {"standardizer", standardizer_json(ckpt.standardizer)},
                 {"seed", ckpt.seed},
                 {"bp_type", to_string(ckpt.bp_type)},
                 {"subject_id", ckpt.subject_id}};
    body["content_hash"] = content_hash(body);
    return body;
}

Checkpoint checkpoint_from_json(const json& j)
{
    try {
        json body = j;
        const std::string stored = body.at("content_hash").get<std::string>();
        body.erase("content_hash");
        if (content_hash(body) != stored)
            throw io::InputError("checkpoint content hash mismatch (stored " + stored + ")");
        if (body.at("format") != "pitn-checkpoint-1")
            throw io::InputError("unsupported checkpoint format");

        Checkpoint c;
        const ModelHyper hyper = hyper_from(body.at("hyper"));
        c.model = init_model(hyper, 0);
        const auto names = c.model.parameter_names();
        const auto tensors = c.model.parameters();
        const json& params = body.at("parameters");
        if (params.size() != names.size())
            throw io::InputError("checkpoint has " + std::to_string(params.size()) + " parameter tensors, expected " +
                                 std::to_string(names.size()));
        for (std::size_t i = 0; i < names.size(); ++i) {
            Tensor t = tensor_from(params.at(names[i]));
            if (t.shape() != tensors[i]->shape())
                throw io::InputError("checkpoint parameter " + names[i] + " has shape " + shape_string(t.shape()) +
                                     ", expected " + shape_string(tensors[i]->shape()));
            *tensors[i] = std::move(t);
        }
        c.standardizer = standardizer_from(body.at("standardizer"));
        c.seed = body.at("seed").get<std::uint64_t>();
        c.bp_type = parse_bp_type(body.at("bp_type").get<std::string>());
        c.subject_id = body.at("subject_id").get<std::string>();
        return c;
    } catch (const json::exception& e) {
        throw io::InputError(std::string("malformed checkpoint: ") + e.what());
    }
}

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& ckpt)
{
    io::write_text(file, checkpoint_to_json(ckpt).dump() + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& file)
{
    return checkpoint_from_json(io::read_json(file));
}

}  // namespace pitn
