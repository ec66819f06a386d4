#include "qfed/checkpoint.hpp"

#include <stdexcept>

#include <nlohmann/json.hpp>

#include "qfed/io.hpp"

namespace qfed {

std::vector<std::uint8_t> encode_checkpoint(const Model &model) {
    const auto params = model.parameters();
    const auto names = model.parameter_names();
    nlohmann::json tensors = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        tensors.push_back(
            {{"name", names[i]}, {"shape", params[i]->shape()}, {"offset", offset}});
        offset += params[i]->size() * sizeof(double);
    }
    const nlohmann::json header{{"format", "qfed-checkpoint"},
                                {"version", 1},
                                {"model", model.spec()},
                                {"tensors", tensors}};
    const std::string text = header.dump();
    std::vector<std::uint8_t> out;
    out.reserve(8 + text.size() + offset);
    put_u64(out, text.size());
    out.insert(out.end(), text.begin(), text.end());
    for (const Tensor *p : params) {
        for (double v : p->data()) {
            put_f64(out, v);
        }
    }
    return out;
}

Model decode_checkpoint(const std::vector<std::uint8_t> &bytes) {
    if (bytes.size() < 8) {
        throw std::runtime_error("checkpoint: file too short");
    }
    const std::uint64_t header_len = get_u64(bytes.data());
    if (header_len > bytes.size() - 8) {
        throw std::runtime_error("checkpoint: header length exceeds file size");
    }
    const auto header = nlohmann::json::parse(bytes.begin() + 8,
                                              bytes.begin() + 8 + static_cast<long>(header_len));
    if (header.value("format", "") != "qfed-checkpoint") {
        throw std::runtime_error("checkpoint: not a qfed checkpoint");
    }
    const ModelSpec spec = header.at("model").get<ModelSpec>();
    Model model = build_model(spec, 0);
    const std::size_t payload = 8 + header_len;
    const auto &entries = header.at("tensors");
    auto params = model.parameters();
    const auto names = model.parameter_names();
    if (entries.size() != params.size()) {
        throw std::runtime_error("checkpoint: expected " + std::to_string(params.size()) +
                                 " tensors, file has " + std::to_string(entries.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto &e = entries[i];
        if (e.at("name").get<std::string>() != names[i] ||
            e.at("shape").get<Shape>() != params[i]->shape()) {
            throw std::runtime_error("checkpoint: tensor " + std::to_string(i) + " ('" +
                                     e.at("name").get<std::string>() +
                                     "') does not match the model");
        }
        const std::uint64_t off = e.at("offset").get<std::uint64_t>();
        if (off + params[i]->size() * sizeof(double) > bytes.size() - payload) {
            throw std::runtime_error("checkpoint: tensor '" + names[i] + "' is truncated");
        }
        auto dst = params[i]->data();
        for (std::size_t k = 0; k < dst.size(); ++k) {
            dst[k] = get_f64(bytes.data() + payload + off + k * sizeof(double));
        }
    }
    return model;
}

void save_checkpoint(const std::filesystem::path &path, const Model &model) {
    write_file_atomic(path, encode_checkpoint(model));
}

Model load_checkpoint(const std::filesystem::path &path) {
    return decode_checkpoint(read_file(path));
}

} // namespace qfed
