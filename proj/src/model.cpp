#include "mmfuse/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "mmfuse/rng.hpp"

namespace mmfuse::model {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

const char* to_string(InferenceMode mode) {
    switch (mode) {
    case InferenceMode::Both: return "both";
    case InferenceMode::ImageOnly: return "image_only";
    case InferenceMode::TabularOnly: return "tabular_only";
    }
    return "?";
}

const char* to_string(TokenPolicy policy) {
    return policy == TokenPolicy::LearnedToken ? "learned" : "zeros";
}

std::vector<ModelParams::Named> ModelParams::named() {
    return {
        {"token_image", &token_image, false},
        {"token_tabular", &token_tabular, false},
        {"fuse_weight", &fuse_weight, true},
        {"fuse_bias", &fuse_bias, false},
        {"head_weight", &head_weight, true},
        {"head_bias", &head_bias, false},
        {"proj_weight", &proj_weight, true},
        {"proj_bias", &proj_bias, false},
        {"log_scale", &log_scale, false},
        {"con_bias", &con_bias, false},
    };
}

std::vector<std::pair<std::string, const ad::Tensor*>> ModelParams::named_const() const {
    std::vector<std::pair<std::string, const ad::Tensor*>> out;
    for (const auto& n : const_cast<ModelParams*>(this)->named()) {
        out.emplace_back(n.name, n.tensor);
    }
    return out;
}

namespace {

void xavier_uniform(ad::Tensor& w, std::size_t fan_in, std::size_t fan_out,
                    rng::Xoshiro256pp& gen) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : w.data) v = gen.uniform(-bound, bound);
}

} // namespace

ModelParams init_params(std::size_t dim_image, std::size_t dim_tabular, std::size_t d_fuse,
                        std::size_t d_proj, std::uint64_t seed) {
    if (dim_image < 1 || dim_tabular < 1 || d_fuse < 1 || d_proj < 1) {
        throw ContractError("init_params: dims must be >= 1");
    }
    ModelParams p;
    p.token_image = ad::Tensor(1, dim_image);
    p.token_tabular = ad::Tensor(1, dim_tabular);
    p.fuse_weight = ad::Tensor(dim_image + dim_tabular, d_fuse);
    p.fuse_bias = ad::Tensor(1, d_fuse);
    p.head_weight = ad::Tensor(d_fuse, 1);
    p.head_bias = ad::Tensor(1, 1);
    p.proj_weight = ad::Tensor(d_fuse, d_proj);
    p.proj_bias = ad::Tensor(1, d_proj);
    p.log_scale = ad::Tensor(1, 1);
    p.con_bias = ad::Tensor(1, 1);

    rng::Xoshiro256pp gen(seed);
    xavier_uniform(p.fuse_weight, dim_image + dim_tabular, d_fuse, gen);
    xavier_uniform(p.head_weight, d_fuse, 1, gen);
    xavier_uniform(p.proj_weight, d_fuse, d_proj, gen);
    p.log_scale.data[0] = std::log(10.0);
    p.con_bias.data[0] = -10.0;

    for (auto& n : p.named()) n.tensor->enable_grad();
    return p;
}

void reinit_head(ModelParams& params, std::uint64_t seed) {
    rng::Xoshiro256pp gen(seed);
    xavier_uniform(params.head_weight, params.d_fuse(), 1, gen);
    for (auto& v : params.head_bias.data) v = 0.0;
    params.head_weight.zero_grad();
    params.head_bias.zero_grad();
}

BoundModel BoundModel::bind(ad::Graph& g, ModelParams& params) {
    BoundModel m;
    m.token_image = g.param(params.token_image);
    m.token_tabular = g.param(params.token_tabular);
    m.fuse_w = g.param(params.fuse_weight);
    m.fuse_b = g.param(params.fuse_bias);
    m.head_w = g.param(params.head_weight);
    m.head_b = g.param(params.head_bias);
    m.proj_w = g.param(params.proj_weight);
    m.proj_b = g.param(params.proj_bias);
    m.log_scale = g.param(params.log_scale);
    m.con_bias = g.param(params.con_bias);
    m.dim_image = params.dim_image();
    m.dim_tabular = params.dim_tabular();
    return m;
}

ad::Var fuse(ad::Graph& g, const BoundModel& m, ad::Var block_image, ad::Var block_tabular) {
    const ad::Var joined = g.concat_cols(block_image, block_tabular);
    const std::size_t n = g.value(joined).rows;
    const ad::Var pre = g.add(g.matmul(joined, m.fuse_w), g.broadcast_rows(m.fuse_b, n));
    return g.relu(pre);
}

ad::Var modality_fill(ad::Graph& g, const BoundModel& m, bool image_side, std::size_t n_rows,
                      TokenPolicy policy) {
    if (policy == TokenPolicy::LearnedToken) {
        return g.broadcast_rows(image_side ? m.token_image : m.token_tabular, n_rows);
    }
    return g.constant(ad::Tensor(n_rows, image_side ? m.dim_image : m.dim_tabular));
}

ad::Var forward_logit_vars(ad::Graph& g, const BoundModel& m, ad::Var x_image, ad::Var x_tabular,
                           InferenceMode mode, TokenPolicy policy) {
    ad::Var block_c = x_image;
    ad::Var block_t = x_tabular;
    std::size_t n = 0;
    switch (mode) {
    case InferenceMode::Both:
        n = g.value(x_image).rows;
        break;
    case InferenceMode::ImageOnly:
        n = g.value(x_image).rows;
        block_t = modality_fill(g, m, /*image_side=*/false, n, policy);
        break;
    case InferenceMode::TabularOnly:
        n = g.value(x_tabular).rows;
        block_c = modality_fill(g, m, /*image_side=*/true, n, policy);
        break;
    }
    const ad::Var fused = fuse(g, m, block_c, block_t);
    return g.add(g.matmul(fused, m.head_w), g.broadcast_rows(m.head_b, n));
}

ad::Var forward_logit(ad::Graph& g, const BoundModel& m, const ad::Tensor* x_image,
                      const ad::Tensor* x_tabular, InferenceMode mode, TokenPolicy policy) {
    const bool need_image = mode != InferenceMode::TabularOnly;
    const bool need_tabular = mode != InferenceMode::ImageOnly;
    if (need_image && x_image == nullptr) {
        throw ContractError(std::string("forward_logit: mode ") + to_string(mode) +
                            " requires the image modality");
    }
    if (need_tabular && x_tabular == nullptr) {
        throw ContractError(std::string("forward_logit: mode ") + to_string(mode) +
                            " requires the tabular modality");
    }
    // A dummy var for the absent side; forward_logit_vars replaces it.
    ad::Var vc = need_image ? g.constant(*x_image) : ad::Var{};
    ad::Var vt = need_tabular ? g.constant(*x_tabular) : ad::Var{};
    if (!need_image) vc = vt;
    if (!need_tabular) vt = vc;
    return forward_logit_vars(g, m, vc, vt, mode, policy);
}

ad::Var forward_repr(ad::Graph& g, const BoundModel& m, ad::Var x_image, ad::Var x_tabular,
                     ReprKind which) {
    const std::size_t n = g.value(x_image).rows;
    ad::Var block_c = x_image;
    ad::Var block_t = x_tabular;
    // Unimodal representations come out of the same fusion module with the
    // other block replaced by its learned token.
    if (which == ReprKind::Image) {
        block_t = modality_fill(g, m, /*image_side=*/false, n, TokenPolicy::LearnedToken);
    } else if (which == ReprKind::Tabular) {
        block_c = modality_fill(g, m, /*image_side=*/true, n, TokenPolicy::LearnedToken);
    }
    const ad::Var fused = fuse(g, m, block_c, block_t);
    const ad::Var projected =
        g.add(g.matmul(fused, m.proj_w), g.broadcast_rows(m.proj_b, n));
    return g.l2_normalize_rows(projected);
}

std::vector<double> predict_proba(ModelParams& params, const ad::Tensor& x_image,
                                  const ad::Tensor& x_tabular, InferenceMode mode,
                                  TokenPolicy policy) {
    ad::Graph g;
    const BoundModel m = BoundModel::bind(g, params);
    const ad::Var logits = forward_logit(g, m, &x_image, &x_tabular, mode, policy);
    std::vector<double> probs = g.value(g.sigmoid(logits)).data;
    // Saturated logits underflow sigmoid to exactly 0 or 1; predictions are
    // contracted to the open interval.
    const double hi = std::nextafter(1.0, 0.0);
    const double lo = std::numeric_limits<double>::min();
    for (double& p : probs) p = std::min(hi, std::max(lo, p));
    return probs;
}

namespace {

constexpr char kMagic[4] = {'M', 'M', 'F', '1'};

void put_u32_le(std::ostream& os, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                           static_cast<char>((v >> 16) & 0xFF),
                           static_cast<char>((v >> 24) & 0xFF)};
    os.write(bytes, 4);
}

void put_f64_le(std::ostream& os, double v) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    os.write(bytes, 8);
}

double get_f64_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

std::vector<unsigned char> read_all_bytes(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint: " + path.string());
    is.seekg(0, std::ios::end);
    const std::streamoff size = is.tellg();
    is.seekg(0, std::ios::beg);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(size));
    if (size > 0) is.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!is) throw FormatError("short read: " + path.string());
    return bytes;
}

json checkpoint_header(const fs::path& path, const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError("bad MMF1 magic in " + path.string());
    }
    const std::size_t header_len = static_cast<std::size_t>(bytes[4]) | (bytes[5] << 8) |
                                   (bytes[6] << 16) |
                                   (static_cast<std::size_t>(bytes[7]) << 24);
    if (bytes.size() < 8 + header_len) {
        throw FormatError("truncated MMF1 header in " + path.string());
    }
    try {
        return json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
    } catch (const json::exception& e) {
        throw FormatError("MMF1 header parse error in " + path.string() + ": " + e.what());
    }
}

ad::Tensor tensor_at(const fs::path& path, const std::vector<unsigned char>& bytes,
                     const json& entry) {
    const std::size_t rows = entry.at("rows").get<std::size_t>();
    const std::size_t cols = entry.at("cols").get<std::size_t>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t n_bytes = rows * cols * 8;
    if (offset + n_bytes > bytes.size()) {
        throw FormatError("MMF1 tensor '" + entry.at("name").get<std::string>() +
                          "' exceeds file size in " + path.string());
    }
    ad::Tensor t(rows, cols);
    for (std::size_t i = 0; i < rows * cols; ++i) t.data[i] = get_f64_le(&bytes[offset + 8 * i]);
    return t;
}

} // namespace

void save_model(const ModelParams& params, const std::string& meta_json, const fs::path& path) {
    auto named = params.named_const();

    json header;
    header["format"] = "MMF1";
    header["dims"] = {{"dim_image", params.dim_image()},
                      {"dim_tabular", params.dim_tabular()},
                      {"d_fuse", params.d_fuse()},
                      {"d_proj", params.d_proj()}};
    header["meta"] = meta_json.empty() ? json::object() : json::parse(meta_json);

    // Offsets are absolute file positions, but they appear inside the header
    // whose length they depend on; iterate until the length is stable.
    std::string header_str;
    std::size_t payload_base = 0;
    for (int iter = 0; iter < 16; ++iter) {
        json index = json::array();
        std::size_t offset = payload_base;
        for (const auto& [name, tensor] : named) {
            index.push_back(
                {{"name", name}, {"rows", tensor->rows}, {"cols", tensor->cols},
                 {"offset", offset}});
            offset += tensor->size() * 8;
        }
        header["tensors"] = std::move(index);
        header_str = header.dump();
        if (8 + header_str.size() == payload_base) break;
        payload_base = 8 + header_str.size();
    }
    if (8 + header_str.size() != payload_base) {
        throw FormatError("save_model: header offset fixup did not converge");
    }

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open for writing: " + path.string());
    os.write(kMagic, 4);
    put_u32_le(os, static_cast<std::uint32_t>(header_str.size()));
    os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (const auto& [name, tensor] : named) {
        for (double v : tensor->data) put_f64_le(os, v);
    }
    if (!os) throw FormatError("write failed: " + path.string());
}

LoadedModel load_model(const fs::path& path) {
    const auto bytes = read_all_bytes(path);
    const json header = checkpoint_header(path, bytes);

    LoadedModel out;
    const json& dims = header.at("dims");
    out.params = init_params(dims.at("dim_image").get<std::size_t>(),
                             dims.at("dim_tabular").get<std::size_t>(),
                             dims.at("d_fuse").get<std::size_t>(),
                             dims.at("d_proj").get<std::size_t>(), /*seed=*/0);

    auto named = out.params.named();
    for (const auto& entry : header.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        auto it = std::find_if(named.begin(), named.end(),
                               [&](const auto& n) { return n.name == name; });
        if (it == named.end()) {
            throw FormatError("MMF1 header names unknown tensor '" + name + "'");
        }
        ad::Tensor t = tensor_at(path, bytes, entry);
        if (t.rows != it->tensor->rows || t.cols != it->tensor->cols) {
            throw FormatError("MMF1 tensor '" + name + "' shape disagrees with dims header");
        }
        it->tensor->data = std::move(t.data);
    }
    out.meta_json = header.at("meta").dump();
    return out;
}

ad::Tensor load_model_tensor(const fs::path& path, const std::string& name) {
    const auto bytes = read_all_bytes(path);
    const json header = checkpoint_header(path, bytes);
    for (const auto& entry : header.at("tensors")) {
        if (entry.at("name").get<std::string>() == name) return tensor_at(path, bytes, entry);
    }
    throw FormatError("MMF1 checkpoint has no tensor named '" + name + "'");
}

} // namespace mmfuse::model
