#include "mmfuse/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "mmfuse/errors.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse::data {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};
constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeF64 = 1;

void put_u32_le(std::ostream& os, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                           static_cast<char>((v >> 16) & 0xFF),
                           static_cast<char>((v >> 24) & 0xFF)};
    os.write(bytes, 4);
}

std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
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

float get_f32_le(const unsigned char* p) {
    std::uint32_t bits = get_u32_le(p);
    return std::bit_cast<float>(bits);
}

std::vector<unsigned char> read_all_bytes(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open file: " + path.string());
    is.seekg(0, std::ios::end);
    const std::streamoff size = is.tellg();
    is.seekg(0, std::ios::beg);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(size));
    if (size > 0) is.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!is) throw FormatError("short read: " + path.string());
    return bytes;
}

} // namespace

std::optional<std::size_t> Dataset::index_of(const std::string& sample_id) const {
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].sample_id == sample_id) return i;
    }
    return std::nullopt;
}

void SynthConfig::validate() const {
    if (n_patients < 1) throw ConfigError("synth: n_patients must be >= 1");
    if (samples_per_patient < 1) throw ConfigError("synth: samples_per_patient must be >= 1");
    if (latent_dim < 1 || dim_image < 1 || dim_tabular < 1) {
        throw ConfigError("synth: dims must be >= 1");
    }
    if (sigma_image < 0.0 || sigma_tabular < 0.0) throw ConfigError("synth: sigmas must be >= 0");
    if (!(label_noise >= 0.0 && label_noise < 0.5)) {
        throw ConfigError("synth: label_noise must be in [0, 0.5)");
    }
}

void write_embedding_file(const fs::path& path, const ad::Tensor& m) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open for writing: " + path.string());
    os.write(kMagic, 4);
    const char dtype = static_cast<char>(kDtypeF64);
    os.write(&dtype, 1);
    put_u32_le(os, static_cast<std::uint32_t>(m.rows));
    put_u32_le(os, static_cast<std::uint32_t>(m.cols));
    for (double v : m.data) put_f64_le(os, v);
    if (!os) throw FormatError("write failed: " + path.string());
}

ad::Tensor read_embedding_file(const fs::path& path) {
    const auto bytes = read_all_bytes(path);
    if (bytes.size() < 13 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw FormatError("bad EMB1 magic in " + path.string());
    }
    const std::uint8_t dtype = bytes[4];
    if (dtype != kDtypeF32 && dtype != kDtypeF64) {
        throw FormatError("unknown EMB1 dtype " + std::to_string(dtype) + " in " + path.string());
    }
    const std::size_t rows = get_u32_le(&bytes[5]);
    const std::size_t cols = get_u32_le(&bytes[9]);
    const std::size_t elem = dtype == kDtypeF64 ? 8 : 4;
    const std::size_t expected = 13 + rows * cols * elem;
    if (bytes.size() != expected) {
        throw FormatError("EMB1 payload size mismatch in " + path.string() + ": expected " +
                          std::to_string(expected) + " bytes for " + std::to_string(rows) + "x" +
                          std::to_string(cols) + ", got " + std::to_string(bytes.size()));
    }
    ad::Tensor m(rows, cols);
    const unsigned char* p = bytes.data() + 13;
    for (std::size_t i = 0; i < rows * cols; ++i) {
        m.data[i] = dtype == kDtypeF64 ? get_f64_le(p + 8 * i)
                                       : static_cast<double>(get_f32_le(p + 4 * i));
    }
    m.check_finite("read_embedding_file");
    return m;
}

void write_dataset(const Dataset& ds, const fs::path& dir) {
    fs::create_directories(dir);
    json manifest;
    json samples = json::array();
    for (const SampleInfo& s : ds.samples) {
        samples.push_back({{"sample_id", s.sample_id}, {"patient_id", s.patient_id},
                           {"label", s.label}});
    }
    manifest["samples"] = std::move(samples);
    manifest["modalities"] = json::array(
        {{{"name", "image"}, {"dim", ds.image.cols}, {"file", "image.emb"}},
         {{"name", "tabular"}, {"dim", ds.tabular.cols}, {"file", "tabular.emb"}}});
    if (!ds.provenance_json.empty()) {
        manifest["provenance"] = json::parse(ds.provenance_json);
    }
    std::ofstream os(dir / "manifest.json", std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open for writing: " + (dir / "manifest.json").string());
    os << manifest.dump(2) << "\n";
    write_embedding_file(dir / "image.emb", ds.image);
    write_embedding_file(dir / "tabular.emb", ds.tabular);
}

Dataset read_dataset(const fs::path& dir) {
    const fs::path manifest_path = dir / "manifest.json";
    std::ifstream is(manifest_path);
    if (!is) throw FormatError("cannot open manifest: " + manifest_path.string());
    json manifest;
    try {
        manifest = json::parse(is);
    } catch (const json::exception& e) {
        throw FormatError("manifest parse error in " + manifest_path.string() + ": " + e.what());
    }

    Dataset ds;
    if (!manifest.contains("samples") || !manifest["samples"].is_array()) {
        throw FormatError("manifest missing 'samples' array");
    }
    std::unordered_set<std::string> seen_ids;
    for (const auto& s : manifest["samples"]) {
        SampleInfo info;
        info.sample_id = s.at("sample_id").get<std::string>();
        info.patient_id = s.at("patient_id").get<std::string>();
        info.label = s.at("label").get<int>();
        if (info.label != 0 && info.label != 1) {
            throw FormatError("manifest label must be 0 or 1 for sample " + info.sample_id);
        }
        if (!seen_ids.insert(info.sample_id).second) {
            throw ConsistencyError("duplicate sample_id in manifest: " + info.sample_id);
        }
        ds.samples.push_back(std::move(info));
    }

    if (!manifest.contains("modalities") || !manifest["modalities"].is_array()) {
        throw FormatError("manifest missing 'modalities' array");
    }
    bool have_image = false, have_tabular = false;
    for (const auto& m : manifest["modalities"]) {
        const std::string name = m.at("name").get<std::string>();
        const std::size_t dim = m.at("dim").get<std::size_t>();
        const fs::path file = dir / m.at("file").get<std::string>();
        ad::Tensor mat = read_embedding_file(file);
        if (mat.cols != dim) {
            throw FormatError("modality '" + name + "': manifest declares dim " +
                              std::to_string(dim) + " but " + file.string() + " has " +
                              std::to_string(mat.cols) + " columns");
        }
        if (mat.rows != ds.samples.size()) {
            throw ConsistencyError("modality '" + name + "': " + std::to_string(mat.rows) +
                                   " rows for " + std::to_string(ds.samples.size()) + " samples");
        }
        if (name == "image") {
            ds.image = std::move(mat);
            have_image = true;
        } else if (name == "tabular") {
            ds.tabular = std::move(mat);
            have_tabular = true;
        } else {
            throw FormatError("unknown modality name '" + name + "'");
        }
    }
    if (!have_image || !have_tabular) {
        throw FormatError("manifest must declare both 'image' and 'tabular' modalities");
    }
    if (manifest.contains("provenance")) {
        ds.provenance_json = manifest["provenance"].dump();
    }
    return ds;
}

Dataset synth_generate(const SynthConfig& cfg) {
    cfg.validate();
    rng::Xoshiro256pp gen(cfg.seed);

    // Fixed projection matrices, drawn once, row-major.
    ad::Tensor proj_image(cfg.latent_dim, cfg.dim_image);
    for (auto& v : proj_image.data) v = gen.normal();
    ad::Tensor proj_tabular(cfg.latent_dim, cfg.dim_tabular);
    for (auto& v : proj_tabular.data) v = gen.normal();

    const std::size_t n = cfg.n_patients * cfg.samples_per_patient;
    Dataset ds;
    ds.samples.reserve(n);
    ds.image = ad::Tensor(n, cfg.dim_image);
    ds.tabular = ad::Tensor(n, cfg.dim_tabular);

    std::vector<double> latent(cfg.latent_dim);
    std::size_t row = 0;
    for (std::size_t p = 0; p < cfg.n_patients; ++p) {
        for (auto& u : latent) u = gen.normal();
        int label = latent[0] > 0.0 ? 1 : 0;
        if (cfg.label_noise > 0.0 && gen.next_double() < cfg.label_noise) label = 1 - label;

        char pid[32];
        std::snprintf(pid, sizeof(pid), "p%04zu", p);
        for (std::size_t s = 0; s < cfg.samples_per_patient; ++s, ++row) {
            char sid[48];
            std::snprintf(sid, sizeof(sid), "%s_s%02zu", pid, s);
            ds.samples.push_back({sid, pid, label});

            double* xi = &ds.image.data[row * cfg.dim_image];
            for (std::size_t j = 0; j < cfg.dim_image; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < cfg.latent_dim; ++k)
                    acc += latent[k] * proj_image.data[k * cfg.dim_image + j];
                xi[j] = acc;
            }
            if (cfg.sigma_image > 0.0) {
                for (std::size_t j = 0; j < cfg.dim_image; ++j)
                    xi[j] += cfg.sigma_image * gen.normal();
            }

            double* xt = &ds.tabular.data[row * cfg.dim_tabular];
            for (std::size_t j = 0; j < cfg.dim_tabular; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < cfg.latent_dim; ++k)
                    acc += latent[k] * proj_tabular.data[k * cfg.dim_tabular + j];
                xt[j] = acc;
            }
            if (cfg.sigma_tabular > 0.0) {
                for (std::size_t j = 0; j < cfg.dim_tabular; ++j)
                    xt[j] += cfg.sigma_tabular * gen.normal();
            }
        }
    }
    return ds;
}

std::vector<FoldSplit> split_folds(const Dataset& ds, std::size_t n_folds, double val_frac,
                                   std::uint64_t seed) {
    // Distinct patients in first-appearance order.
    std::vector<std::string> patients;
    std::unordered_map<std::string, std::vector<std::size_t>> patient_samples;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const std::string& pid = ds.samples[i].patient_id;
        auto [it, inserted] = patient_samples.try_emplace(pid);
        if (inserted) patients.push_back(pid);
        it->second.push_back(i);
    }
    if (patients.size() < n_folds) {
        throw ConsistencyError("fewer patients than folds: " + std::to_string(patients.size()) +
                               " patients for " + std::to_string(n_folds) + " folds");
    }

    rng::Xoshiro256pp gen(rng::derive_seed(seed, 0xF01Du));
    rng::shuffle(patients, gen);

    auto ids_for = [&](const std::vector<std::string>& pids) {
        // Sample ids in dataset order for stable downstream iteration.
        std::unordered_set<std::string> pidset(pids.begin(), pids.end());
        std::vector<std::string> out;
        for (const SampleInfo& s : ds.samples) {
            if (pidset.count(s.patient_id)) out.push_back(s.sample_id);
        }
        return out;
    };

    std::vector<FoldSplit> folds;
    for (std::size_t f = 0; f < n_folds; ++f) {
        std::vector<std::string> test_p, rest_p;
        for (std::size_t i = 0; i < patients.size(); ++i) {
            (i % n_folds == f ? test_p : rest_p).push_back(patients[i]);
        }
        const std::size_t n_val =
            static_cast<std::size_t>(std::ceil(val_frac * static_cast<double>(rest_p.size())));
        std::vector<std::string> val_p(rest_p.begin(), rest_p.begin() + n_val);
        std::vector<std::string> train_p(rest_p.begin() + n_val, rest_p.end());

        FoldSplit split;
        split.fold_id = static_cast<int>(f);
        split.seed = seed;
        split.train_ids = ids_for(train_p);
        split.val_ids = ids_for(val_p);
        split.test_ids = ids_for(test_p);
        folds.push_back(std::move(split));
    }
    return folds;
}

Batch gather(const Dataset& ds, const std::vector<std::string>& ids) {
    std::unordered_map<std::string, std::size_t> index;
    index.reserve(ds.samples.size());
    for (std::size_t i = 0; i < ds.samples.size(); ++i) index[ds.samples[i].sample_id] = i;

    Batch b;
    b.x_image = ad::Tensor(ids.size(), ds.image.cols);
    b.x_tabular = ad::Tensor(ids.size(), ds.tabular.cols);
    b.y = ad::Tensor(ids.size(), 1);
    b.labels.reserve(ids.size());
    for (std::size_t r = 0; r < ids.size(); ++r) {
        auto it = index.find(ids[r]);
        if (it == index.end()) {
            throw ConsistencyError("unknown sample id: " + ids[r]);
        }
        const std::size_t i = it->second;
        std::copy_n(&ds.image.data[i * ds.image.cols], ds.image.cols,
                    &b.x_image.data[r * ds.image.cols]);
        std::copy_n(&ds.tabular.data[i * ds.tabular.cols], ds.tabular.cols,
                    &b.x_tabular.data[r * ds.tabular.cols]);
        b.y.data[r] = static_cast<double>(ds.samples[i].label);
        b.labels.push_back(ds.samples[i].label);
    }
    return b;
}

std::vector<Batch> make_batches(const Dataset& ds, const std::vector<std::string>& ids,
                                std::size_t batch_size, std::uint64_t shuffle_seed,
                                std::uint64_t epoch) {
    if (batch_size < 1) throw ContractError("make_batches: batch_size must be >= 1");
    std::vector<std::string> order = ids;
    rng::Xoshiro256pp gen(rng::derive_seed(shuffle_seed, epoch));
    rng::shuffle(order, gen);

    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        std::vector<std::string> chunk(order.begin() + start, order.begin() + end);
        batches.push_back(gather(ds, chunk));
    }
    return batches;
}

Dataset truncate_tabular(const Dataset& ds, std::size_t k) {
    if (k < 1 || k > ds.tabular.cols) {
        throw ConfigError("truncate_tabular: k must be in [1, " + std::to_string(ds.tabular.cols) +
                          "], got " + std::to_string(k));
    }
    Dataset out;
    out.samples = ds.samples;
    out.image = ds.image;
    out.provenance_json = ds.provenance_json;
    out.tabular = ad::Tensor(ds.tabular.rows, k);
    for (std::size_t i = 0; i < ds.tabular.rows; ++i) {
        std::copy_n(&ds.tabular.data[i * ds.tabular.cols], k, &out.tabular.data[i * k]);
    }
    return out;
}

} // namespace mmfuse::data
