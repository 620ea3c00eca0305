#include "koopcast/model.hpp"

#include "koopcast/errors.hpp"

#include <cmath>
#include <fstream>

namespace koopcast {

using grad::ParamId;
using grad::Tape;
using grad::Var;

Mlp Mlp::glorot(int in, const std::vector<int>& hidden, int out, std::mt19937_64& rng, const std::string& prefix) {
    std::vector<int> widths;
    widths.push_back(in);
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(out);
    Mlp net;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const int fan_in = widths[l];
        const int fan_out = widths[l + 1];
        if (fan_in <= 0 || fan_out <= 0) throw ConfigError("layer widths must be positive");
        const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-s, s);
        DenseLayer layer;
        layer.weight.name = prefix + "." + std::to_string(l) + ".weight";
        layer.weight.value.resize(fan_out, fan_in);
        for (Eigen::Index j = 0; j < fan_in; ++j) {
            for (Eigen::Index i = 0; i < fan_out; ++i) layer.weight.value(i, j) = dist(rng);
        }
        layer.bias.name = prefix + "." + std::to_string(l) + ".bias";
        layer.bias.value = Matrix::Zero(fan_out, 1);
        net.layers.push_back(std::move(layer));
    }
    return net;
}

Mlp Mlp::identity(int dim, const std::string& prefix) {
    DenseLayer layer;
    layer.weight = Param{prefix + ".0.weight", Matrix::Identity(dim, dim), false};
    layer.bias = Param{prefix + ".0.bias", Matrix::Zero(dim, 1), false};
    Mlp net;
    net.layers.push_back(std::move(layer));
    return net;
}

Normalizer Normalizer::identity(int dim) { return {Vector::Zero(dim), Vector::Ones(dim)}; }

Normalizer Normalizer::fit(const Matrix& values) {
    if (values.rows() == 0) throw DegenerateDataError("cannot fit a normalizer on zero rows");
    Normalizer n;
    n.mean = values.colwise().mean().transpose();
    n.scale.resize(values.cols());
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
        const double var = (values.col(j).array() - n.mean(j)).square().mean();
        n.scale(j) = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return n;
}

std::vector<Param*> KoopmanModel::parameters() {
    std::vector<Param*> out;
    for (auto& layer : encoder.layers) {
        out.push_back(&layer.weight);
        out.push_back(&layer.bias);
    }
    for (auto& layer : decoder.layers) {
        out.push_back(&layer.weight);
        out.push_back(&layer.bias);
    }
    out.push_back(&basis_u);
    out.push_back(&basis_z);
    out.push_back(&decay_raw);
    out.push_back(&frequency_raw);
    return out;
}

std::vector<const Param*> KoopmanModel::parameters() const {
    auto mutable_params = const_cast<KoopmanModel*>(this)->parameters();
    return {mutable_params.begin(), mutable_params.end()};
}

KoopmanSpectrum KoopmanModel::spectrum() const {
    return realize_spectrum(constraint, decay_raw.value, frequency_raw.value);
}

EigenBasis KoopmanModel::basis() const { return {basis_u.value, basis_z.value}; }

void KoopmanModel::validate() const {
    if (M < 1 || K < 1) throw ConfigError("model dimensions must be positive");
    if (constraint.dimension() != K) throw ConfigError("constraint dimension does not match K");
    constraint.validate();
    auto check_chain = [](const Mlp& net, Eigen::Index in, Eigen::Index out, const char* what) {
        if (net.layers.empty()) throw ConfigError(std::string(what) + " has no layers");
        Eigen::Index width = in;
        for (const auto& layer : net.layers) {
            if (layer.weight.value.cols() != width || layer.bias.value.rows() != layer.weight.value.rows() ||
                layer.bias.value.cols() != 1) {
                throw ConfigError(std::string(what) + " layer widths do not chain");
            }
            width = layer.weight.value.rows();
        }
        if (width != out) throw ConfigError(std::string(what) + " output width mismatch");
    };
    check_chain(encoder, M, K, "encoder");
    check_chain(decoder, K, M, "decoder");
    if (basis_u.value.rows() != K || basis_u.value.cols() != (K + 1) / 2 || basis_z.value.rows() != K ||
        basis_z.value.cols() != K / 2) {
        throw ConfigError("eigenbasis shape does not match K");
    }
    if (decay_raw.value.rows() != static_cast<Eigen::Index>(constraint.trainable_decay_count()) ||
        frequency_raw.value.rows() != static_cast<Eigen::Index>(constraint.trainable_frequency_count())) {
        throw ConfigError("raw spectral parameter count does not match the constraint");
    }
    if (normalizer.mean.size() != M || normalizer.scale.size() != M) {
        throw ConfigError("normalizer dimension does not match M");
    }
}

namespace {

void init_spectral_params(KoopmanModel& m, std::mt19937_64& rng) {
    const EigenBasis basis = EigenBasis::perturbed_identity(m.K, rng);
    m.basis_u = Param{"basis.u", basis.U, true};
    m.basis_z = Param{"basis.z", basis.Z, true};
    m.decay_raw = Param{"spectrum.decay_raw", m.constraint.initial_decay_raw(), true};
    m.frequency_raw = Param{"spectrum.frequency_raw", m.constraint.initial_frequency_raw(), true};
}

}  // namespace

KoopmanModel init_model(int M, int K, const std::vector<int>& hidden, const SpectralConstraint& constraint,
                        std::uint64_t seed, TimeMode time_mode) {
    if (K < 1 || M < 1) throw ConfigError("init_model: M and K must be positive");
    KoopmanModel m;
    m.M = M;
    m.K = K;
    m.hidden = hidden;
    m.time_mode = time_mode;
    m.constraint = constraint;
    std::mt19937_64 rng(seed);
    m.encoder = Mlp::glorot(M, hidden, K, rng, "encoder");
    m.decoder = Mlp::glorot(K, hidden, M, rng, "decoder");
    init_spectral_params(m, rng);
    m.normalizer = Normalizer::identity(M);
    m.validate();
    return m;
}

KoopmanModel init_linear_model(int M, const SpectralConstraint& constraint, std::uint64_t seed, TimeMode time_mode) {
    KoopmanModel m;
    m.M = M;
    m.K = M;
    m.time_mode = time_mode;
    m.constraint = constraint;
    std::mt19937_64 rng(seed);
    m.encoder = Mlp::identity(M, "encoder");
    m.decoder = Mlp::identity(M, "decoder");
    init_spectral_params(m, rng);
    m.normalizer = Normalizer::identity(M);
    m.validate();
    return m;
}

ModelGraph::ModelGraph(Tape& tape, const KoopmanModel& model) : tape_(&tape), model_(&model) {
    const auto params = model.parameters();
    bound_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Param& p = *params[i];
        if (p.value.size() == 0) continue;
        bound_[i] = p.trainable ? tape.param(ParamId{i}, p.value) : tape.constant(p.value);
    }
    decoder_first_ = 2 * model.encoder.layers.size();
    const std::size_t basis_index = decoder_first_ + 2 * model.decoder.layers.size();
    basis_ = spectral::assemble_basis(*bound_[basis_index], bound_[basis_index + 1]);
    spectrum_ = spectral::realize_spectrum(tape, model.constraint, bound_[basis_index + 2], bound_[basis_index + 3]);
}

Var ModelGraph::run(const Mlp& net, std::size_t first_param, Var X) const {
    Var h = X;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        const Var W = *bound_[first_param + 2 * l];
        const Var b = *bound_[first_param + 2 * l + 1];
        h = grad::add(grad::matmul(W, h), b);
        if (l + 1 < net.layers.size()) h = grad::tanh(h);
    }
    return h;
}

Var ModelGraph::encode(Var Y) const {
    if (Y.rows() != model_->M) throw ShapeError("encode: expected M rows");
    const auto& norm = model_->normalizer;
    const Var centered = grad::sub(Y, tape_->constant(Matrix(norm.mean)));
    const Var scaled = grad::mul(centered, tape_->constant(Matrix(norm.scale.cwiseInverse())));
    return run(model_->encoder, 0, scaled);
}

Var ModelGraph::decode_network(Var G) const {
    if (G.rows() != model_->K) throw ShapeError("decode: expected K rows");
    return run(model_->decoder, decoder_first_, G);
}

Var ModelGraph::decode(Var G) const {
    const auto& norm = model_->normalizer;
    const Var out = decode_network(G);
    return grad::add(grad::mul(out, tape_->constant(Matrix(norm.scale))), tape_->constant(Matrix(norm.mean)));
}

Var ModelGraph::propagate(Var G, Var tau) const {
    return spectral::propagate(basis_, spectrum_, tau, G, model_->time_mode);
}

Var ModelGraph::forecast(Var Y, Var tau) const { return decode(propagate(encode(Y), tau)); }

Vector encode(const KoopmanModel& model, const Vector& y) {
    Tape tape;
    ModelGraph graph(tape, model);
    return graph.encode(tape.constant(Matrix(y))).value().col(0);
}

Vector decode(const KoopmanModel& model, const Vector& g) {
    Tape tape;
    ModelGraph graph(tape, model);
    return graph.decode(tape.constant(Matrix(g))).value().col(0);
}

Vector forecast(const KoopmanModel& model, const Vector& y, double tau) {
    Tape tape;
    ModelGraph graph(tape, model);
    return graph.forecast(tape.constant(Matrix(y)), tape.constant(tau)).value().col(0);
}

Matrix forecast_many(const KoopmanModel& model, const Vector& y, const Vector& taus) {
    Tape tape;
    ModelGraph graph(tape, model);
    const Var g = graph.encode(tape.constant(Matrix(y)));
    const std::vector<Eigen::Index> anchor(static_cast<std::size_t>(taus.size()), 0);
    const Var G = grad::gather_cols(g, anchor);
    return graph.decode(graph.propagate(G, tape.constant(Matrix(taus.transpose())))).value();
}

std::vector<DynamicMode> dynamic_modes(const KoopmanModel& model) {
    auto decoder = [&model](const Vector& g) {
        Tape tape;
        ModelGraph graph(tape, model);
        return Vector(graph.decode_network(tape.constant(Matrix(g))).value().col(0));
    };
    return dynamic_modes(model.basis(), model.spectrum(), decoder);
}

namespace {

using nlohmann::json;

json matrix_to_json(const Matrix& m) {
    json data = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
    }
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Matrix matrix_from_json(const json& j) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto& data = j.at("data");
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw ConfigError("matrix data size mismatch");
    Matrix m(rows, cols);
    std::size_t at = 0;
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j2 = 0; j2 < cols; ++j2) m(i, j2) = data[at++].get<double>();
    }
    return m;
}

json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from_json(const json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json entry_to_json(const ParamSpec& entry) {
    return std::visit(
        [](const auto& s) -> json {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, Fixed>) {
                return {{"kind", "fixed"}, {"value", s.value}};
            } else if constexpr (std::is_same_v<T, Free>) {
                return {{"kind", "free"}, {"init", s.init}};
            } else if constexpr (std::is_same_v<T, ForcedNegative>) {
                return {{"kind", "negative"}, {"init_raw", s.init_raw}};
            } else if constexpr (std::is_same_v<T, ForcedPositive>) {
                return {{"kind", "positive"}, {"init_raw", s.init_raw}};
            } else {
                return {{"kind", "range"}, {"start", s.start}, {"end", s.end}, {"init_raw", s.init_raw}};
            }
        },
        entry);
}

ParamSpec entry_from_json(const json& j) {
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "fixed") return Fixed{j.at("value").get<double>()};
    if (kind == "free") return Free{j.value("init", 0.0)};
    if (kind == "negative") return ForcedNegative{j.value("init_raw", 0.0)};
    if (kind == "positive") return ForcedPositive{j.value("init_raw", 0.0)};
    if (kind == "range") return Range{j.at("start").get<double>(), j.at("end").get<double>(), j.value("init_raw", 0.0)};
    throw ConfigError("unknown spectral constraint kind '" + kind + "'");
}

json param_to_json(const Param& p) {
    json j = matrix_to_json(p.value);
    j["name"] = p.name;
    j["trainable"] = p.trainable;
    return j;
}

Param param_from_json(const json& j) {
    return Param{j.at("name").get<std::string>(), matrix_from_json(j), j.at("trainable").get<bool>()};
}

json mlp_to_json(const Mlp& net) {
    json layers = json::array();
    for (const auto& layer : net.layers) {
        layers.push_back({{"weight", param_to_json(layer.weight)}, {"bias", param_to_json(layer.bias)}});
    }
    return layers;
}

Mlp mlp_from_json(const json& j) {
    Mlp net;
    for (const auto& layer : j) {
        net.layers.push_back({param_from_json(layer.at("weight")), param_from_json(layer.at("bias"))});
    }
    return net;
}

constexpr const char* kCheckpointFormat = "koopcast-checkpoint";

}  // namespace

nlohmann::json constraint_to_json(const SpectralConstraint& constraint) {
    json decay = json::array();
    json frequency = json::array();
    for (const auto& s : constraint.decay) decay.push_back(entry_to_json(s));
    for (const auto& s : constraint.frequency) frequency.push_back(entry_to_json(s));
    return {{"decay", decay}, {"frequency", frequency}};
}

SpectralConstraint constraint_from_json(const nlohmann::json& j) {
    SpectralConstraint c;
    for (const auto& s : j.at("decay")) c.decay.push_back(entry_from_json(s));
    for (const auto& s : j.at("frequency")) c.frequency.push_back(entry_from_json(s));
    c.validate();
    return c;
}

nlohmann::json model_to_json(const KoopmanModel& model) {
    return {
        {"format", kCheckpointFormat},
        {"version", 1},
        {"M", model.M},
        {"K", model.K},
        {"hidden", model.hidden},
        {"time_mode", to_string(model.time_mode)},
        {"constraint", constraint_to_json(model.constraint)},
        {"normalizer", {{"mean", vector_to_json(model.normalizer.mean)}, {"scale", vector_to_json(model.normalizer.scale)}}},
        {"encoder", mlp_to_json(model.encoder)},
        {"decoder", mlp_to_json(model.decoder)},
        {"basis_u", param_to_json(model.basis_u)},
        {"basis_z", param_to_json(model.basis_z)},
        {"decay_raw", param_to_json(model.decay_raw)},
        {"frequency_raw", param_to_json(model.frequency_raw)},
    };
}

KoopmanModel model_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != kCheckpointFormat) throw ConfigError("not a koopcast checkpoint");
        if (j.at("version").get<int>() != 1) throw ConfigError("unsupported checkpoint version");
        KoopmanModel m;
        m.M = j.at("M").get<int>();
        m.K = j.at("K").get<int>();
        m.hidden = j.at("hidden").get<std::vector<int>>();
        m.time_mode = time_mode_from_string(j.at("time_mode").get<std::string>());
        m.constraint = constraint_from_json(j.at("constraint"));
        m.normalizer.mean = vector_from_json(j.at("normalizer").at("mean"));
        m.normalizer.scale = vector_from_json(j.at("normalizer").at("scale"));
        m.encoder = mlp_from_json(j.at("encoder"));
        m.decoder = mlp_from_json(j.at("decoder"));
        m.basis_u = param_from_json(j.at("basis_u"));
        m.basis_z = param_from_json(j.at("basis_z"));
        m.decay_raw = param_from_json(j.at("decay_raw"));
        m.frequency_raw = param_from_json(j.at("frequency_raw"));
        m.validate();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed checkpoint: ") + e.what());
    }
}

void save_checkpoint(const KoopmanModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    out << model_to_json(model).dump(2) << '\n';
    if (!out) throw Error("failed writing " + path.string());
}

KoopmanModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    try {
        return model_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("checkpoint " + path.string() + ": " + e.what());
    }
}

}  // namespace koopcast
