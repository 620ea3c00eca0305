#pragma once

// Encoder -> Koopman propagation -> decoder forecaster.
//
//   forecast(y, tau) = decode(W * B(tau) * W^{-1} * encode(y))
//
// encode/decode include the per-dimension standardization stored in the
// model, so every public entry point works in raw measurement units.

#include "koopcast/spectral.hpp"
#include "koopcast/tape.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace koopcast {

struct Param {
    std::string name;
    Matrix value;
    bool trainable = true;
};

struct DenseLayer {
    Param weight;  ///< out x in
    Param bias;    ///< out x 1
};

/// Feed-forward network: tanh on hidden layers, linear output layer.
struct Mlp {
    std::vector<DenseLayer> layers;

    [[nodiscard]] Eigen::Index input_dim() const { return layers.front().weight.value.cols(); }
    [[nodiscard]] Eigen::Index output_dim() const { return layers.back().weight.value.rows(); }

    /// Glorot-uniform weights, zero biases.
    static Mlp glorot(int in, const std::vector<int>& hidden, int out, std::mt19937_64& rng,
                      const std::string& prefix);
    /// Single frozen layer with identity weight and zero bias.
    static Mlp identity(int dim, const std::string& prefix);
};

struct Normalizer {
    Vector mean;
    Vector scale;

    static Normalizer identity(int dim);
    /// Column means and standard deviations of an N x M value matrix; a zero
    /// deviation falls back to 1.
    static Normalizer fit(const Matrix& values);
};

struct KoopmanModel {
    int M = 0;
    int K = 0;
    std::vector<int> hidden;
    TimeMode time_mode = TimeMode::continuous;
    Mlp encoder;
    Mlp decoder;
    SpectralConstraint constraint;
    Param basis_u;        ///< K x ceil(K/2)
    Param basis_z;        ///< K x floor(K/2)
    Param decay_raw;      ///< one entry per trainable decay constraint
    Param frequency_raw;  ///< one entry per trainable frequency constraint
    Normalizer normalizer;

    /// Every parameter in a stable order; ParamId{i} names element i.
    [[nodiscard]] std::vector<Param*> parameters();
    [[nodiscard]] std::vector<const Param*> parameters() const;

    [[nodiscard]] KoopmanSpectrum spectrum() const;
    [[nodiscard]] EigenBasis basis() const;
    /// Throws ConfigError when widths do not chain or shapes disagree with M and K.
    void validate() const;
};

/// Builds a model with Glorot-initialized networks, a perturbed-identity
/// eigenbasis and raw spectral parameters taken from the constraint's
/// initial values. Zero hidden layers gives linear networks.
KoopmanModel init_model(int M, int K, const std::vector<int>& hidden, const SpectralConstraint& constraint,
                        std::uint64_t seed, TimeMode time_mode = TimeMode::continuous);

/// The linear model used by the constrained-DMD baseline: frozen identity
/// encoder and decoder (M == K), trainable eigenbasis and spectrum.
KoopmanModel init_linear_model(int M, const SpectralConstraint& constraint, std::uint64_t seed,
                               TimeMode time_mode = TimeMode::continuous);

/// A model bound onto a tape. Trainable parameters become leaves keyed by
/// their ParamId; frozen ones become constants.
class ModelGraph {
public:
    ModelGraph(grad::Tape& tape, const KoopmanModel& model);

    [[nodiscard]] grad::Tape& tape() const { return *tape_; }
    [[nodiscard]] const KoopmanModel& model() const { return *model_; }

    /// Y is M x B (raw units); returns K x B.
    grad::Var encode(grad::Var Y) const;
    /// G is K x B; returns M x B in raw units.
    grad::Var decode(grad::Var G) const;
    /// Decoder network only, without undoing the standardization.
    grad::Var decode_network(grad::Var G) const;
    /// Propagates Koopman columns G by per-column (or shared) horizons tau.
    grad::Var propagate(grad::Var G, grad::Var tau) const;
    grad::Var forecast(grad::Var Y, grad::Var tau) const;

    [[nodiscard]] grad::Var basis() const { return basis_; }
    [[nodiscard]] const spectral::SpectrumVars& spectrum() const { return spectrum_; }

private:
    grad::Var bind(std::size_t index) const;
    grad::Var run(const Mlp& net, std::size_t first_param, grad::Var X) const;

    grad::Tape* tape_;
    const KoopmanModel* model_;
    std::vector<std::optional<grad::Var>> bound_;
    std::size_t decoder_first_ = 0;
    grad::Var basis_;
    spectral::SpectrumVars spectrum_;
};

// Value-level entry points.
Vector encode(const KoopmanModel& model, const Vector& y);
Vector decode(const KoopmanModel& model, const Vector& g);
Vector forecast(const KoopmanModel& model, const Vector& y, double tau);
/// Forecasts from one anchor to many horizons: column j is the prediction at taus(j).
Matrix forecast_many(const KoopmanModel& model, const Vector& y, const Vector& taus);

/// Modes of a trained model: rows of W^{-1} through the decoder network.
std::vector<DynamicMode> dynamic_modes(const KoopmanModel& model);

// Checkpoints.
nlohmann::json constraint_to_json(const SpectralConstraint& constraint);
SpectralConstraint constraint_from_json(const nlohmann::json& j);
nlohmann::json model_to_json(const KoopmanModel& model);
KoopmanModel model_from_json(const nlohmann::json& j);
void save_checkpoint(const KoopmanModel& model, const std::filesystem::path& path);
KoopmanModel load_checkpoint(const std::filesystem::path& path);

}  // namespace koopcast
