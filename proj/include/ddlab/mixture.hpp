// Finite Gaussian-mixture data: rows x_i ~ N(mu_j / d, I_d / d) with mode j
// drawn from class probabilities p, responses y_i from a finite discrete law
// per mode, and an optional three-point discrete noise variant with the same
// first two moments as the Gaussian.
#pragma once

#include "ddlab/config.hpp"
#include "ddlab/rng.hpp"

#include <Eigen/Core>

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddlab {

enum class NoiseKind { gaussian, three_point };

inline std::string to_string(NoiseKind k) {
    return k == NoiseKind::gaussian ? "gaussian" : "three-point";
}

inline NoiseKind noise_kind_from_string(const std::string& s) {
    if (s == "gaussian") return NoiseKind::gaussian;
    if (s == "three-point") return NoiseKind::three_point;
    throw ConfigError("unknown noise kind: " + s);
}

// A samplable scalar law with finite support (point mass, two-point flip, or
// general finite discrete).
struct ResponseLaw {
    Eigen::VectorXd values;
    Eigen::VectorXd probs;

    static ResponseLaw point_mass(double v) {
        ResponseLaw law;
        law.values = Eigen::VectorXd::Constant(1, v);
        law.probs = Eigen::VectorXd::Constant(1, 1.0);
        return law;
    }

    static ResponseLaw two_point(double v0, double p0, double v1) {
        ResponseLaw law;
        law.values.resize(2);
        law.values << v0, v1;
        law.probs.resize(2);
        law.probs << p0, 1.0 - p0;
        return law;
    }

    static ResponseLaw discrete(Eigen::VectorXd values, Eigen::VectorXd probs) {
        ResponseLaw law;
        law.values = std::move(values);
        law.probs = std::move(probs);
        law.validate();
        return law;
    }

    void validate() const {
        if (values.size() == 0 || values.size() != probs.size())
            throw std::invalid_argument("ResponseLaw: values/probs size mismatch");
        if (probs.minCoeff() < 0.0 || std::abs(probs.sum() - 1.0) > 1e-12)
            throw std::invalid_argument("ResponseLaw: probabilities must sum to 1");
    }

    double sample(Rng& rng) const { return values[rng.discrete(probs)]; }
};

struct MixtureSpec {
    int d = 0;
    std::vector<Eigen::VectorXd> mu;   // signal vectors, one per mode
    Eigen::VectorXd p;                 // class probabilities, normalized
    std::vector<ResponseLaw> laws;     // response law per mode
    NoiseKind noise = NoiseKind::gaussian;
    Eigen::MatrixXd chi;               // cached mu_j^T mu_k / d

    int modes() const { return static_cast<int>(mu.size()); }

    static MixtureSpec create(int d, std::vector<Eigen::VectorXd> mu, Eigen::VectorXd p,
                              std::vector<ResponseLaw> laws,
                              NoiseKind noise = NoiseKind::gaussian) {
        MixtureSpec spec;
        spec.d = d;
        spec.mu = std::move(mu);
        spec.p = std::move(p);
        spec.laws = std::move(laws);
        spec.noise = noise;
        spec.validate_and_finalize();
        return spec;
    }

    void validate_and_finalize() {
        if (d < 1) throw std::invalid_argument("MixtureSpec: d must be >= 1");
        const auto J = static_cast<int>(mu.size());
        if (J < 1) throw std::invalid_argument("MixtureSpec: need at least one mode");
        if (p.size() != J || static_cast<int>(laws.size()) != J)
            throw std::invalid_argument("MixtureSpec: p/laws size mismatch");
        for (const auto& m : mu)
            if (m.size() != d) throw std::invalid_argument("MixtureSpec: signal length != d");
        for (const auto& law : laws) law.validate();
        const double total = p.sum();
        if (total <= 0.0 || p.minCoeff() < 0.0)
            throw std::invalid_argument("MixtureSpec: invalid class probabilities");
        p /= total;
        chi.resize(J, J);
        for (int j = 0; j < J; ++j)
            for (int k = j; k < J; ++k) {
                chi(j, k) = mu[j].dot(mu[k]) / static_cast<double>(d);
                chi(k, j) = chi(j, k);
            }
    }
};

// chi_{j,k} = mu_j^T mu_k / d, the limiting signal Gram matrix.
inline Eigen::MatrixXd compute_chi(const MixtureSpec& spec) { return spec.chi; }

// J=1, mu=0, y=0 regression: the setting where GD's train/test curves
// diverge maximally.
inline MixtureSpec build_signalless_spec(int d) {
    if (d < 1) throw std::invalid_argument("build_signalless_spec: d must be >= 1");
    return MixtureSpec::create(d, {Eigen::VectorXd::Zero(d)},
                               Eigen::VectorXd::Constant(1, 1.0),
                               {ResponseLaw::point_mass(0.0)});
}

// High-dimensional XOR: four modes [v,v], [-v,-v], [-v,v], [v,-v] with
// v = lambda * ones(d/2); labels 0,0,1,1.
inline MixtureSpec build_xor_spec(int d, double lambda) {
    if (d < 2 || d % 2 != 0) throw std::invalid_argument("build_xor_spec: d must be even");
    if (lambda <= 0.0) throw std::invalid_argument("build_xor_spec: lambda must be > 0");
    const int half = d / 2;
    const Eigen::VectorXd v = Eigen::VectorXd::Constant(half, lambda);
    auto stack = [&](double s0, double s1) {
        Eigen::VectorXd m(d);
        m.head(half) = s0 * v;
        m.tail(half) = s1 * v;
        return m;
    };
    std::vector<Eigen::VectorXd> mu = {stack(1, 1), stack(-1, -1), stack(-1, 1), stack(1, -1)};
    std::vector<ResponseLaw> laws = {ResponseLaw::point_mass(0.0), ResponseLaw::point_mass(0.0),
                                     ResponseLaw::point_mass(1.0), ResponseLaw::point_mass(1.0)};
    return MixtureSpec::create(d, std::move(mu), Eigen::VectorXd::Constant(4, 0.25),
                               std::move(laws));
}

struct Dataset {
    Eigen::MatrixXd X;          // n x d
    Eigen::VectorXd y;          // n
    std::vector<int> labels;    // latent mode per row, kept for diagnostics

    int n() const { return static_cast<int>(X.rows()); }
    int d() const { return static_cast<int>(X.cols()); }
};

// Draws n i.i.d. rows; per row the draw order is label, response, then the d
// noise entries, so a (spec, n, seed) triple is bit-reproducible.
inline Dataset sample_dataset(const MixtureSpec& spec, int n, std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("sample_dataset: n must be >= 1");
    Rng rng(seed);
    Dataset data;
    data.X.resize(n, spec.d);
    data.y.resize(n);
    data.labels.resize(n);
    const double gauss_scale = 1.0 / std::sqrt(static_cast<double>(spec.d));
    const double spike = std::sqrt(2.0) / std::sqrt(static_cast<double>(spec.d));
    const double inv_d = 1.0 / static_cast<double>(spec.d);
    for (int i = 0; i < n; ++i) {
        const int j = rng.discrete(spec.p);
        data.labels[i] = j;
        data.y[i] = spec.laws[j].sample(rng);
        for (int c = 0; c < spec.d; ++c) {
            double z;
            if (spec.noise == NoiseKind::gaussian) {
                z = gauss_scale * rng.gaussian();
            } else {
                const double u = rng.uniform();
                z = u < 0.25 ? -spike : (u < 0.5 ? spike : 0.0);
            }
            data.X(i, c) = spec.mu[j][c] * inv_d + z;
        }
    }
    return data;
}

// The finite-sample overlaps whose n,d -> infinity limits state evolution
// predicts: m_j = mu_j^T theta / d, Omega = theta^T theta / d,
// Xi = theta^T theta_tilde / d, Sigma = hhat^T hhat / n.
struct OverlapRecord {
    std::vector<Eigen::VectorXd> m;
    Eigen::MatrixXd omega;
    Eigen::MatrixXd xi;
    Eigen::MatrixXd sigma;
};

inline OverlapRecord empirical_overlaps(const Eigen::MatrixXd& theta,
                                        const Eigen::MatrixXd& theta_tilde,
                                        const Eigen::MatrixXd& hhat,
                                        const MixtureSpec& spec) {
    if (theta_tilde.rows() != theta.rows() || theta_tilde.cols() != theta.cols())
        throw std::invalid_argument("empirical_overlaps: theta_tilde shape mismatch");
    if (hhat.cols() != theta.cols())
        throw std::invalid_argument("empirical_overlaps: hhat width mismatch");
    if (theta.rows() != spec.d)
        throw std::invalid_argument("empirical_overlaps: theta rows != d");
    const double inv_d = 1.0 / static_cast<double>(spec.d);
    OverlapRecord rec;
    rec.m.reserve(spec.mu.size());
    for (const auto& mu : spec.mu) rec.m.push_back(theta.transpose() * mu * inv_d);
    rec.omega = theta.transpose() * theta * inv_d;
    rec.xi = theta.transpose() * theta_tilde * inv_d;
    rec.sigma = hhat.transpose() * hhat / static_cast<double>(hhat.rows());
    return rec;
}

// --- plain-text serialization ------------------------------------------------

inline std::string spec_to_config(const MixtureSpec& spec) {
    ConfigMap cfg;
    cfg["dimension"] = std::to_string(spec.d);
    cfg["num_modes"] = std::to_string(spec.modes());
    cfg["noise"] = to_string(spec.noise);
    std::vector<double> pv(spec.p.data(), spec.p.data() + spec.p.size());
    cfg["class_probs"] = format_double_list(pv);
    for (int j = 0; j < spec.modes(); ++j) {
        const std::string tag = std::to_string(j + 1);
        std::vector<double> mv(spec.mu[j].data(), spec.mu[j].data() + spec.mu[j].size());
        cfg["signal_" + tag] = format_double_list(mv);
        const auto& law = spec.laws[j];
        std::vector<double> lv(law.values.data(), law.values.data() + law.values.size());
        std::vector<double> lp(law.probs.data(), law.probs.data() + law.probs.size());
        cfg["response_" + tag + "_values"] = format_double_list(lv);
        cfg["response_" + tag + "_probs"] = format_double_list(lp);
    }
    return canonical_text(cfg);
}

inline MixtureSpec spec_from_config(const ConfigMap& cfg) {
    const int d = static_cast<int>(get_int(cfg, "dimension"));
    const int J = static_cast<int>(get_int(cfg, "num_modes"));
    const auto pv = parse_double_list(detail::require(cfg, "class_probs"), "class_probs");
    if (static_cast<int>(pv.size()) != J) throw ConfigError("class_probs length != num_modes");
    Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(pv.data(), J);
    std::vector<Eigen::VectorXd> mu;
    std::vector<ResponseLaw> laws;
    for (int j = 1; j <= J; ++j) {
        const std::string tag = std::to_string(j);
        const auto mv = parse_double_list(detail::require(cfg, "signal_" + tag), "signal_" + tag);
        if (static_cast<int>(mv.size()) != d) throw ConfigError("signal_" + tag + " length != dimension");
        mu.push_back(Eigen::Map<const Eigen::VectorXd>(mv.data(), d));
        const auto lv = parse_double_list(detail::require(cfg, "response_" + tag + "_values"),
                                          "response_" + tag + "_values");
        const auto lp = parse_double_list(detail::require(cfg, "response_" + tag + "_probs"),
                                          "response_" + tag + "_probs");
        laws.push_back(ResponseLaw::discrete(
            Eigen::Map<const Eigen::VectorXd>(lv.data(), static_cast<int>(lv.size())),
            Eigen::Map<const Eigen::VectorXd>(lp.data(), static_cast<int>(lp.size()))));
    }
    return MixtureSpec::create(d, std::move(mu), std::move(p), std::move(laws),
                               noise_kind_from_string(get_string(cfg, "noise", "gaussian")));
}

// Debug export: row = x_1..x_d, y, label.
inline void write_dataset_csv(std::ostream& out, const Dataset& data) {
    for (int i = 0; i < data.n(); ++i) {
        for (int c = 0; c < data.d(); ++c) out << format_double(data.X(i, c)) << ',';
        out << format_double(data.y[i]) << ',' << data.labels[i] << '\n';
    }
}

}  // namespace ddlab
