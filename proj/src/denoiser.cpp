#include "mbsync/denoiser.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Eigenvalues>

#include <json.hpp>

#include "mbsync/container.hpp"
#include "mbsync/rng.hpp"

namespace mbsync {

using nlohmann::json;

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

// tanh(u) = 1 - 2 / (exp(2u) + 1); Eigen vectorizes exp but not tanh for doubles.
Eigen::ArrayXXd gelu_tanh(const Matrix& a) {
    const auto x = a.array();
    return 1.0 - 2.0 / ((2.0 * kGeluC * (x + kGeluA * x.cube())).exp() + 1.0);
}

// tanh form of GELU.
Matrix gelu(const Matrix& a) { return (0.5 * a.array() * (1.0 + gelu_tanh(a))).matrix(); }

Matrix gelu_grad(const Matrix& a) {
    const auto x = a.array();
    const Eigen::ArrayXXd th = gelu_tanh(a);
    return (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th.square()) * kGeluC * (1.0 + 3.0 * kGeluA * x.square())).matrix();
}

Matrix stack(const std::vector<Matrix>& xs, Eigen::Index rows, Eigen::Index cols) {
    Matrix out(static_cast<Eigen::Index>(xs.size()) * rows, cols);
    for (std::size_t s = 0; s < xs.size(); ++s) {
        require_shape(xs[s].rows() == rows && xs[s].cols() == cols, "denoiser: input shape mismatch");
        out.middleRows(static_cast<Eigen::Index>(s) * rows, rows) = xs[s];
    }
    return out;
}

}  // namespace

GeometryEncoder::GeometryEncoder(std::uint64_t seed, int points)
    : bps_(BasisPointSet::make(derive_seed(seed, {kStreamBps, 0}), points)) {
    Rng rng(derive_seed(seed, {kStreamBps, 1}));
    projection_ = rng.normal_matrix(3 * points, kGeometryWidth) / std::sqrt(3.0 * points);
}

Vector GeometryEncoder::encode(const ShapePrimitive& shape) const {
    const Matrix d = bps_encode(shape, bps_);
    const Eigen::Map<const Eigen::RowVectorXd> flat(d.data(), d.size());
    return (flat * projection_).transpose();
}

ConditionInputs make_condition(const SceneSpec& spec, const std::vector<ShapePrimitive>& shapes,
                               const GeometryEncoder& enc, Eigen::Index frames, const Vector& mask) {
    require_shape(static_cast<int>(shapes.size()) == spec.m, "make_condition: one shape per rigid");
    ConditionInputs c;
    c.action = spec.action();
    c.labels = spec.object_labels();
    c.geometry.resize(spec.m, kGeometryWidth);
    for (int j = 0; j < spec.m; ++j) c.geometry.row(j) = enc.encode(shapes[static_cast<std::size_t>(j)]).transpose();
    c.shape = spec.shape;
    c.mask = mask.size() ? mask : Vector(Vector::Ones(frames));
    require_shape(c.mask.size() == frames, "make_condition: mask length mismatch");
    return c;
}

Vector sinusoidal_embedding(double t, int dim) {
    if (dim < 2 || dim % 2) throw ConfigError("sinusoidal_embedding: dim must be even and >= 2");
    const int half = dim / 2;
    Vector e(dim);
    for (int k = 0; k < half; ++k) {
        const double w = std::pow(10000.0, -static_cast<double>(k) / half);
        e[k] = std::sin(t * w);
        e[half + k] = std::cos(t * w);
    }
    return e;
}

Matrix analytic_gaussian_denoise(const Matrix& mu0, double v0, const Matrix& x_t, int t, const NoiseSchedule& sched) {
    require_shape(mu0.rows() == x_t.rows() && mu0.cols() == x_t.cols(), "analytic_gaussian_denoise: shape mismatch");
    if (!(v0 >= 0.0)) throw ConfigError("analytic_gaussian_denoise: v0 must be >= 0");
    const double ab = sched.alpha_bar(t);
    return (v0 * std::sqrt(ab) * x_t + (1.0 - ab) * mu0) / (v0 * ab + 1.0 - ab);
}

GaussianDenoiser::GaussianDenoiser(Vector mean, Matrix cov, NoiseSchedule sched)
    : mean_(std::move(mean)), cov_(std::move(cov)), sched_(std::move(sched)) {
    if (cov_.rows() != mean_.size() || cov_.cols() != mean_.size()) throw ConfigError("GaussianDenoiser: shape mismatch");
    if (!cov_.isApprox(cov_.transpose())) throw ConfigError("GaussianDenoiser: covariance not symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov_);
    if (es.eigenvalues().minCoeff() < -1e-12) throw ConfigError("GaussianDenoiser: covariance not PSD");
}

std::vector<Matrix> GaussianDenoiser::predict_x0(const std::vector<Matrix>& x_t, int t,
                                                 const std::vector<const ConditionInputs*>&) const {
    const double ab = sched_.alpha_bar(t), sa = std::sqrt(ab);
    const Eigen::Index d = mean_.size();
    // E[x0 | x_t] = mu + sqrt(ab) S (ab S + (1 - ab) I)^-1 (x_t - sqrt(ab) mu)
    const Eigen::MatrixXd K =
        sa * cov_ * (ab * cov_ + (1.0 - ab) * Eigen::MatrixXd::Identity(d, d)).inverse();
    std::vector<Matrix> out;
    for (const auto& x : x_t) {
        require_shape(x.cols() == d, "GaussianDenoiser: width mismatch");
        Matrix centred = x.rowwise() - sa * mean_.transpose();
        Matrix r = centred * K.transpose();
        r.rowwise() += mean_.transpose();
        out.push_back(std::move(r));
    }
    return out;
}

int ParamStore::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    entries_.push_back({name, rows, cols, size_});
    size_ += rows * cols;
    return static_cast<int>(entries_.size()) - 1;
}

Eigen::Map<Matrix> ParamStore::view(Vector& flat, int id) const {
    const auto& e = entry(id);
    return {flat.data() + e.offset, e.rows, e.cols};
}

Eigen::Map<const Matrix> ParamStore::view(const Vector& flat, int id) const {
    const auto& e = entry(id);
    return {flat.data() + e.offset, e.rows, e.cols};
}

void DenoiserConfig::validate() const {
    if (m < 1 || n < 0 || joints < 2) throw ConfigError("denoiser: bad body counts");
    if (hidden < 1 || time_dim < 2 || time_dim % 2 || pos_freqs < 0) throw ConfigError("denoiser: bad widths");
    require_cutoff(frames, cutoff);
    if (steps < 1) throw ConfigError("denoiser: steps must be >= 1");
}

struct TrainableDenoiser::Cache {
    int B = 0;
    std::vector<const ConditionInputs*> cond;
    std::vector<double> sqrt_abar;
    Matrix S, At1, T1, C;
    struct Branch {
        bool active = false;
        Matrix X, Z, A1, H1, ctx, A2, H2;
        Vector pool;  // per stacked row
    } br[2];
};

TrainableDenoiser::TrainableDenoiser(const DenoiserConfig& cfg, std::uint64_t seed)
    : cfg_((cfg.validate(), cfg)),
      layout_(cfg.m, cfg.n, cfg.joints),
      dec_(cfg.frames, cfg.cutoff, cfg.mode),
      sched_(make_schedule(cfg.steps, cfg.beta_min, cfg.beta_max)),
      seed_(seed) {
    const Eigen::Index W = cfg_.state_width(), H = cfg_.hidden, P = 2 * cfg_.pos_freqs;
    embed_ = store_.add("embed", kLabelVocabulary, kLabelWidth);
    Lt1_ = store_.add("time.w1", cfg_.time_dim, H);
    bt1_ = store_.add("time.b1", 1, H);
    Lt2_ = store_.add("time.w2", H, 2 * H);
    bt2_ = store_.add("time.b2", 1, 2 * H);
    const char* names[2] = {"dc", "freq"};
    for (int b = 0; b < 2; ++b) {
        const std::string p = names[b];
        auto& ids = branch_[b];
        ids.W1 = store_.add(p + ".w1", W + P, H);
        ids.b1 = store_.add(p + ".b1", 1, H);
        ids.Wc = store_.add(p + ".wc", cfg_.cond_width(), H);
        ids.W2 = store_.add(p + ".w2", H, H);
        ids.V2 = store_.add(p + ".v2", H, H);
        ids.b2 = store_.add(p + ".b2", 1, H);
        ids.W3 = store_.add(p + ".w3", H, W);
        ids.b3 = store_.add(p + ".b3", 1, W);
        ids.Wg = store_.add(p + ".wg", H, W);
        ids.g = store_.add(p + ".g", 1, W);
    }
    params_ = Vector::Zero(store_.size());
    Rng rng(derive_seed(seed, {kStreamInit}));
    auto fill = [&](int id, double stdev) {
        auto v = store_.view(params_, id);
        v = rng.normal_matrix(v.rows(), v.cols()) * stdev;
    };
    fill(embed_, 0.1);
    fill(Lt1_, 1.0 / std::sqrt(double(cfg_.time_dim)));
    fill(Lt2_, 1.0 / std::sqrt(double(H)));
    for (auto& ids : branch_) {
        fill(ids.W1, std::sqrt(2.0 / double(W + P)));
        fill(ids.Wc, 1.0 / std::sqrt(double(cfg_.cond_width())));
        fill(ids.W2, std::sqrt(1.0 / double(H)));
        fill(ids.V2, std::sqrt(1.0 / double(H)));
        fill(ids.W3, 0.01 / std::sqrt(double(H)));
    }

    pos_.resize(cfg_.frames, P);
    for (int u = 0; u < cfg_.frames; ++u) {
        for (int k = 0; k < cfg_.pos_freqs; ++k) {
            const double th = 2.0 * std::numbers::pi * (k + 1) * u / cfg_.frames;
            pos_(u, 2 * k) = std::sin(th);
            pos_(u, 2 * k + 1) = std::cos(th);
        }
    }
}

Vector TrainableDenoiser::build_condition(const ConditionInputs& c) const {
    const int m = cfg_.m, n = cfg_.n;
    if (c.action < 0 || c.action >= kLabelVocabulary) throw ConfigError("condition: unknown action label id");
    if (static_cast<int>(c.labels.size()) != m) throw ConfigError("condition: need one label per rigid");
    require_shape(c.geometry.rows() == m && c.geometry.cols() == kGeometryWidth, "condition: geometry must be m x 128");
    require_shape(c.shape.rows() == n && (n == 0 || c.shape.cols() == kShapeParams), "condition: shape must be n x 10");
    const auto E = store_.view(params_, embed_);
    Vector out(cfg_.cond_width());
    out.segment(0, kLabelWidth) = E.row(c.action).transpose();
    for (int j = 0; j < m; ++j) {
        const int l = c.labels[static_cast<std::size_t>(j)];
        if (l < 0 || l >= kLabelVocabulary) throw ConfigError("condition: unknown object label id");
        out.segment(kLabelWidth * (1 + j), kLabelWidth) = E.row(l).transpose();
        out.segment(kLabelWidth * (1 + m + j), kGeometryWidth) = c.geometry.row(j).transpose();
    }
    for (int i = 0; i < n; ++i) {
        out.segment(kLabelWidth * (1 + 2 * m) + kShapeParams * i, kShapeParams) = c.shape.row(i).transpose();
    }
    return out;
}

Vector TrainableDenoiser::timestep_embed(int t) const {
    if (t < 1 || t > cfg_.steps) throw std::out_of_range("timestep_embed: t outside [1, T]");
    const Eigen::RowVectorXd s = sinusoidal_embedding(t, cfg_.time_dim).transpose();
    const Matrix a = s * store_.view(params_, Lt1_) + store_.view(params_, bt1_);
    return gelu(a).transpose();
}

std::vector<DenoiserOutput> TrainableDenoiser::forward(const std::vector<Matrix>& x_dc, const std::vector<Matrix>& x_F,
                                                       const std::vector<const ConditionInputs*>& cond,
                                                       const std::vector<int>& t, Cache* cache) const {
    const int B = static_cast<int>(x_dc.size());
    require_shape(cond.size() == x_dc.size() && t.size() == x_dc.size(), "denoiser: batch size mismatch");
    if (cfg_.decompose) require_shape(x_F.size() == x_dc.size(), "denoiser: missing frequency inputs");
    const Eigen::Index N = cfg_.frames, W = cfg_.state_width(), H = cfg_.hidden;

    Cache local;
    Cache& c = cache ? *cache : local;
    c.B = B;
    c.cond = cond;
    c.sqrt_abar.resize(static_cast<std::size_t>(B));
    c.S.resize(B, cfg_.time_dim);
    c.C.resize(B, cfg_.cond_width());
    for (int s = 0; s < B; ++s) {
        const int ts = t[static_cast<std::size_t>(s)];
        if (ts < 1 || ts > cfg_.steps) throw std::out_of_range("denoiser: t outside [1, T]");
        c.sqrt_abar[static_cast<std::size_t>(s)] = std::sqrt(sched_.alpha_bar(ts));
        c.S.row(s) = sinusoidal_embedding(ts, cfg_.time_dim).transpose();
        c.C.row(s) = build_condition(*cond[static_cast<std::size_t>(s)]).transpose();
        require_shape(cond[static_cast<std::size_t>(s)]->mask.size() == N, "denoiser: mask length mismatch");
    }
    c.At1 = c.S * store_.view(params_, Lt1_);
    c.At1.rowwise() += store_.view(params_, bt1_).row(0);
    c.T1 = gelu(c.At1);
    Matrix E = c.T1 * store_.view(params_, Lt2_);
    E.rowwise() += store_.view(params_, bt2_).row(0);

    std::vector<DenoiserOutput> out(static_cast<std::size_t>(B));
    const Eigen::Index packed = packed_rows(cfg_.cutoff);
    for (int b = 0; b < 2; ++b) {
        auto& br = c.br[b];
        br.active = b == 0 || cfg_.decompose;
        if (!br.active) continue;
        const auto& ids = branch_[b];
        br.X = stack(b == 0 ? x_dc : x_F, N, W);
        if (!br.X.allFinite()) throw NumericError("denoiser: non-finite input");
        br.Z.resize(B * N, W + pos_.cols());
        br.Z.leftCols(W) = br.X;
        br.Z.rightCols(pos_.cols()) = pos_.replicate(B, 1);

        Matrix bias = c.C * store_.view(params_, ids.Wc) + E.middleCols(b * H, H);
        bias.rowwise() += store_.view(params_, ids.b1).row(0);
        br.A1.noalias() = br.Z * store_.view(params_, ids.W1);
        for (int s = 0; s < B; ++s) br.A1.middleRows(s * N, N).rowwise() += bias.row(s);
        br.H1 = gelu(br.A1);

        br.pool = Vector::Zero(B * N);
        for (int s = 0; s < B; ++s) {
            if (b == 0) {
                const Vector& mk = cond[static_cast<std::size_t>(s)]->mask;
                const double tot = mk.sum();
                if (!(tot > 0.0)) throw ShapeError("denoiser: mask selects no frames");
                br.pool.segment(s * N, N) = mk / tot;
            } else {
                br.pool.segment(s * N, packed).setConstant(1.0 / double(packed));
            }
        }
        br.ctx.resize(B, H);
        for (int s = 0; s < B; ++s) br.ctx.row(s) = br.pool.segment(s * N, N).transpose() * br.H1.middleRows(s * N, N);

        br.A2.noalias() = br.H1 * store_.view(params_, ids.W2);
        Matrix cv = br.ctx * store_.view(params_, ids.V2);
        cv.rowwise() += store_.view(params_, ids.b2).row(0);
        for (int s = 0; s < B; ++s) br.A2.middleRows(s * N, N).rowwise() += cv.row(s);
        br.H2 = gelu(br.A2);

        Matrix Y = br.H2 * store_.view(params_, ids.W3);
        Y.rowwise() += store_.view(params_, ids.b3).row(0);
        Matrix gain = c.T1 * store_.view(params_, ids.Wg);
        gain.rowwise() += store_.view(params_, ids.g).row(0);
        for (int s = 0; s < B; ++s) {
            const Eigen::RowVectorXd gs = gain.row(s) * c.sqrt_abar[static_cast<std::size_t>(s)];
            auto ys = Y.middleRows(s * N, N);
            ys.array() += br.X.middleRows(s * N, N).array().rowwise() * gs.array();
            (b == 0 ? out[static_cast<std::size_t>(s)].dc : out[static_cast<std::size_t>(s)].F) = ys;
        }
    }
    return out;
}

void TrainableDenoiser::backward(const Cache& c, const std::vector<DenoiserOutput>& d_out, Vector& grad) const {
    require_shape(static_cast<int>(d_out.size()) == c.B, "backward: batch size mismatch");
    if (grad.size() != params_.size()) grad = Vector::Zero(params_.size());
    const int B = c.B;
    const Eigen::Index N = cfg_.frames, W = cfg_.state_width(), H = cfg_.hidden;

    Matrix dT1 = Matrix::Zero(B, H);
    Matrix dE = Matrix::Zero(B, 2 * H);
    Matrix dC = Matrix::Zero(B, cfg_.cond_width());
    for (int b = 0; b < 2; ++b) {
        const auto& br = c.br[b];
        if (!br.active) continue;
        const auto& ids = branch_[b];
        std::vector<Matrix> dys;
        for (const auto& d : d_out) dys.push_back(b == 0 ? d.dc : d.F);
        const Matrix dY = stack(dys, N, W);

        store_.view(grad, ids.W3).noalias() += br.H2.transpose() * dY;
        store_.view(grad, ids.b3) += dY.colwise().sum();
        Matrix dgain(B, W);
        for (int s = 0; s < B; ++s) {
            dgain.row(s) = c.sqrt_abar[static_cast<std::size_t>(s)] *
                           dY.middleRows(s * N, N).cwiseProduct(br.X.middleRows(s * N, N)).colwise().sum();
        }
        store_.view(grad, ids.g) += dgain.colwise().sum();
        store_.view(grad, ids.Wg).noalias() += c.T1.transpose() * dgain;
        dT1.noalias() += dgain * store_.view(params_, ids.Wg).transpose();

        Matrix dA2 = (dY * store_.view(params_, ids.W3).transpose()).cwiseProduct(gelu_grad(br.A2));
        store_.view(grad, ids.W2).noalias() += br.H1.transpose() * dA2;
        store_.view(grad, ids.b2) += dA2.colwise().sum();
        Matrix S2(B, H);
        for (int s = 0; s < B; ++s) S2.row(s) = dA2.middleRows(s * N, N).colwise().sum();
        store_.view(grad, ids.V2).noalias() += br.ctx.transpose() * S2;
        const Matrix dctx = S2 * store_.view(params_, ids.V2).transpose();

        Matrix dH1 = dA2 * store_.view(params_, ids.W2).transpose();
        for (int s = 0; s < B; ++s) dH1.middleRows(s * N, N).noalias() += br.pool.segment(s * N, N) * dctx.row(s);
        const Matrix dA1 = dH1.cwiseProduct(gelu_grad(br.A1));
        store_.view(grad, ids.W1).noalias() += br.Z.transpose() * dA1;
        store_.view(grad, ids.b1) += dA1.colwise().sum();
        Matrix dbias(B, H);
        for (int s = 0; s < B; ++s) dbias.row(s) = dA1.middleRows(s * N, N).colwise().sum();
        store_.view(grad, ids.Wc).noalias() += c.C.transpose() * dbias;
        dC.noalias() += dbias * store_.view(params_, ids.Wc).transpose();
        dE.middleCols(b * H, H) += dbias;
    }

    store_.view(grad, Lt2_).noalias() += c.T1.transpose() * dE;
    store_.view(grad, bt2_) += dE.colwise().sum();
    dT1.noalias() += dE * store_.view(params_, Lt2_).transpose();
    const Matrix dAt1 = dT1.cwiseProduct(gelu_grad(c.At1));
    store_.view(grad, Lt1_).noalias() += c.S.transpose() * dAt1;
    store_.view(grad, bt1_) += dAt1.colwise().sum();

    auto dEmb = store_.view(grad, embed_);
    for (int s = 0; s < B; ++s) {
        const auto& cd = *c.cond[static_cast<std::size_t>(s)];
        dEmb.row(cd.action) += dC.row(s).segment(0, kLabelWidth);
        for (int j = 0; j < cfg_.m; ++j) {
            dEmb.row(cd.labels[static_cast<std::size_t>(j)]) += dC.row(s).segment(kLabelWidth * (1 + j), kLabelWidth);
        }
    }
}

DenoiserOutput TrainableDenoiser::denoise(const Matrix& x_dc, const Matrix& x_F, const ConditionInputs& cond,
                                          int t) const {
    return forward({x_dc}, {x_F}, {&cond}, {t}).front();
}

void TrainableDenoiser::branch_inputs(const Matrix& x_t, const Vector& mask, Matrix& x_dc, Matrix& x_F) const {
    require_shape(x_t.rows() == cfg_.frames && x_t.cols() == cfg_.state_width(), "denoiser: x_t shape mismatch");
    require_shape(mask.size() == x_t.rows(), "denoiser: mask length mismatch");
    const Matrix xm = mask.asDiagonal() * x_t;
    if (cfg_.decompose) {
        x_dc = dec_.dc(xm);
        x_F = dec_.pack(xm);
    } else {
        x_dc = xm;
        x_F.resize(0, 0);
    }
}

void TrainableDenoiser::branch_targets(const Matrix& x0, Matrix& gt_dc, Matrix& gt_ac) const {
    if (cfg_.decompose) {
        gt_dc = dec_.dc(x0);
        gt_ac = dec_.ac(x0);
    } else {
        gt_dc = x0;
        gt_ac = Matrix::Zero(x0.rows(), x0.cols());
    }
}

std::vector<Matrix> TrainableDenoiser::predict_x0(const std::vector<Matrix>& x_t, int t,
                                                  const std::vector<const ConditionInputs*>& cond) const {
    require_shape(cond.size() == x_t.size(), "predict_x0: batch size mismatch");
    std::vector<Matrix> dc(x_t.size()), F(x_t.size());
    for (std::size_t s = 0; s < x_t.size(); ++s) branch_inputs(x_t[s], cond[s]->mask, dc[s], F[s]);
    const auto out = forward(dc, F, cond, std::vector<int>(x_t.size(), t));
    std::vector<Matrix> x0(x_t.size());
    for (std::size_t s = 0; s < x_t.size(); ++s) {
        x0[s] = cfg_.decompose ? Matrix(out[s].dc + dec_.unpack(out[s].F)) : out[s].dc;
    }
    return x0;
}

namespace {

json config_to_json(const DenoiserConfig& c) {
    return {{"m", c.m},           {"n", c.n},
            {"joints", c.joints}, {"frames", c.frames},
            {"cutoff", c.cutoff}, {"band_mode", to_string(c.mode)},
            {"decompose", c.decompose}, {"hidden", c.hidden},
            {"time_dim", c.time_dim}, {"pos_freqs", c.pos_freqs},
            {"steps", c.steps},   {"beta_min", c.beta_min},
            {"beta_max", c.beta_max}};
}

DenoiserConfig config_from_json(const json& j) {
    DenoiserConfig c;
    c.m = j.at("m");
    c.n = j.at("n");
    c.joints = j.at("joints");
    c.frames = j.at("frames");
    c.cutoff = j.at("cutoff");
    c.mode = band_mode_from_string(j.at("band_mode").get<std::string>());
    c.decompose = j.at("decompose");
    c.hidden = j.at("hidden");
    c.time_dim = j.at("time_dim");
    c.pos_freqs = j.at("pos_freqs");
    c.steps = j.at("steps");
    c.beta_min = j.at("beta_min");
    c.beta_max = j.at("beta_max");
    return c;
}

}  // namespace

void TrainableDenoiser::save(const std::string& path, const std::string& extra_json) const {
    json shapes = json::array();
    for (const auto& e : store_.entries()) shapes.push_back({{"name", e.name}, {"rows", e.rows}, {"cols", e.cols}});
    json h{{"kind", "checkpoint"}, {"config", config_to_json(cfg_)}, {"seed", seed_}, {"params", shapes},
           {"extra", json::parse(extra_json)}};
    Container c;
    c.header = h.dump();
    c.payload.assign(params_.data(), params_.data() + params_.size());
    write_container(path, kMagicCheckpoint, c);
}

TrainableDenoiser TrainableDenoiser::load(const std::string& path) {
    const Container c = read_container(path, kMagicCheckpoint);
    json h;
    try {
        h = json::parse(c.header);
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed checkpoint header: ") + e.what());
    }
    TrainableDenoiser net(config_from_json(h.at("config")), h.at("seed").get<std::uint64_t>());
    const auto& shapes = h.at("params");
    if (shapes.size() != net.store_.entries().size()) throw FormatError("checkpoint: parameter list mismatch");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto& e = net.store_.entries()[i];
        if (shapes[i].at("name") != e.name || shapes[i].at("rows") != e.rows || shapes[i].at("cols") != e.cols) {
            throw FormatError("checkpoint: parameter shape mismatch at " + e.name);
        }
    }
    if (c.payload.size() != static_cast<std::size_t>(net.params_.size())) throw FormatError("checkpoint: truncated payload");
    net.params_ = Eigen::Map<const Vector>(c.payload.data(), net.params_.size());
    return net;
}

void TrainConfig::validate() const {
    if (epochs < 0 || batch < 1) throw ConfigError("train: epochs must be >= 0 and batch >= 1");
    if (!(lr > 0.0) || !(momentum >= 0.0 && momentum < 1.0) || !(clip >= 0.0)) {
        throw ConfigError("train: need lr > 0, momentum in [0, 1), clip >= 0");
    }
    weights.validate();
}

TrainingSet make_training_set(const Dataset& ds, const GeometryEncoder& enc) {
    TrainingSet set;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& x = ds.states[i];
        if (i == 0) set.layout = x.layout;
        if (!(x.layout == set.layout)) throw ConfigError("training set: mixed state layouts");
        const auto& spec = ds.specs[i];
        const auto shapes = scene_shapes(spec);
        Matrix x0 = ds.masks[i].asDiagonal() * x.data;
        set.x0.push_back(std::move(x0));
        set.cond.push_back(make_condition(spec, shapes, enc, x.frames(), ds.masks[i]));
    }
    return set;
}

double TrainLog::mean() const {
    if (step_loss.empty()) return 0.0;
    double s = 0.0;
    for (double v : step_loss) s += v;
    return s / static_cast<double>(step_loss.size());
}

double training_objective(const TrainableDenoiser& net, const std::vector<TrainExample>& batch, const LossWeights& w,
                          Vector* grad) {
    const auto& cfg = net.config();
    const std::size_t B = batch.size();
    std::vector<Matrix> dc(B), F(B);
    std::vector<const ConditionInputs*> cond(B);
    std::vector<int> ts(B);
    double count = 0.0;
    for (std::size_t s = 0; s < B; ++s) {
        const auto& e = batch[s];
        const Matrix x_t = forward_noise(*e.x0, e.t, e.eps, net.schedule());
        net.branch_inputs(x_t, e.cond->mask, dc[s], F[s]);
        cond[s] = e.cond;
        ts[s] = e.t;
        count += e.cond->mask.sum() * double(cfg.state_width());
    }
    TrainableDenoiser::Cache cache;
    const auto out = net.forward(dc, F, cond, ts, grad ? &cache : nullptr);
    const double scale = 1.0 / count;
    double total = 0.0;
    std::vector<DenoiserOutput> d_out(B);
    for (std::size_t s = 0; s < B; ++s) {
        Matrix gt_dc, gt_ac;
        net.branch_targets(*batch[s].x0, gt_dc, gt_ac);
        const Matrix pred_ac = cfg.decompose ? net.decomposer().unpack(out[s].F) : Matrix::Zero(gt_ac.rows(), gt_ac.cols());
        LossGradient lg;
        const auto l = total_loss(out[s].dc, pred_ac, gt_dc, gt_ac, net.layout(), w, batch[s].cond->mask,
                                  grad ? &lg : nullptr);
        total += l.total;
        if (grad) {
            d_out[s].dc = lg.d_dc * scale;
            if (cfg.decompose) d_out[s].F = net.decomposer().unpack_adjoint(lg.d_ac) * scale;
        }
    }
    if (grad) {
        *grad = Vector::Zero(net.parameter_count());
        net.backward(cache, d_out, *grad);
    }
    return total * scale;
}

double train_step(TrainableDenoiser& net, Optimizer& opt, const std::vector<TrainExample>& batch, const TrainConfig& cfg) {
    Vector g;
    const double loss = training_objective(net, batch, cfg.weights, &g);
    if (!std::isfinite(loss) || !g.allFinite()) {
        throw NumericError("training: non-finite loss (" + std::to_string(loss) + ")");
    }
    if (cfg.clip > 0.0) {
        const double norm = g.norm();
        if (norm > cfg.clip) g *= cfg.clip / norm;
    }
    if (opt.velocity.size() != g.size()) opt.velocity = Vector::Zero(g.size());
    opt.velocity = cfg.momentum * opt.velocity - cfg.lr * g;
    net.params() += opt.velocity;
    return loss;
}

TrainLog train_epoch(TrainableDenoiser& net, Optimizer& opt, const TrainingSet& data, const TrainConfig& cfg,
                     std::uint64_t seed, int epoch) {
    cfg.validate();
    if (data.size() == 0) throw ConfigError("train: empty dataset");
    if (!(data.layout == net.layout())) throw ConfigError("train: dataset layout does not match the network");
    Rng rng(derive_seed(seed, {kStreamTrain, static_cast<std::uint64_t>(epoch)}));
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.next_u64() % i]);

    TrainLog log;
    const int T = net.config().steps;
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch)) {
        std::vector<TrainExample> batch;
        for (std::size_t k = at; k < std::min(order.size(), at + static_cast<std::size_t>(cfg.batch)); ++k) {
            const auto i = order[k];
            TrainExample e{&data.x0[i], &data.cond[i], 1 + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(T)),
                           Matrix()};
            e.eps = rng.normal_matrix(data.x0[i].rows(), data.x0[i].cols());
            batch.push_back(std::move(e));
        }
        log.step_loss.push_back(train_step(net, opt, batch, cfg));
    }
    return log;
}

}  // namespace mbsync
