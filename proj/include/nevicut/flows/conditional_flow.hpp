#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "nevicut/autodiff/engine.hpp"
#include "nevicut/flows/base.hpp"
#include "nevicut/flows/family.hpp"
#include "nevicut/flows/mlp.hpp"
#include "nevicut/flows/quadrature.hpp"
#include "nevicut/flows/spline.hpp"
#include "nevicut/flows/stick_breaking.hpp"

namespace nevicut::flows {

enum class FlowKind { rqnsf_ar, rqnsf_c, umnn };
enum class OutputHead { identity, stick_breaking };

inline FlowKind parse_flow_kind(const std::string& s) {
    if (s == "rqnsf-ar") return FlowKind::rqnsf_ar;
    if (s == "rqnsf-c") return FlowKind::rqnsf_c;
    if (s == "umnn") return FlowKind::umnn;
    throw InvalidArgument("unknown flow kind '" + s + "'");
}

inline std::string to_string(FlowKind k) {
    switch (k) {
        case FlowKind::rqnsf_ar: return "rqnsf-ar";
        case FlowKind::rqnsf_c: return "rqnsf-c";
        case FlowKind::umnn: return "umnn";
    }
    return "?";
}

inline OutputHead parse_output_head(const std::string& s) {
    if (s == "identity") return OutputHead::identity;
    if (s == "stick-breaking") return OutputHead::stick_breaking;
    throw InvalidArgument("unknown output head '" + s + "'");
}

inline std::string to_string(OutputHead h) { return h == OutputHead::identity ? "identity" : "stick-breaking"; }

/// Linear envelope constants: |a| <= M*, |g(eta, t)| <= A* + B* |t|.
struct Envelope {
    double m_star = 10.0;
    double a_star = 5.0;
    double b_star = 1.0;
};

struct FlowConfig {
    FlowKind kind = FlowKind::rqnsf_ar;
    std::size_t layers = 4;
    std::size_t bins = 8;
    double half_width = 6.0;
    std::vector<std::size_t> hidden{64, 64};
    Activation activation = Activation::leaky_relu;
    BaseDist base;
    std::size_t dim = 1;      // raw flow dimension (C-1 for a simplex head)
    std::size_t eta_dim = 1;
    OutputHead head = OutputHead::identity;
    bool affine_head = true;  // final conditional lower-triangular affine map
    std::optional<Envelope> envelope;
    std::size_t umnn_median_layers = 5;
    std::size_t umnn_deriv_layers = 7;
    std::size_t umnn_width = 32;
    std::size_t quadrature = 32;

    std::size_t output_dim() const { return head == OutputHead::stick_breaking ? dim + 1 : dim; }

    SplineShape spline() const {
        SplineShape s;
        s.bins = bins;
        s.half_width = half_width;
        return s;
    }

    void validate() const {
        if (dim < 1) throw InvalidArgument("flow: dimension must be at least 1");
        if (eta_dim < 1) throw InvalidArgument("flow: eta dimension must be at least 1");
        if (layers < 1) throw InvalidArgument("flow: need at least one layer");
        if (kind != FlowKind::umnn) spline().validate();
        if (kind == FlowKind::umnn && quadrature < 4) throw InvalidArgument("flow: quadrature order must be >= 4");
        if (kind == FlowKind::umnn && umnn_width < 1) throw InvalidArgument("flow: UMNN width must be positive");
        base.validate();
        if (envelope) {
            if (kind != FlowKind::umnn) throw InvalidArgument("flow: envelope clipping applies to UMNN flows only");
            if (affine_head) throw InvalidArgument("flow: envelope clipping requires affine_head = false");
            if (!(envelope->m_star > 0.0) || !(envelope->a_star > 0.0) || envelope->b_star < 0.0) {
                throw InvalidArgument("flow: envelope constants must be positive");
            }
        }
    }
};

struct FlowValues {
    ad::Tensor theta;
    ad::Tensor logdet;
};

struct InverseValues {
    ad::Tensor z;       // N x dim
    ad::Tensor logdet;  // forward log|det J| at z, N x 1
    std::vector<char> ok;  // 0 where theta lies outside the image of T
};

/// T(eta, z): a stack of monotone layers, each followed by a coordinate
/// reversal, an optional conditional affine head and an optional simplex head.
class ConditionalFlow : public VariationalFamily {
public:
    ConditionalFlow() = default;

    ConditionalFlow(FlowConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
        cfg_.validate();
        eta_shift_.assign(cfg_.eta_dim, 0.0);
        eta_scale_.assign(cfg_.eta_dim, 1.0);
        std::mt19937_64 rng(seed);
        init_params(rng);
        gl_ = gauss_legendre(cfg_.quadrature);
    }

    const FlowConfig& config() const { return cfg_; }
    ad::ParamStore& params() override { return params_; }
    const ad::ParamStore& params() const override { return params_; }
    std::size_t base_dim() const override { return cfg_.dim; }
    std::size_t eta_dim() const override { return cfg_.eta_dim; }
    std::size_t output_dim() const override { return cfg_.output_dim(); }
    const BaseDist& base() const override { return cfg_.base; }
    std::vector<std::string> warm_start_params() const override { return head_param_names(); }
    const std::vector<double>& eta_shift() const { return eta_shift_; }
    const std::vector<double>& eta_scale() const { return eta_scale_; }

    /// Fixed affine standardization of eta fed to every conditioner.
    void set_eta_standardization(std::vector<double> shift, std::vector<double> scale) {
        if (shift.size() != cfg_.eta_dim || scale.size() != cfg_.eta_dim) {
            throw InvalidArgument("flow: standardization length mismatch");
        }
        for (double s : scale)
            if (!(s > 0.0) || !std::isfinite(s)) throw InvalidArgument("flow: standardization scale must be positive");
        eta_shift_ = std::move(shift);
        eta_scale_ = std::move(scale);
    }

    /// Column mean / sd of an N x d_eta matrix (sd floored at 1e-8).
    void standardize_from(const ad::Tensor& eta) {
        std::vector<double> m(eta.cols(), 0.0), s(eta.cols(), 0.0);
        const double n = static_cast<double>(eta.rows());
        for (std::size_t i = 0; i < eta.rows(); ++i)
            for (std::size_t j = 0; j < eta.cols(); ++j) m[j] += eta(i, j) / n;
        for (std::size_t i = 0; i < eta.rows(); ++i)
            for (std::size_t j = 0; j < eta.cols(); ++j) s[j] += (eta(i, j) - m[j]) * (eta(i, j) - m[j]) / n;
        for (double& v : s) v = std::max(std::sqrt(v), 1e-8);
        set_eta_standardization(std::move(m), std::move(s));
    }

    /// Names of the affine-head parameters (empty when the head is off).
    std::vector<std::string> head_param_names() const {
        if (!cfg_.affine_head) return {};
        return {"head.loc", "head.W", "head.off", "head.logscale"};
    }

    /// Differentiable forward pass. eta: N x d_eta, z: N x dim.
    FlowVars forward(const ad::VarMap& p, ad::Var eta, ad::Var z) const override {
        check_dims(eta.value(), z.value().cols(), cfg_.dim, "forward");
        ad::Tape& t = *z.tape;
        ad::Var e = standardize(t, eta);
        ad::Var x = z;
        std::optional<ad::Var> ld;
        auto acc = [&](ad::Var v) { ld = ld ? ad::add(*ld, v) : v; };
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            try {
                auto [y, lj] = layer_forward(p, l, e, x);
                acc(lj);
                x = cfg_.dim > 1 ? ad::reverse_cols(y) : y;
            } catch (const ad::NonFiniteError& err) {
                throw FlowError(l, err.what());
            }
        }
        if (cfg_.affine_head) {
            auto [y, lj] = head_forward(p, e, x);
            x = y;
            acc(lj);
        }
        if (cfg_.head == OutputHead::stick_breaking) {
            ad::Var sb = stick_breaking(x);
            x = ad::slice_cols(sb, 0, cfg_.dim + 1);
            acc(ad::slice_cols(sb, cfg_.dim + 1, cfg_.dim + 2));
        }
        return {x, *ld};
    }

    /// Value-only forward pass.
    FlowValues evaluate(const ad::Tensor& eta, const ad::Tensor& z) const {
        ad::Tape t(false);
        ad::VarMap p = params_.bind(t);
        FlowVars v = forward(p, t.constant(eta), t.constant(z));
        return {v.theta.value(), v.logdet.value()};
    }

    /// Recovers z with T(eta, z) = theta and reports the forward log|det J|.
    InverseValues inverse(const ad::Tensor& eta, const ad::Tensor& theta) const {
        check_dims(eta, theta.cols(), cfg_.output_dim(), "inverse");
        const std::size_t n = eta.rows();
        ad::Tensor x(n, cfg_.dim);
        ad::Tensor ld(n, 1, 0.0);
        if (cfg_.head == OutputHead::stick_breaking) {
            for (std::size_t i = 0; i < n; ++i) {
                SimplexResult r = stick_breaking_inverse(theta.row_span(i));
                for (std::size_t j = 0; j < cfg_.dim; ++j) x(i, j) = r.p[j];
                ld[i] += r.logdet;
            }
        } else {
            x = theta;
        }
        ad::Tape t(false);
        ad::VarMap p = params_.bind(t);
        ad::Var e = standardize(t, t.constant(eta));
        if (cfg_.affine_head) head_inverse(e.value(), x, ld);
        std::vector<char> ok(n, 1);
        for (std::size_t l = cfg_.layers; l-- > 0;) {
            if (cfg_.dim > 1) x = reversed(x);
            layer_inverse(t, p, l, e, x, ld, ok);
        }
        return {std::move(x), std::move(ld), std::move(ok)};
    }

    /// log q(theta | eta) for each row via inversion and change of variables.
    std::vector<double> log_density(const ad::Tensor& eta, const ad::Tensor& theta) const {
        InverseValues inv = inverse(eta, theta);
        std::vector<double> out(eta.rows());
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] = inv.ok[i] ? base_logpdf(inv.z.row_span(i), cfg_.base) - inv.logdet[i]
                               : -std::numeric_limits<double>::infinity();
        }
        return out;
    }

private:
    static ad::Tensor reversed(const ad::Tensor& x) {
        ad::Tensor y(x.rows(), x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) y(i, j) = x(i, x.cols() - 1 - j);
        return y;
    }

    void check_dims(const ad::Tensor& eta, std::size_t cols, std::size_t want, const char* where) const {
        if (eta.cols() != cfg_.eta_dim || cols != want) {
            throw InvalidArgument(std::string("flow ") + where + ": expected eta width " +
                                  std::to_string(cfg_.eta_dim) + " and width " + std::to_string(want) + ", got " +
                                  std::to_string(eta.cols()) + " and " + std::to_string(cols));
        }
    }

    ad::Var standardize(ad::Tape& t, ad::Var eta) const {
        ad::Tensor shift(1, cfg_.eta_dim), inv(1, cfg_.eta_dim);
        for (std::size_t j = 0; j < cfg_.eta_dim; ++j) {
            shift(0, j) = -eta_shift_[j];
            inv(0, j) = 1.0 / eta_scale_[j];
        }
        ad::Tensor invs(eta.rows(), cfg_.eta_dim);
        for (std::size_t i = 0; i < eta.rows(); ++i)
            for (std::size_t j = 0; j < cfg_.eta_dim; ++j) invs(i, j) = inv(0, j);
        return ad::mul_const(ad::add_row(eta, t.constant(shift)), invs);
    }

    MlpSpec spline_conditioner(std::size_t in, std::size_t out) const {
        return MlpSpec{in, cfg_.hidden, out, cfg_.activation};
    }

    MlpSpec umnn_net(std::size_t in, std::size_t depth) const {
        return MlpSpec{in, std::vector<std::size_t>(depth, cfg_.umnn_width), 1, Activation::leaky_relu};
    }

    static std::string lname(std::size_t l, const char* part, std::size_t i) {
        return "l" + std::to_string(l) + "." + part + std::to_string(i);
    }

    std::size_t pass_dim() const { return cfg_.dim / 2; }

    void init_params(std::mt19937_64& rng) {
        const std::size_t d = cfg_.dim, de = cfg_.eta_dim;
        const std::size_t r = cfg_.spline().raw_size();
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            switch (cfg_.kind) {
                case FlowKind::rqnsf_ar:
                    for (std::size_t i = 0; i < d; ++i) init_mlp(params_, lname(l, "ar", i), spline_conditioner(i + de, r), rng);
                    break;
                case FlowKind::rqnsf_c:
                    init_mlp(params_, lname(l, "cp", 0), spline_conditioner(pass_dim() + de, (d - pass_dim()) * r), rng);
                    break;
                case FlowKind::umnn:
                    for (std::size_t i = 0; i < d; ++i) {
                        init_mlp(params_, lname(l, "a", i), umnn_net(i + de, cfg_.umnn_median_layers), rng);
                        init_mlp(params_, lname(l, "g", i), umnn_net(i + de + 1, cfg_.umnn_deriv_layers), rng);
                    }
                    break;
            }
        }
        if (cfg_.affine_head) {
            params_.add("head.loc", ad::Tensor(1, d, 0.0));
            params_.add("head.W", ad::Tensor(de, d, 0.0));
            params_.add("head.off", ad::Tensor(d, d, 0.0));
            params_.add("head.logscale", ad::Tensor(1, d, 0.0));
        }
    }

    ad::Var conditioner_input(ad::Var x, std::size_t upto, ad::Var e) const {
        if (upto == 0) return e;
        return ad::concat_cols({ad::slice_cols(x, 0, upto), e});
    }

    std::pair<ad::Var, ad::Var> spline_coord(ad::Var xi, ad::Var raw) const {
        ad::Var r = rqs_transform(xi, raw, cfg_.spline());
        return {ad::slice_cols(r, 0, 1), ad::slice_cols(r, 1, 2)};
    }

    std::pair<ad::Var, ad::Var> layer_forward(const ad::VarMap& p, std::size_t l, ad::Var e, ad::Var x) const {
        const std::size_t d = cfg_.dim;
        std::vector<ad::Var> ys;
        std::optional<ad::Var> ld;
        auto acc = [&](ad::Var v) { ld = ld ? ad::add(*ld, v) : v; };
        switch (cfg_.kind) {
            case FlowKind::rqnsf_ar:
                for (std::size_t i = 0; i < d; ++i) {
                    ad::Var raw = mlp_forward(p, lname(l, "ar", i), spline_conditioner(i + cfg_.eta_dim, 0),
                                              conditioner_input(x, i, e));
                    auto [y, lj] = spline_coord(ad::slice_cols(x, i, i + 1), raw);
                    ys.push_back(y);
                    acc(lj);
                }
                break;
            case FlowKind::rqnsf_c: {
                const std::size_t pd = pass_dim();
                const std::size_t r = cfg_.spline().raw_size();
                ad::Var raw = mlp_forward(p, lname(l, "cp", 0), spline_conditioner(pd + cfg_.eta_dim, 0),
                                          conditioner_input(x, pd, e));
                if (pd > 0) ys.push_back(ad::slice_cols(x, 0, pd));
                for (std::size_t i = pd; i < d; ++i) {
                    auto [y, lj] = spline_coord(ad::slice_cols(x, i, i + 1),
                                                ad::slice_cols(raw, (i - pd) * r, (i - pd + 1) * r));
                    ys.push_back(y);
                    acc(lj);
                }
                break;
            }
            case FlowKind::umnn:
                for (std::size_t i = 0; i < d; ++i) {
                    auto [y, lj] = umnn_coord(p, l, i, conditioner_input(x, i, e), ad::slice_cols(x, i, i + 1));
                    ys.push_back(y);
                    acc(lj);
                }
                break;
        }
        ad::Var y = ys.size() == 1 ? ys.front() : ad::concat_cols(ys);
        return {y, *ld};
    }

    ad::Var umnn_g(const ad::VarMap& p, std::size_t l, std::size_t i, ad::Var cond, ad::Var t) const {
        ad::Var g = mlp_forward(p, lname(l, "g", i), umnn_net(cond.cols() + 1, cfg_.umnn_deriv_layers),
                                ad::concat_cols({cond, t}));
        if (cfg_.envelope) {
            ad::Var hi = ad::add_scalar(ad::scale(ad::abs(t), cfg_.envelope->b_star), cfg_.envelope->a_star);
            g = ad::clip(g, ad::neg(hi), hi);
        }
        return g;
    }

    /// theta_i = a(cond) + (z/2) sum_q w_q exp(g(cond, z (1 + u_q) / 2)); logdet = g(cond, z).
    std::pair<ad::Var, ad::Var> umnn_coord(const ad::VarMap& p, std::size_t l, std::size_t i, ad::Var cond,
                                           ad::Var xi) const {
        const std::size_t n = xi.rows(), q = cfg_.quadrature;
        ad::Var a = mlp_forward(p, lname(l, "a", i), umnn_net(cond.cols(), cfg_.umnn_median_layers), cond);
        if (cfg_.envelope) a = ad::clip(a, -cfg_.envelope->m_star, cfg_.envelope->m_star);
        ad::Tensor frac(n * q, 1), w(n * q, 1);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t k = 0; k < q; ++k) {
                frac[r * q + k] = 0.5 * (1.0 + gl_.nodes[k]);
                w[r * q + k] = gl_.weights[k];
            }
        ad::Var tq = ad::mul_const(ad::repeat_rows(xi, q), frac);
        ad::Var gq = umnn_g(p, l, i, ad::repeat_rows(cond, q), tq);
        ad::Var s = ad::group_sum_rows(ad::mul_const(ad::exp(gq), w), q);
        ad::Var y = ad::add(a, ad::mul(ad::scale(xi, 0.5), s));
        return {y, umnn_g(p, l, i, cond, xi)};
    }

    std::pair<ad::Var, ad::Var> head_forward(const ad::VarMap& p, ad::Var e, ad::Var x) const {
        const std::size_t d = cfg_.dim;
        ad::Tensor mask(d, d, 0.0);
        for (std::size_t r = 0; r < d; ++r)
            for (std::size_t c = 0; c < r; ++c) mask(r, c) = 1.0;
        ad::Var ls = p.at("head.logscale");
        ad::Var lower = ad::add(ad::mul_const(p.at("head.off"), mask), ad::diag(ad::exp(ls)));
        ad::Var y = ad::add(ad::matmul(x, ad::transpose(lower)), ad::matmul(e, p.at("head.W")));
        y = ad::add_row(y, p.at("head.loc"));
        ad::Var ld = ad::add_row(x.tape->constant(ad::Tensor(x.rows(), 1, 0.0)), ad::sum(ls));
        return {y, ld};
    }

    void head_inverse(const ad::Tensor& e, ad::Tensor& x, ad::Tensor& ld) const {
        const std::size_t d = cfg_.dim;
        const ad::Tensor& loc = params_.get("head.loc");
        const ad::Tensor& w = params_.get("head.W");
        const ad::Tensor& off = params_.get("head.off");
        const ad::Tensor& ls = params_.get("head.logscale");
        double lsum = 0.0;
        for (std::size_t j = 0; j < d; ++j) lsum += ls(0, j);
        std::vector<double> r(d);
        for (std::size_t i = 0; i < x.rows(); ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                double v = x(i, j) - loc(0, j);
                for (std::size_t k = 0; k < e.cols(); ++k) v -= e(i, k) * w(k, j);
                r[j] = v;
            }
            for (std::size_t j = 0; j < d; ++j) {
                double v = r[j];
                for (std::size_t k = 0; k < j; ++k) v -= off(j, k) * x(i, k);
                x(i, j) = v / std::exp(ls(0, j));
            }
            ld[i] += lsum;
        }
    }

    static ad::Tensor column_of(const ad::Tensor& x, std::size_t j) {
        ad::Tensor c(x.rows(), 1);
        for (std::size_t i = 0; i < x.rows(); ++i) c[i] = x(i, j);
        return c;
    }

    void layer_inverse(ad::Tape& t, const ad::VarMap& p, std::size_t l, ad::Var e, ad::Tensor& x, ad::Tensor& ld,
                       std::vector<char>& ok) const {
        const std::size_t d = cfg_.dim, n = x.rows();
        const SplineShape shape = cfg_.spline();
        const std::size_t r = shape.raw_size();
        auto invert_spline = [&](std::size_t i, const ad::Tensor& raw, std::size_t off) {
            for (std::size_t row = 0; row < n; ++row) {
                ActivatedSpline sp = activate_spline(raw.row_span(row).subspan(off, r), shape);
                SplineResult s = rqs_inverse(x(row, i), sp);
                x(row, i) = s.value;
                ld[row] -= s.log_deriv;
            }
        };
        try {
            switch (cfg_.kind) {
                case FlowKind::rqnsf_ar:
                    for (std::size_t i = 0; i < d; ++i) {
                        ad::Var cond = conditioner_input(t.constant(x), i, e);
                        ad::Var raw = mlp_forward(p, lname(l, "ar", i), spline_conditioner(i + cfg_.eta_dim, 0), cond);
                        invert_spline(i, raw.value(), 0);
                    }
                    break;
                case FlowKind::rqnsf_c: {
                    const std::size_t pd = pass_dim();
                    ad::Var cond = conditioner_input(t.constant(x), pd, e);
                    ad::Var raw = mlp_forward(p, lname(l, "cp", 0), spline_conditioner(pd + cfg_.eta_dim, 0), cond);
                    for (std::size_t i = pd; i < d; ++i) invert_spline(i, raw.value(), (i - pd) * r);
                    break;
                }
                case FlowKind::umnn:
                    for (std::size_t i = 0; i < d; ++i) umnn_invert(t, p, l, i, e, x, ld, ok);
                    break;
            }
        } catch (const ad::NonFiniteError& err) {
            throw FlowError(l, err.what());
        }
    }

    /// Safeguarded Newton on the monotone map z -> T(z): a bracket is kept
    /// per row and a bisection step replaces any Newton step leaving it.
    void umnn_invert(ad::Tape& t, const ad::VarMap& p, std::size_t l, std::size_t i, ad::Var e, ad::Tensor& x,
                     ad::Tensor& ld, std::vector<char>& ok) const {
        const std::size_t n = x.rows();
        const ad::Tensor target = column_of(x, i);
        const double inf = std::numeric_limits<double>::infinity();
        std::vector<double> lo(n, -inf), hi(n, inf);
        ad::Tensor z(n, 1, 0.0);
        std::vector<std::size_t> active(n);
        for (std::size_t r = 0; r < n; ++r) active[r] = r;
        // Values at z for the listed rows; the tape is unwound afterwards.
        auto eval_rows = [&](const std::vector<std::size_t>& rows, ad::Tensor& yv, ad::Tensor& gv) {
            const std::size_t mark = t.size();
            const std::size_t m = rows.size();
            ad::Tensor xs(m, x.cols()), es(m, e.value().cols()), zs(m, 1);
            for (std::size_t k = 0; k < m; ++k) {
                const std::size_t r = rows[k];
                for (std::size_t j = 0; j < x.cols(); ++j) xs(k, j) = x(r, j);
                for (std::size_t j = 0; j < es.cols(); ++j) es(k, j) = e.value()(r, j);
                zs[k] = z[r];
            }
            try {
                ad::Var cond = conditioner_input(t.constant(xs), i, t.constant(es));
                auto [y, g] = umnn_coord(p, l, i, cond, t.constant(zs));
                yv = y.value();
                gv = g.value();
            } catch (...) {
                t.truncate(mark);
                throw;
            }
            t.truncate(mark);
        };
        for (int it = 0; it < 300 && !active.empty(); ++it) {
            const std::size_t m = active.size();
            ad::Tensor yv, gv;
            std::vector<char> overflow(m, 0);
            try {
                eval_rows(active, yv, gv);
            } catch (const ad::NonFiniteError&) {
                // Some probe overshot far enough for exp(g) to overflow; find
                // the offending rows by splitting the batch.
                yv = ad::Tensor(m, 1);
                gv = ad::Tensor(m, 1);
                std::function<void(std::size_t, std::size_t)> split = [&](std::size_t a, std::size_t b) {
                    std::vector<std::size_t> rows(active.begin() + a, active.begin() + b);
                    ad::Tensor ys, gs;
                    try {
                        eval_rows(rows, ys, gs);
                    } catch (const ad::NonFiniteError&) {
                        if (b - a == 1) {
                            overflow[a] = 1;
                        } else {
                            split(a, a + (b - a) / 2);
                            split(a + (b - a) / 2, b);
                        }
                        return;
                    }
                    for (std::size_t k = a; k < b; ++k) {
                        yv[k] = ys[k - a];
                        gv[k] = gs[k - a];
                    }
                };
                split(0, m / 2);
                split(m / 2, m);
            }
            std::vector<std::size_t> next;
            for (std::size_t k = 0; k < m; ++k) {
                const std::size_t r = active[k];
                double cand;
                if (overflow[k]) {
                    // T is increasing, so an overflow means z is past the root.
                    if (z[r] > 0.0) hi[r] = std::min(hi[r], z[r]);
                    else lo[r] = std::max(lo[r], z[r]);
                    cand = std::nan("");
                } else {
                    const double f = yv[k] - target[r];
                    if (std::fabs(f) <= 1e-13 * std::max(1.0, std::fabs(target[r]))) continue;
                    if (f > 0.0) hi[r] = std::min(hi[r], z[r]);
                    else lo[r] = std::max(lo[r], z[r]);
                    cand = z[r] - f / std::exp(gv[k]);
                }
                if (!(cand > lo[r] && cand < hi[r])) {
                    if (std::isfinite(lo[r]) && std::isfinite(hi[r])) cand = 0.5 * (lo[r] + hi[r]);
                    else if (std::isfinite(lo[r])) cand = lo[r] + 2.0 * std::max(1.0, std::fabs(lo[r]));
                    else cand = hi[r] - 2.0 * std::max(1.0, std::fabs(hi[r]));
                }
                if (std::fabs(cand) > 1e8) {
                    // T saturates before reaching the target: outside the image.
                    ok[r] = 0;
                    z[r] = 0.0;
                    continue;
                }
                const double tol = 1e-14 * std::max(1.0, std::fabs(z[r]));
                const bool converged =
                    std::fabs(cand - z[r]) <= tol || (std::isfinite(lo[r]) && std::isfinite(hi[r]) && hi[r] - lo[r] <= tol);
                z[r] = cand;
                if (!converged) next.push_back(r);
            }
            active = std::move(next);
        }
        ad::Var cond = conditioner_input(t.constant(x), i, e);
        // Final evaluation so that the log-derivative matches the returned z.
        ad::Var g = umnn_g(p, l, i, cond, t.constant(z));
        for (std::size_t r = 0; r < n; ++r) {
            x(r, i) = z[r];
            ld[r] += g.value()[r];
        }
    }

    FlowConfig cfg_;
    ad::ParamStore params_;
    std::vector<double> eta_shift_, eta_scale_;
    GaussLegendre gl_;
};

}  // namespace nevicut::flows
