#pragma once

// Joint fitting of item and ability parameters, the empirical ability prior,
// and MAP calibration of unseen models.
//
// Fitting minimizes the negative regularized log-likelihood by cycling three
// coordinate blocks -- abilities, then difficulties+discriminations, then
// loadings -- each solved with a short L-BFGS run. The blocks separate per
// model / per item given the frozen complement, so updates walk the sorted id
// order and the whole procedure is deterministic for a fixed seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "irtkit/error.hpp"
#include "irtkit/lbfgs.hpp"
#include "irtkit/model.hpp"
#include "irtkit/records.hpp"
#include "irtkit/rng.hpp"
#include "irtkit/trust_region.hpp"

namespace irtkit {

struct FitOptions {
    int max_outer_steps = 1000;   // L-BFGS iteration cap for the joint solve
    double rel_tol = 1e-9;        // relative objective improvement cutoff
    double alpha_min = 0.05;
    double alpha_max = 20.0;
    bool alpha_fixed = false;     // pin alpha at 1 (1PL)
};

struct FitMetadata {
    std::uint64_t seed = 0;
    int outer_iterations = 0;
    double final_objective = 0.0;
    std::vector<double> objective_history;
};

struct FittedModel {
    int k = 0;
    LossConfig cfg;
    FitOptions options;
    std::map<std::string, ItemParams> item_params;        // non-degenerate items
    std::map<std::string, AbilityVector> abilities;       // training models
    std::map<std::string, int> degenerate_items;          // item -> majority outcome
    FitMetadata meta;

    bool has_item(const std::string& item_id) const { return item_params.count(item_id) > 0; }
    bool is_degenerate(const std::string& item_id) const {
        return degenerate_items.count(item_id) > 0;
    }

    // Response probability for one item; degenerate items predict their
    // stored majority outcome.
    double predict(const AbilityVector& ability, const std::string& item_id) const {
        auto deg = degenerate_items.find(item_id);
        if (deg != degenerate_items.end()) return static_cast<double>(deg->second);
        auto it = item_params.find(item_id);
        if (it == item_params.end())
            fail("missing-data", "no fitted parameters for item '" + item_id + "'");
        return predict_prob(ability, it->second);
    }
};

// Splits the training items into non-degenerate (kept) and constant-response
// items with their majority outcome.
template <typename ModelSet>
std::pair<std::set<std::string>, std::map<std::string, int>> filter_degenerate(
    const RecordStore& store, const ModelSet& train_models) {
    std::set<std::string> kept;
    std::map<std::string, int> degenerate;
    for (const auto& item : store.items()) {
        bool saw_zero = false, saw_one = false, saw_any = false;
        for (std::size_t idx : store.by_item(item)) {
            const Record& r = store.record(idx);
            if (train_models.count(r.model_id) == 0) continue;
            saw_any = true;
            (r.correct == 1 ? saw_one : saw_zero) = true;
            if (saw_zero && saw_one) break;
        }
        if (!saw_any) continue;  // unanswered by train models: neither kept nor degenerate
        if (saw_zero && saw_one)
            kept.insert(item);
        else
            degenerate[item] = saw_one ? 1 : 0;
    }
    return {std::move(kept), std::move(degenerate)};
}

namespace detail {

// Contiguous index view over the training records for the fitting loops.
struct FitData {
    std::vector<std::string> model_ids;  // sorted
    std::vector<std::string> item_ids;   // sorted, non-degenerate
    // per model: [begin, end) into item_of / resp_of
    std::vector<std::size_t> model_offsets;
    std::vector<int> model_item;   // item index per record, grouped by model
    std::vector<int> model_resp;
    // per item: [begin, end) into item_resp
    std::vector<std::size_t> item_offsets;
    std::vector<int> item_resp;
    std::size_t n_records = 0;
};

template <typename ModelSet>
FitData build_fit_data(const RecordStore& store, const ModelSet& train_models,
                       const std::set<std::string>& kept_items) {
    FitData data;
    for (const auto& m : store.models())
        if (train_models.count(m) > 0) data.model_ids.push_back(m);
    data.item_ids.assign(kept_items.begin(), kept_items.end());

    std::map<std::string, int> model_index, item_index;
    for (std::size_t i = 0; i < data.model_ids.size(); ++i) model_index[data.model_ids[i]] = static_cast<int>(i);
    for (std::size_t i = 0; i < data.item_ids.size(); ++i) item_index[data.item_ids[i]] = static_cast<int>(i);

    data.model_offsets.assign(data.model_ids.size() + 1, 0);
    data.item_offsets.assign(data.item_ids.size() + 1, 0);

    // First pass: counts.
    std::vector<std::pair<int, int>> pairs;  // (model_idx, item_idx)
    std::vector<int> responses;
    for (const Record& r : store.records()) {
        auto mi = model_index.find(r.model_id);
        auto xi = item_index.find(r.item_id);
        if (mi == model_index.end() || xi == item_index.end()) continue;
        pairs.emplace_back(mi->second, xi->second);
        responses.push_back(r.correct);
        ++data.model_offsets[mi->second + 1];
        ++data.item_offsets[xi->second + 1];
    }
    data.n_records = pairs.size();
    for (std::size_t i = 1; i < data.model_offsets.size(); ++i)
        data.model_offsets[i] += data.model_offsets[i - 1];
    for (std::size_t i = 1; i < data.item_offsets.size(); ++i)
        data.item_offsets[i] += data.item_offsets[i - 1];

    data.model_item.resize(data.n_records);
    data.model_resp.resize(data.n_records);
    data.item_resp.resize(data.n_records);
    std::vector<std::size_t> mpos(data.model_offsets.begin(), data.model_offsets.end() - 1);
    std::vector<std::size_t> xpos(data.item_offsets.begin(), data.item_offsets.end() - 1);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto [m, x] = pairs[i];
        data.model_item[mpos[m]] = x;
        data.model_resp[mpos[m]] = responses[i];
        ++mpos[m];
        data.item_resp[xpos[x]] = responses[i];
        ++xpos[x];
    }
    return data;
}

// Flat parameter state during fitting. Theta holds the general factor in
// column 0 and the K specific factors after it; loadings are per item rows.
struct FitState {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> theta;
    Eigen::VectorXd delta;
    Eigen::VectorXd alpha;
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> loadings;
};

inline double clipped_log(double p, double eps) {
    if (p < eps) p = eps;
    if (p > 1.0 - eps) p = 1.0 - eps;
    return std::log(p);
}

// -loglik(r, z) with clipping.
inline double nll_term(int r, double z, double eps) {
    const double p = sigmoid(z);
    return r == 1 ? -clipped_log(p, eps) : -clipped_log(1.0 - p, eps);
}

}  // namespace detail

// Jointly fits item parameters and abilities on the training models.
template <typename ModelSet>
FittedModel fit_joint(const RecordStore& store, const ModelSet& train_models, int k,
                      const LossConfig& cfg, std::uint64_t seed, const FitOptions& options = {}) {
    cfg.validate();
    if (k < 0) fail("config", "K must be non-negative");

    std::size_t present = 0;
    for (const auto& m : store.models()) present += train_models.count(m) > 0;
    if (present < 2)
        fail("insufficient-data", "joint fit requires at least 2 training models, got " +
                                      std::to_string(present));

    auto [kept, degenerate] = filter_degenerate(store, train_models);
    if (kept.empty())
        fail("empty-fit", "no non-degenerate training items to fit");

    detail::FitData data = detail::build_fit_data(store, train_models, kept);
    const std::size_t n_models = data.model_ids.size();
    const std::size_t n_items = data.item_ids.size();

    detail::FitState st;
    st.theta.setZero(n_models, k + 1);
    st.delta.resize(n_items);
    st.alpha.setConstant(n_items, 1.0);
    st.loadings.resize(n_items, k);

    // Difficulty starts at the logit-matched value for the item's training
    // accuracy; loadings start near zero under the run seed.
    for (std::size_t x = 0; x < n_items; ++x) {
        double correct = 0.0;
        const double n = static_cast<double>(data.item_offsets[x + 1] - data.item_offsets[x]);
        for (std::size_t i = data.item_offsets[x]; i < data.item_offsets[x + 1]; ++i)
            correct += data.item_resp[i];
        const double acc = correct / n;
        st.delta(x) = std::clamp(-std::log(acc / (1.0 - acc)), -4.0, 4.0);
    }
    Rng rng = Rng(seed).derive(0x10ad);
    for (std::size_t x = 0; x < n_items; ++x)
        for (int d = 0; d < k; ++d) st.loadings(x, d) = rng.normal(0.0, 0.1);

    const double eps = cfg.clip_eps;
    const double lam = cfg.lambda_nested;

    // All parameters are solved in one box-constrained L-BFGS run over a flat
    // vector: per-model abilities (general factor first), then per-item
    // difficulty, discrimination, and loadings.
    const auto theta_size = static_cast<Eigen::Index>(n_models) * (k + 1);
    const auto delta_off = theta_size;
    const auto alpha_off = delta_off + static_cast<Eigen::Index>(n_items);
    const auto load_off = alpha_off + static_cast<Eigen::Index>(n_items);
    const auto dim = load_off + static_cast<Eigen::Index>(n_items) * k;

    Eigen::VectorXd v0(dim);
    for (std::size_t m = 0; m < n_models; ++m)
        for (int d = 0; d <= k; ++d)
            v0(static_cast<Eigen::Index>(m) * (k + 1) + d) = st.theta(m, d);
    for (std::size_t x = 0; x < n_items; ++x) {
        const auto xi = static_cast<Eigen::Index>(x);
        v0(delta_off + xi) = st.delta(x);
        v0(alpha_off + xi) = st.alpha(x);
        for (int d = 0; d < k; ++d) v0(load_off + xi * k + d) = st.loadings(x, d);
    }

    const double inf = std::numeric_limits<double>::infinity();
    LbfgsOptions joint_opts;
    joint_opts.max_iters = options.max_outer_steps;
    joint_opts.history = 10;
    joint_opts.f_rel_tol = options.rel_tol;
    joint_opts.record_history = true;
    joint_opts.lower = Eigen::VectorXd::Constant(dim, -inf);
    joint_opts.upper = Eigen::VectorXd::Constant(dim, inf);
    joint_opts.lower.segment(alpha_off, static_cast<Eigen::Index>(n_items))
        .setConstant(options.alpha_fixed ? 1.0 : options.alpha_min);
    joint_opts.upper.segment(alpha_off, static_cast<Eigen::Index>(n_items))
        .setConstant(options.alpha_fixed ? 1.0 : options.alpha_max);
    joint_opts.l1_weight = Eigen::VectorXd::Zero(dim);
    joint_opts.l1_weight.tail(dim - load_off).setConstant(cfg.lambda_l1);

    auto fg = [&](const Eigen::VectorXd& v, Eigen::VectorXd& grad) {
        grad.setZero();
        double f = 0.0;
        for (std::size_t m = 0; m < n_models; ++m) {
            const auto t_off = static_cast<Eigen::Index>(m) * (k + 1);
            const double theta_g = v(t_off);
            for (std::size_t i = data.model_offsets[m]; i < data.model_offsets[m + 1]; ++i) {
                const auto x = static_cast<Eigen::Index>(data.model_item[i]);
                const int r = data.model_resp[i];
                const double a = v(alpha_off + x);
                const double delta = v(delta_off + x);
                double inner = 0.0;
                for (int d = 0; d < k; ++d) inner += v(load_off + x * k + d) * v(t_off + 1 + d);
                const double u_full = theta_g + inner - delta;
                const double z_full = a * u_full;
                const double p_full = sigmoid(z_full);
                f += r == 1 ? -detail::clipped_log(p_full, eps)
                            : -detail::clipped_log(1.0 - p_full, eps);
                const double e_full = p_full - r;
                grad(t_off) += a * e_full;
                grad(delta_off + x) -= a * e_full;
                grad(alpha_off + x) += u_full * e_full;
                for (int d = 0; d < k; ++d) {
                    grad(t_off + 1 + d) += a * e_full * v(load_off + x * k + d);
                    grad(load_off + x * k + d) += a * e_full * v(t_off + 1 + d);
                }
                if (lam > 0.0) {
                    const double u_g = theta_g - delta;
                    const double z_g = a * u_g;
                    const double p_g = sigmoid(z_g);
                    f += lam * (r == 1 ? -detail::clipped_log(p_g, eps)
                                       : -detail::clipped_log(1.0 - p_g, eps));
                    const double e_g = p_g - r;
                    grad(t_off) += lam * a * e_g;
                    grad(delta_off + x) -= lam * a * e_g;
                    grad(alpha_off + x) += lam * u_g * e_g;
                }
            }
        }
        f += 0.5 * v.head(theta_size).squaredNorm();
        grad.head(theta_size) += v.head(theta_size);
        if (options.alpha_fixed) grad.segment(alpha_off, static_cast<Eigen::Index>(n_items)).setZero();
        return f;
    };

    FitMetadata meta;
    meta.seed = seed;
    const LbfgsResult solved = lbfgs_minimize(fg, v0, joint_opts);
    if (!std::isfinite(solved.f)) fail("numerical", "non-finite objective in joint fit");
    meta.objective_history = solved.history;
    meta.outer_iterations = solved.iterations;
    meta.final_objective = solved.f;

    for (std::size_t m = 0; m < n_models; ++m)
        for (int d = 0; d <= k; ++d)
            st.theta(m, d) = solved.x(static_cast<Eigen::Index>(m) * (k + 1) + d);
    for (std::size_t x = 0; x < n_items; ++x) {
        const auto xi = static_cast<Eigen::Index>(x);
        st.delta(x) = solved.x(delta_off + xi);
        st.alpha(x) = solved.x(alpha_off + xi);
        for (int d = 0; d < k; ++d) st.loadings(x, d) = solved.x(load_off + xi * k + d);
    }

    FittedModel fitted;
    fitted.k = k;
    fitted.cfg = cfg;
    fitted.options = options;
    fitted.degenerate_items = std::move(degenerate);
    fitted.meta = std::move(meta);
    for (std::size_t x = 0; x < n_items; ++x) {
        ItemParams p;
        p.alpha = st.alpha(x);
        p.delta = st.delta(x);
        p.loadings = st.loadings.row(x).transpose();
        fitted.item_params.emplace(data.item_ids[x], std::move(p));
    }
    for (std::size_t m = 0; m < n_models; ++m) {
        AbilityVector a;
        a.theta_g = st.theta(m, 0);
        a.theta = st.theta.row(m).tail(k).transpose();
        fitted.abilities.emplace(data.model_ids[m], std::move(a));
    }
    return fitted;
}

struct EmpiricalPrior {
    Vector mu;     // length d = K + 1, general factor first
    Matrix sigma;  // symmetric, ridge-floored

    int dim() const { return static_cast<int>(mu.size()); }
};

// Mean and ridge-regularized sample covariance of the fitted training
// abilities (general factor stacked with the specific factors).
inline EmpiricalPrior empirical_prior(const FittedModel& model, double ridge = 1e-4) {
    const std::size_t n = model.abilities.size();
    if (n < 2)
        fail("insufficient-data",
             "empirical prior requires at least 2 fitted abilities, got " + std::to_string(n));
    const int d = model.k + 1;
    EmpiricalPrior prior;
    prior.mu = Vector::Zero(d);
    for (const auto& [id, ability] : model.abilities) prior.mu += ability.stacked();
    prior.mu /= static_cast<double>(n);

    prior.sigma = Matrix::Zero(d, d);
    for (const auto& [id, ability] : model.abilities) {
        const Vector centered = ability.stacked() - prior.mu;
        prior.sigma += centered * centered.transpose();
    }
    prior.sigma /= static_cast<double>(n - 1);
    prior.sigma += ridge * Matrix::Identity(d, d);
    return prior;
}

// MAP ability estimate for a new model from its observed records, with item
// parameters frozen. Degenerate items contribute no gradient. The posterior
// is strictly convex (Gaussian prior + logistic likelihood), solved by
// trust-region Newton from the prior mean.
template <typename Records>
AbilityVector map_calibrate(const FittedModel& model, const EmpiricalPrior& prior,
                            const Records& observed, int max_steps = 100) {
    const int d = prior.dim();
    if (d != model.k + 1)
        fail("shape", "prior dimension does not match the fitted model");

    // Collect usable observations up front.
    struct Obs {
        const ItemParams* item;
        int r;
    };
    std::vector<Obs> obs;
    for (const Record& rec : observed) {
        if (model.is_degenerate(rec.item_id)) continue;
        auto it = model.item_params.find(rec.item_id);
        if (it == model.item_params.end())
            fail("missing-data", "observed item '" + rec.item_id + "' has no fitted parameters");
        obs.push_back({&it->second, rec.correct});
    }
    if (obs.empty()) return AbilityVector::from_stacked(prior.mu);

    const Eigen::LLT<Matrix> llt(prior.sigma);
    const double eps = model.cfg.clip_eps;

    auto fgh = [&](const Vector& v, Vector& grad, Matrix& hess) {
        const Vector centered = v - prior.mu;
        const Vector sigma_inv_centered = llt.solve(centered);
        double f = 0.5 * centered.dot(sigma_inv_centered);
        grad = sigma_inv_centered;
        hess = llt.solve(Matrix::Identity(d, d));
        for (const Obs& o : obs) {
            const ItemParams& item = *o.item;
            const Vector k_tilde = item.augmented_loading();
            const double z = item.alpha * (k_tilde.dot(v) - item.delta);
            f += detail::nll_term(o.r, z, eps);
            const double p = sigmoid(z);
            const double e = p - o.r;
            grad += item.alpha * e * k_tilde;
            hess += item.alpha * item.alpha * p * (1.0 - p) * (k_tilde * k_tilde.transpose());
        }
        return f;
    };

    TrustRegionOptions opts;
    opts.max_iters = max_steps;
    const TrustRegionResult res = trust_region_minimize(fgh, prior.mu, opts);
    return AbilityVector::from_stacked(res.x);
}

}  // namespace irtkit
