#include "safemargin/model.hpp"

#include <fstream>

namespace safemargin {

namespace {

using nlohmann::json;

const json& require(const json& j, const char* key, const char* where) {
    auto it = j.find(key);
    if (it == j.end())
        throw ConfigError(std::string(where) + ": missing field '" + key + "'");
    return *it;
}

std::vector<std::string> parse_names(const json& j, const char* where) {
    if (!j.is_array() || j.empty())
        throw ConfigError(std::string(where) + " must be a non-empty array of names");
    std::vector<std::string> names;
    for (const auto& v : j) {
        if (!v.is_string())
            throw ConfigError(std::string(where) + " entries must be strings");
        names.push_back(v.get<std::string>());
    }
    for (std::size_t i = 0; i < names.size(); ++i)
        for (std::size_t k = i + 1; k < names.size(); ++k)
            if (names[i] == names[k])
                throw ConfigError(std::string(where) + ": duplicate name '" + names[i] + "'");
    return names;
}

std::vector<ExprPtr> parse_exprs(const json& j, std::span<const std::string> vars,
                                 std::size_t expected, const char* where) {
    if (!j.is_array())
        throw ConfigError(std::string(where) + " must be an array of expressions");
    if (j.size() != expected)
        throw ConfigError(std::string(where) + ": expected " + std::to_string(expected) +
                          " expressions, got " + std::to_string(j.size()));
    std::vector<ExprPtr> out;
    for (const auto& v : j) {
        if (!v.is_string())
            throw ConfigError(std::string(where) + " entries must be strings");
        try {
            out.push_back(parse(v.get<std::string>(), vars));
        } catch (const SyntaxError& e) {
            throw ConfigError(std::string(where) + ": " + e.what());
        } catch (const UnknownVariable& e) {
            throw ConfigError(std::string(where) + ": " + e.what());
        }
    }
    return out;
}

Vec parse_vector(const json& j, std::size_t expected, const char* where) {
    if (!j.is_array() || j.size() != expected)
        throw ConfigError(std::string(where) + " must be an array of " +
                          std::to_string(expected) + " numbers");
    Vec v(static_cast<Eigen::Index>(expected));
    for (std::size_t i = 0; i < expected; ++i) {
        if (!j[i].is_number())
            throw ConfigError(std::string(where) + " entries must be numbers");
        v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    }
    return v;
}

double get_number(const json& j, const char* key, double fallback) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    if (!it->is_number())
        throw ConfigError(std::string("'") + key + "' must be a number");
    return it->get<double>();
}

int get_int(const json& j, const char* key, int fallback) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    if (!it->is_number_integer())
        throw ConfigError(std::string("'") + key + "' must be an integer");
    return it->get<int>();
}

void compile_matrix(const std::vector<std::vector<ExprPtr>>& exprs,
                    std::span<const std::string> states,
                    std::span<const std::string> params,
                    std::vector<Tape>& out) {
    out.clear();
    for (const auto& row : exprs)
        for (const auto& e : row)
            out.push_back(Tape::compile(*e, states, params));
}

} // namespace

Metric::Metric(Mat P) : P_(std::move(P)) {
    if (P_.rows() != P_.cols())
        throw MetricNotPD();
    for (Eigen::Index i = 0; i < P_.rows(); ++i)
        for (Eigen::Index j = 0; j < i; ++j)
            if (P_(i, j) != P_(j, i))
                throw MetricNotPD();
    llt_.compute(P_);
    if (llt_.info() != Eigen::Success)
        throw MetricNotPD();
}

Vec Metric::unit_from_euclidean(const Vec& e) const {
    // u = L^{-T} e has ||u||_P = ||e||_2 for P = L L^T
    return llt_.matrixL().transpose().solve(e);
}

SystemModel build_model(const nlohmann::json& config) {
    SystemModel model;

    const json& system = require(config, "system", "config");
    model.state_names = parse_names(require(system, "states", "system"), "system.states");
    model.param_names = parse_names(require(system, "params", "system"), "system.params");
    model.n = static_cast<int>(model.state_names.size());
    model.m = static_cast<int>(model.param_names.size());

    std::vector<std::string> all_names = model.state_names;
    all_names.insert(all_names.end(), model.param_names.begin(), model.param_names.end());

    model.field = parse_exprs(require(system, "field", "system"), all_names,
                              model.state_names.size(), "system.field");

    model.jac_x.resize(model.n);
    model.jac_p.resize(model.n);
    for (int i = 0; i < model.n; ++i) {
        for (const auto& sname : model.state_names)
            model.jac_x[i].push_back(diff(model.field[i], sname));
        for (const auto& pname : model.param_names)
            model.jac_p[i].push_back(diff(model.field[i], pname));
    }

    for (const auto& e : model.field)
        model.field_tape.push_back(Tape::compile(*e, model.state_names, model.param_names));
    compile_matrix(model.jac_x, model.state_names, model.param_names, model.jac_x_tape);
    compile_matrix(model.jac_p, model.state_names, model.param_names, model.jac_p_tape);

    const json& dist = require(config, "disturbance", "config");
    const json& kind = require(dist, "kind", "disturbance");
    if (!kind.is_string())
        throw ConfigError("disturbance.kind must be a string");
    const std::string kind_str = kind.get<std::string>();
    DisturbanceSpec& d = model.disturbance;
    const std::vector<std::string> no_states;
    if (kind_str == "algebraic") {
        d.kind = DisturbanceSpec::Kind::Algebraic;
        d.map = parse_exprs(require(dist, "map", "disturbance"), model.param_names,
                            model.state_names.size(), "disturbance.map");
        d.map_jac.resize(model.n);
        for (int i = 0; i < model.n; ++i)
            for (const auto& pname : model.param_names)
                d.map_jac[i].push_back(diff(d.map[i], pname));
        for (const auto& e : d.map)
            d.map_tape.push_back(Tape::compile(*e, no_states, model.param_names));
        compile_matrix(d.map_jac, no_states, model.param_names, d.map_jac_tape);
    } else if (kind_str == "fault_on") {
        d.kind = DisturbanceSpec::Kind::FaultOn;
        d.fault_field = parse_exprs(require(dist, "fault_field", "disturbance"), all_names,
                                    model.state_names.size(), "disturbance.fault_field");
        d.duration = get_number(dist, "duration", 0.0);
        if (!(d.duration > 0.0))
            throw ConfigError("disturbance.duration must be > 0");
        d.fault_jac_x.resize(model.n);
        d.fault_jac_p.resize(model.n);
        for (int i = 0; i < model.n; ++i) {
            for (const auto& sname : model.state_names)
                d.fault_jac_x[i].push_back(diff(d.fault_field[i], sname));
            for (const auto& pname : model.param_names)
                d.fault_jac_p[i].push_back(diff(d.fault_field[i], pname));
        }
        for (const auto& e : d.fault_field)
            d.fault_tape.push_back(Tape::compile(*e, model.state_names, model.param_names));
        compile_matrix(d.fault_jac_x, model.state_names, model.param_names, d.fault_jac_x_tape);
        compile_matrix(d.fault_jac_p, model.state_names, model.param_names, d.fault_jac_p_tape);
    } else {
        throw ConfigError("disturbance.kind must be 'algebraic' or 'fault_on'");
    }

    const json& nominal = require(config, "nominal", "config");
    model.p0 = parse_vector(require(nominal, "p", "nominal"), model.param_names.size(),
                            "nominal.p");
    model.sep_guess = parse_vector(require(nominal, "sep_guess", "nominal"),
                                   model.state_names.size(), "nominal.sep_guess");

    const json& metric = require(config, "metric", "config");
    const json& pj = require(metric, "P", "metric");
    if (!pj.is_array() || pj.size() != static_cast<std::size_t>(model.m))
        throw ConfigError("metric.P must be an m-by-m matrix");
    Mat P(model.m, model.m);
    for (int i = 0; i < model.m; ++i) {
        if (!pj[i].is_array() || pj[i].size() != static_cast<std::size_t>(model.m))
            throw ConfigError("metric.P must be an m-by-m matrix");
        for (int j = 0; j < model.m; ++j) {
            if (!pj[i][j].is_number())
                throw ConfigError("metric.P entries must be numbers");
            P(i, j) = pj[i][j].get<double>();
        }
    }
    model.metric = Metric(P);

    json integ = config.value("integrator", json::object());
    model.integrator.rtol = get_number(integ, "rtol", model.integrator.rtol);
    model.integrator.atol = get_number(integ, "atol", model.integrator.atol);
    model.integrator.dt_init = get_number(integ, "dt_init", model.integrator.dt_init);
    model.integrator.dt_max = get_number(integ, "dt_max", model.integrator.dt_max);
    model.integrator.t_max = get_number(integ, "t_max", model.integrator.t_max);

    json rec = config.value("recovery", json::object());
    model.recovery.conv_tol = get_number(rec, "conv_tol", model.recovery.conv_tol);
    model.integrator.div_bound = get_number(rec, "div_bound", model.integrator.div_bound);
    if (!(model.recovery.conv_tol > 0.0))
        throw ConfigError("recovery.conv_tol must be > 0");

    try {
        model.integrator.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }

    json algo = config.value("algorithm", json::object());
    model.algo.epsilon = get_number(algo, "epsilon", model.algo.epsilon);
    model.algo.kappa = get_number(algo, "kappa", model.algo.kappa);
    model.algo.tol_g = get_number(algo, "tol_g", model.algo.tol_g);
    model.algo.tol_p = get_number(algo, "tol_p", model.algo.tol_p);
    model.algo.max_iter = get_int(algo, "max_iter", model.algo.max_iter);
    model.algo.max_backtrack = get_int(algo, "max_backtrack", model.algo.max_backtrack);
    model.algo.fd_step_rel = get_number(algo, "fd_step_rel", model.algo.fd_step_rel);
    model.algo.fd_step_abs = get_number(algo, "fd_step_abs", model.algo.fd_step_abs);
    model.algo.direction = get_int(algo, "direction", model.algo.direction);
    if (algo.contains("corrector_eta")) {
        const std::string mode = algo["corrector_eta"].get<std::string>();
        if (mode == "frozen") model.algo.corrector_eta_frozen = true;
        else if (mode == "live") model.algo.corrector_eta_frozen = false;
        else throw ConfigError("algorithm.corrector_eta must be 'frozen' or 'live'");
    }
    try {
        model.algo.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }

    return model;
}

SystemModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config file '" + path + "'");
    nlohmann::json config;
    try {
        in >> config;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("invalid JSON: ") + e.what());
    }
    return build_model(config);
}

void field_eval(const SystemModel& model, const Vec& x, const Vec& p, Vec& dx) {
    if (!x.allFinite() || !p.allFinite())
        throw std::invalid_argument("field_eval: non-finite input");
    dx.resize(model.n);
    for (int i = 0; i < model.n; ++i)
        dx[i] = model.field_tape[i].eval(x.data(), p.data());
}

void field_eval(const SystemModel& model, const Vec& x, const Vec& p, Vec& dx,
                Mat& Jx, Mat& Jp) {
    field_eval(model, x, p, dx);
    Jx.resize(model.n, model.n);
    Jp.resize(model.n, model.m);
    for (int i = 0; i < model.n; ++i) {
        for (int j = 0; j < model.n; ++j)
            Jx(i, j) = model.jac_x_tape[i * model.n + j].eval(x.data(), p.data());
        for (int k = 0; k < model.m; ++k)
            Jp(i, k) = model.jac_p_tape[i * model.m + k].eval(x.data(), p.data());
    }
}

JacFieldFn post_disturbance_jac_field(const SystemModel& model, const Vec& p) {
    auto pv = std::make_shared<Vec>(p);
    const SystemModel* mp = &model;
    return [mp, pv](const Vec& x, Vec& dx, Mat& Jx, Mat& Jp) {
        const int n = mp->n, m = mp->m;
        dx.resize(n);
        Jx.resize(n, n);
        Jp.resize(n, m);
        const double* xd = x.data();
        const double* pd = pv->data();
        for (int i = 0; i < n; ++i) {
            dx[i] = mp->field_tape[i].eval(xd, pd);
            for (int j = 0; j < n; ++j)
                Jx(i, j) = mp->jac_x_tape[i * n + j].eval(xd, pd);
            for (int k = 0; k < m; ++k)
                Jp(i, k) = mp->jac_p_tape[i * m + k].eval(xd, pd);
        }
    };
}

JacFieldFn fault_jac_field(const SystemModel& model, const Vec& p) {
    if (model.disturbance.kind != DisturbanceSpec::Kind::FaultOn)
        throw std::logic_error("fault_jac_field requires a fault_on disturbance");
    auto pv = std::make_shared<Vec>(p);
    const SystemModel* mp = &model;
    return [mp, pv](const Vec& x, Vec& dx, Mat& Jx, Mat& Jp) {
        const int n = mp->n, m = mp->m;
        const DisturbanceSpec& d = mp->disturbance;
        dx.resize(n);
        Jx.resize(n, n);
        Jp.resize(n, m);
        const double* xd = x.data();
        const double* pd = pv->data();
        for (int i = 0; i < n; ++i) {
            dx[i] = d.fault_tape[i].eval(xd, pd);
            for (int j = 0; j < n; ++j)
                Jx(i, j) = d.fault_jac_x_tape[i * n + j].eval(xd, pd);
            for (int k = 0; k < m; ++k)
                Jp(i, k) = d.fault_jac_p_tape[i * m + k].eval(xd, pd);
        }
    };
}

DisturbanceResult disturbance_eval(const SystemModel& model, const Vec& p,
                                   const Vec& sep_x_star, const Mat& sep_dXdp) {
    const DisturbanceSpec& d = model.disturbance;
    DisturbanceResult out;
    if (d.kind == DisturbanceSpec::Kind::Algebraic) {
        out.y.resize(model.n);
        out.Dy.resize(model.n, model.m);
        for (int i = 0; i < model.n; ++i) {
            out.y[i] = d.map_tape[i].eval(nullptr, p.data());
            for (int k = 0; k < model.m; ++k)
                out.Dy(i, k) = d.map_jac_tape[i * model.m + k].eval(nullptr, p.data());
        }
        return out;
    }

    IntegratorOptions opts = model.integrator;
    opts.t_max = d.duration;
    opts.dt_init = std::min(opts.dt_init, d.duration / 4.0);
    SensTrajectory st = integrate_augmented(fault_jac_field(model, p), sep_x_star,
                                            sep_dXdp, opts);
    if (st.flow.termination == Termination::Diverged)
        throw IntegrationError("fault-on trajectory left the divergence bound");
    out.y = st.flow.states.back();
    out.Dy = st.sensitivities.back();
    return out;
}

Vec disturbance_y(const SystemModel& model, const Vec& p, const Vec& sep_x_star) {
    const DisturbanceSpec& d = model.disturbance;
    if (d.kind == DisturbanceSpec::Kind::Algebraic) {
        Vec y(model.n);
        for (int i = 0; i < model.n; ++i)
            y[i] = d.map_tape[i].eval(nullptr, p.data());
        return y;
    }

    IntegratorOptions opts = model.integrator;
    opts.t_max = d.duration;
    opts.dt_init = std::min(opts.dt_init, d.duration / 4.0);
    auto pv = std::make_shared<Vec>(p);
    const SystemModel* mp = &model;
    FieldFn f = [mp, pv](const Vec& x, Vec& dx) {
        dx.resize(mp->n);
        for (int i = 0; i < mp->n; ++i)
            dx[i] = mp->disturbance.fault_tape[i].eval(x.data(), pv->data());
    };
    Trajectory traj = integrate(f, sep_x_star, opts);
    if (traj.termination == Termination::Diverged)
        throw IntegrationError("fault-on trajectory left the divergence bound");
    return traj.states.back();
}

} // namespace safemargin
