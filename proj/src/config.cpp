#include "jbsde/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace jbsde::config {

using nlohmann::json;
using ordered = nlohmann::ordered_json;

namespace {

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError(where + " must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

Vec get_vec(const json& j, const std::string& where) {
    if (!j.is_array()) throw ConfigError(where + " must be an array of numbers");
    Vec v;
    for (const auto& e : j) v.push_back(e.get<double>());
    return v;
}

MeasureConfig parse_measure(const json& j) {
    check_keys(j, "problem.measure",
               {"family", "atoms", "lambda", "delta", "c", "alpha", "z_max", "quad_hint"});
    MeasureConfig mc;
    mc.family = j.at("family").get<std::string>();
    if (j.contains("atoms")) {
        for (const auto& a : j.at("atoms")) {
            check_keys(a, "problem.measure.atoms[]", {"z", "w"});
            mc.atoms.emplace_back(get_vec(a.at("z"), "atom z"), a.at("w").get<double>());
        }
    }
    if (j.contains("lambda")) mc.lambda = j.at("lambda").get<double>();
    if (j.contains("delta")) mc.delta = j.at("delta").get<double>();
    if (j.contains("c")) mc.c = j.at("c").get<double>();
    if (j.contains("alpha")) mc.alpha = j.at("alpha").get<double>();
    if (j.contains("z_max")) mc.z_max = j.at("z_max").get<double>();
    if (j.contains("quad_hint")) mc.quad_hint = j.at("quad_hint").get<int>();
    return mc;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(j, "config",
               {"problem", "grid", "train", "net", "eval_batch", "epsilon_list", "certificate",
                "basis_degree", "output_dir", "seed", "threads"});
    ExperimentConfig cfg;

    if (!j.contains("problem")) throw ConfigError("missing required key 'problem'");
    const json& jp = j.at("problem");
    check_keys(jp, "problem",
               {"name", "d", "T", "x0", "alpha", "beta0", "beta_slope", "beta_curv", "kappa", "b",
                "sigma_diag", "gamma_diag", "measure"});
    if (!jp.contains("name")) throw ConfigError("missing required key 'problem.name'");
    cfg.problem.name = jp.at("name").get<std::string>();
    if (jp.contains("d")) cfg.problem.d = jp.at("d").get<int>();
    if (jp.contains("T")) cfg.problem.T = jp.at("T").get<double>();
    cfg.problem.x0 = jp.contains("x0") ? get_vec(jp.at("x0"), "problem.x0")
                                       : Vec(cfg.problem.d, 1.0);
    cfg.problem.alpha = jp.contains("alpha") ? get_vec(jp.at("alpha"), "problem.alpha")
                                             : Vec(cfg.problem.d, 1.0);
    if (jp.contains("beta0")) cfg.problem.beta0 = jp.at("beta0").get<double>();
    if (jp.contains("beta_slope")) cfg.problem.beta_slope = jp.at("beta_slope").get<double>();
    if (jp.contains("beta_curv")) cfg.problem.beta_curv = jp.at("beta_curv").get<double>();
    if (jp.contains("kappa")) cfg.problem.kappa = jp.at("kappa").get<double>();
    cfg.problem.b = jp.contains("b") ? get_vec(jp.at("b"), "problem.b") : Vec(cfg.problem.d, 0.0);
    if (jp.contains("sigma_diag")) cfg.problem.sigma_diag = jp.at("sigma_diag").get<double>();
    if (jp.contains("gamma_diag")) cfg.problem.gamma_diag = jp.at("gamma_diag").get<double>();
    if (!jp.contains("measure")) throw ConfigError("missing required key 'problem.measure'");
    cfg.problem.measure = parse_measure(jp.at("measure"));

    if (j.contains("grid")) {
        const json& jg = j.at("grid");
        check_keys(jg, "grid", {"M", "M_list"});
        if (jg.contains("M") && jg.contains("M_list"))
            throw ConfigError("grid: give either M or M_list, not both");
        if (jg.contains("M"))
            cfg.M_list = {jg.at("M").get<int>()};
        else if (jg.contains("M_list"))
            cfg.M_list = jg.at("M_list").get<std::vector<int>>();
        if (cfg.M_list.empty()) throw ConfigError("grid.M_list must not be empty");
        for (int m : cfg.M_list)
            if (m < 1) throw ConfigError("grid steps must be >= 1");
    }

    if (j.contains("train")) {
        const json& jt = j.at("train");
        check_keys(jt, "train",
                   {"optimizer", "lr", "beta1", "beta2", "eps", "batch", "iterations",
                    "grad_clip"});
        if (jt.contains("optimizer")) {
            const std::string opt = jt.at("optimizer").get<std::string>();
            if (opt == "adam")
                cfg.train.optimizer = solver::TrainConfig::Optimizer::Adam;
            else if (opt == "sgd")
                cfg.train.optimizer = solver::TrainConfig::Optimizer::Sgd;
            else
                throw ConfigError("train.optimizer must be 'adam' or 'sgd'");
        }
        if (jt.contains("lr")) cfg.train.lr = jt.at("lr").get<double>();
        if (jt.contains("beta1")) cfg.train.beta1 = jt.at("beta1").get<double>();
        if (jt.contains("beta2")) cfg.train.beta2 = jt.at("beta2").get<double>();
        if (jt.contains("eps")) cfg.train.eps_adam = jt.at("eps").get<double>();
        if (jt.contains("batch")) cfg.train.batch = jt.at("batch").get<int>();
        if (jt.contains("iterations")) cfg.train.iterations = jt.at("iterations").get<int>();
        if (jt.contains("grad_clip")) cfg.train.grad_clip = jt.at("grad_clip").get<double>();
        if (cfg.train.lr <= 0 || cfg.train.batch < 1 || cfg.train.iterations < 0)
            throw ConfigError("train: lr must be positive, batch >= 1, iterations >= 0");
    }

    if (j.contains("net")) {
        const json& jn = j.at("net");
        check_keys(jn, "net", {"hidden_width", "hidden_layers", "activation"});
        if (jn.contains("hidden_width")) cfg.net.hidden_width = jn.at("hidden_width").get<int>();
        if (jn.contains("hidden_layers")) cfg.net.hidden_layers = jn.at("hidden_layers").get<int>();
        if (jn.contains("activation")) cfg.net.activation = jn.at("activation").get<std::string>();
        if (cfg.net.activation != "sigmoid" && cfg.net.activation != "tanh")
            throw ConfigError("net.activation must be 'sigmoid' or 'tanh'");
        if (cfg.net.hidden_layers < 1) throw ConfigError("net.hidden_layers must be >= 1");
    }

    if (j.contains("eval_batch")) cfg.eval_batch = j.at("eval_batch").get<int>();
    if (j.contains("epsilon_list"))
        cfg.epsilon_list = j.at("epsilon_list").get<std::vector<double>>();

    if (j.contains("certificate")) {
        const json& jc = j.at("certificate");
        check_keys(jc, "certificate",
                   {"lambda_sq", "lambdabar", "f1_coefficient", "lambda3", "lambda4",
                    "fitted_path_constant"});
        if (jc.contains("lambda_sq") && !jc.at("lambda_sq").is_null())
            cfg.certificate.lambda_sq = jc.at("lambda_sq").get<double>();
        if (jc.contains("lambdabar") && !jc.at("lambdabar").is_null())
            cfg.certificate.lambdabar = jc.at("lambdabar").get<double>();
        if (jc.contains("f1_coefficient"))
            cfg.certificate.f1_coefficient = jc.at("f1_coefficient").get<int>();
        if (cfg.certificate.f1_coefficient != 3 && cfg.certificate.f1_coefficient != 4)
            throw ConfigError("certificate.f1_coefficient must be 3 or 4");
        if (jc.contains("lambda3")) cfg.certificate.lambda3 = jc.at("lambda3").get<double>();
        if (jc.contains("lambda4")) cfg.certificate.lambda4 = jc.at("lambda4").get<double>();
        if (jc.contains("fitted_path_constant") && !jc.at("fitted_path_constant").is_null())
            cfg.certificate.fitted_path_constant = jc.at("fitted_path_constant").get<double>();
    }

    if (j.contains("basis_degree")) cfg.basis_degree = j.at("basis_degree").get<int>();
    if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
    if (j.contains("threads")) cfg.threads = j.at("threads").get<int>();
    cfg.train.master_seed = cfg.seed;
    cfg.train.threads = cfg.threads;
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string canonical_json(const ExperimentConfig& cfg) {
    ordered j;
    ordered jp;
    jp["name"] = cfg.problem.name;
    jp["d"] = cfg.problem.d;
    jp["T"] = cfg.problem.T;
    jp["x0"] = cfg.problem.x0;
    jp["alpha"] = cfg.problem.alpha;
    jp["beta0"] = cfg.problem.beta0;
    jp["beta_slope"] = cfg.problem.beta_slope;
    jp["beta_curv"] = cfg.problem.beta_curv;
    jp["kappa"] = cfg.problem.kappa;
    jp["b"] = cfg.problem.b;
    jp["sigma_diag"] = cfg.problem.sigma_diag;
    jp["gamma_diag"] = cfg.problem.gamma_diag;
    ordered jm;
    jm["family"] = cfg.problem.measure.family;
    ordered atoms = ordered::array();
    for (const auto& [z, w] : cfg.problem.measure.atoms) atoms.push_back({{"z", z}, {"w", w}});
    jm["atoms"] = atoms;
    jm["lambda"] = cfg.problem.measure.lambda;
    jm["delta"] = cfg.problem.measure.delta;
    jm["c"] = cfg.problem.measure.c;
    jm["alpha"] = cfg.problem.measure.alpha;
    jm["z_max"] = cfg.problem.measure.z_max;
    jm["quad_hint"] = cfg.problem.measure.quad_hint;
    jp["measure"] = jm;
    j["problem"] = jp;
    j["grid"] = ordered{{"M_list", cfg.M_list}};
    ordered jt;
    jt["optimizer"] = cfg.train.optimizer == solver::TrainConfig::Optimizer::Adam ? "adam" : "sgd";
    jt["lr"] = cfg.train.lr;
    jt["beta1"] = cfg.train.beta1;
    jt["beta2"] = cfg.train.beta2;
    jt["eps"] = cfg.train.eps_adam;
    jt["batch"] = cfg.train.batch;
    jt["iterations"] = cfg.train.iterations;
    jt["grad_clip"] = cfg.train.grad_clip;
    j["train"] = jt;
    ordered jn;
    jn["hidden_width"] = cfg.net.hidden_width;
    jn["hidden_layers"] = cfg.net.hidden_layers;
    jn["activation"] = cfg.net.activation;
    j["net"] = jn;
    j["eval_batch"] = cfg.eval_batch;
    j["epsilon_list"] = cfg.epsilon_list;
    ordered jc;
    jc["lambda_sq"] = cfg.certificate.lambda_sq ? ordered(*cfg.certificate.lambda_sq) : ordered();
    jc["lambdabar"] = cfg.certificate.lambdabar ? ordered(*cfg.certificate.lambdabar) : ordered();
    jc["f1_coefficient"] = cfg.certificate.f1_coefficient;
    jc["lambda3"] = cfg.certificate.lambda3;
    jc["lambda4"] = cfg.certificate.lambda4;
    jc["fitted_path_constant"] = cfg.certificate.fitted_path_constant
                                     ? ordered(*cfg.certificate.fitted_path_constant)
                                     : ordered();
    j["certificate"] = jc;
    j["basis_degree"] = cfg.basis_degree;
    j["seed"] = cfg.seed;
    return j.dump(2);
}

uint64_t config_hash(const ExperimentConfig& cfg) {
    // FNV-1a over the canonical serialization
    const std::string s = canonical_json(cfg);
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

levy::LevyMeasure build_measure(const MeasureConfig& mc, int dim) {
    if (mc.family == "atoms") {
        if (mc.atoms.empty()) throw ConfigError("atoms measure needs a nonempty atom list");
        return levy::make_atoms(dim, mc.atoms);
    }
    if (mc.family == "merton")
        return levy::make_merton(dim, mc.lambda, mc.delta, mc.z_max, mc.quad_hint);
    if (mc.family == "power") {
        if (dim != 1) throw ConfigError("power measure is one-dimensional");
        return levy::make_power(mc.c, mc.alpha, mc.z_max > 0.0 ? mc.z_max : 1.0, mc.quad_hint);
    }
    throw ConfigError("unknown measure family '" + mc.family + "'");
}

model::ManufacturedSolution build_problem(const ProblemConfig& pc) {
    const int d = pc.d;
    if (static_cast<int>(pc.x0.size()) != d) throw ConfigError("problem.x0 has the wrong dimension");

    model::ProblemSkeleton sk;
    sk.d = d;
    sk.T = pc.T;
    sk.x0 = pc.x0;
    Vec b0 = pc.b;
    if (static_cast<int>(b0.size()) != d) throw ConfigError("problem.b has the wrong dimension");
    sk.b = [b0](const Vec&) { return b0; };
    const double sd = pc.name == "pure_jump_linear" ? 0.0 : pc.sigma_diag;
    sk.sigma = [sd, d](const Vec&) { return Mat::diagonal(d, sd); };
    sk.gamma = [gd = pc.gamma_diag, d](const Vec&) { return Mat::diagonal(d, gd); };
    sk.measure = build_measure(pc.measure, d);
    sk.K_b = 0.0;
    sk.K_sigma = 0.0;
    sk.K_gamma = 0.0;

    if (pc.name == "linear" || pc.name == "pure_jump_linear") {
        if (static_cast<int>(pc.alpha.size()) != d)
            throw ConfigError("problem.alpha has the wrong dimension");
        return model::make_linear_manufactured(pc.alpha, pc.beta0, pc.beta_slope, pc.beta_curv,
                                               pc.kappa, std::move(sk));
    }
    if (pc.name == "levy_quadratic") return model::make_levy_quadratic_manufactured(std::move(sk));
    throw ConfigError("unknown problem name '" + pc.name + "' (linear, pure_jump_linear, levy_quadratic)");
}

}  // namespace jbsde::config
