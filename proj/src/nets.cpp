#include "jbsde/nets.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace jbsde::nets {

namespace {
double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// first and second activation derivative expressed through the value a
inline double dphi(Activation act, double a) {
    return act == Activation::Sigmoid ? a * (1.0 - a) : 1.0 - a * a;
}
inline double ddphi(Activation act, double a) {
    return act == Activation::Sigmoid ? a * (1.0 - a) * (1.0 - 2.0 * a) : -2.0 * a * (1.0 - a * a);
}
}  // namespace

FeedForwardNet::FeedForwardNet(std::vector<int> dims, Activation hidden)
    : dims_(std::move(dims)), act_(hidden) {
    if (dims_.size() < 3) throw JbsdeError("network needs at least one hidden layer");
    if (dims_.back() != 1) throw JbsdeError("network output must be scalar");
    for (int v : dims_)
        if (v <= 0) throw JbsdeError("network layer widths must be positive");
    const int L = layer_count();
    W_.reserve(L);
    b_.reserve(L);
    for (int l = 0; l < L; ++l) {
        W_.emplace_back(dims_[l + 1], dims_[l]);
        b_.emplace_back(dims_[l + 1], 0.0);
    }
}

size_t FeedForwardNet::num_params() const {
    size_t n = 0;
    for (size_t l = 0; l + 1 < dims_.size(); ++l)
        n += static_cast<size_t>(dims_[l + 1]) * (1 + dims_[l]);
    return n;
}

size_t FeedForwardNet::grouped_param_count() const {
    size_t n = 0;
    for (int v : dims_) n += static_cast<size_t>(v) * (1 + v);
    return n;
}

void FeedForwardNet::to_flat(std::span<double> out) const {
    size_t k = 0;
    for (int l = 0; l < layer_count(); ++l) {
        for (double v : W_[l].a) out[k++] = v;
        for (double v : b_[l]) out[k++] = v;
    }
}

void FeedForwardNet::from_flat(std::span<const double> in) {
    size_t k = 0;
    for (int l = 0; l < layer_count(); ++l) {
        for (double& v : W_[l].a) v = in[k++];
        for (double& v : b_[l]) v = in[k++];
    }
}

double FeedForwardNet::forward(std::span<const double> x) const {
    NetTape tape;
    tape.bind(*this);
    return tape.forward(x);
}

Vec FeedForwardNet::grad_x(std::span<const double> x) const {
    NetTape tape;
    tape.bind(*this);
    tape.forward(x);
    Vec g(input_dim());
    tape.grad_x(g);
    return g;
}

// ---------------------------------------------------------------------------
// NetTape
// ---------------------------------------------------------------------------

void NetTape::bind(const FeedForwardNet& net) {
    net_ = &net;
    const auto& dims = net.dims();
    const int L = net.layer_count();
    a_.resize(L + 1);
    t_.resize(L + 1);
    s_.resize(L);
    bz_.resize(L);
    bs_.resize(L);
    ba_.resize(L + 1);
    bt_.resize(L + 1);
    for (int l = 0; l <= L; ++l) {
        a_[l].resize(dims[l]);
        t_[l].resize(dims[l]);
        ba_[l].resize(dims[l]);
        bt_[l].resize(dims[l]);
    }
    for (int l = 0; l < L; ++l) {
        bz_[l].resize(dims[l + 1]);
        bs_[l].resize(dims[l + 1]);
        s_[l].resize(dims[l + 1]);
    }
}

double NetTape::act(double z) const {
    return net_->activation() == Activation::Sigmoid ? sigmoid(z) : std::tanh(z);
}

double NetTape::forward(std::span<const double> x) {
    const int L = net_->layer_count();
    std::copy(x.begin(), x.end(), a_[0].begin());
    for (int l = 0; l < L; ++l) {
        const Mat& W = net_->W_[l];
        const Vec& b = net_->b_[l];
        Vec& out = a_[l + 1];
        matvec(W, a_[l], out);
        for (int i = 0; i < W.rows; ++i) out[i] += b[i];
        if (l + 1 < L)
            for (double& v : out) v = act(v);
    }
    return a_[L][0];
}

void NetTape::grad_x(std::span<double> out) const {
    const int L = net_->layer_count();
    // delta on the affine output of layer l, walked backwards through bz_/ba_
    bz_[L - 1][0] = 1.0;
    for (int l = L - 1; l >= 0; --l) {
        const Mat& W = net_->W_[l];
        matTvec(W, bz_[l], ba_[l]);
        if (l > 0)
            for (int i = 0; i < W.cols; ++i)
                bz_[l - 1][i] = dphi(net_->activation(), a_[l][i]) * ba_[l][i];
    }
    std::copy(ba_[0].begin(), ba_[0].end(), out.begin());
}

double NetTape::dir_deriv(std::span<const double> v) {
    const int L = net_->layer_count();
    std::copy(v.begin(), v.end(), t_[0].begin());
    for (int l = 0; l < L; ++l) {
        const Mat& W = net_->W_[l];
        matvec(W, t_[l], s_[l]);
        if (l + 1 < L) {
            for (int i = 0; i < W.rows; ++i)
                t_[l + 1][i] = dphi(net_->activation(), a_[l + 1][i]) * s_[l][i];
        } else {
            t_[L][0] = s_[l][0];
        }
    }
    return t_[L][0];
}

void NetTape::accumulate_param_grad_value(double coeff, std::span<double> grad) const {
    const int L = net_->layer_count();
    bz_[L - 1][0] = coeff;
    size_t offset = grad.size();
    for (int l = L - 1; l >= 0; --l) {
        const Mat& W = net_->W_[l];
        offset -= static_cast<size_t>(W.rows) * (W.cols + 1);
        double* gW = grad.data() + offset;
        double* gb = gW + static_cast<size_t>(W.rows) * W.cols;
        for (int i = 0; i < W.rows; ++i) {
            const double di = bz_[l][i];
            double* row = gW + static_cast<size_t>(i) * W.cols;
            const double* al = a_[l].data();
            for (int j = 0; j < W.cols; ++j) row[j] += di * al[j];
            gb[i] += di;
        }
        if (l > 0) {
            matTvec(W, bz_[l], ba_[l]);
            for (int i = 0; i < W.cols; ++i)
                bz_[l - 1][i] = dphi(net_->activation(), a_[l][i]) * ba_[l][i];
        }
    }
}

void NetTape::accumulate_param_grad_dir(double coeff, std::span<double> grad) const {
    const int L = net_->layer_count();
    const Activation act = net_->activation();
    bs_[L - 1].assign(1, coeff);
    bz_[L - 1].assign(1, 0.0);
    size_t offset = grad.size();
    for (int l = L - 1; l >= 0; --l) {
        const Mat& W = net_->W_[l];
        offset -= static_cast<size_t>(W.rows) * (W.cols + 1);
        double* gW = grad.data() + offset;
        double* gb = gW + static_cast<size_t>(W.rows) * W.cols;
        // s_l = W_l t_l and z_l = W_l a_l + b_l
        for (int i = 0; i < W.rows; ++i) {
            const double bsi = bs_[l][i], bzi = bz_[l][i];
            double* row = gW + static_cast<size_t>(i) * W.cols;
            const double* al = a_[l].data();
            const double* tl = t_[l].data();
            for (int j = 0; j < W.cols; ++j) row[j] += bsi * tl[j] + bzi * al[j];
            gb[i] += bzi;
        }
        if (l > 0) {
            matTvec(W, bs_[l], bt_[l]);
            matTvec(W, bz_[l], ba_[l]);
            // a_l = phi(z_{l-1}), t_l = phi'(z_{l-1}) * s_{l-1}
            for (int i = 0; i < W.cols; ++i) {
                const double av = a_[l][i];
                const double d1 = dphi(act, av);
                bz_[l - 1][i] = d1 * ba_[l][i] + ddphi(act, av) * s_[l - 1][i] * bt_[l][i];
                bs_[l - 1][i] = d1 * bt_[l][i];
            }
        }
    }
}

// ---------------------------------------------------------------------------

GrowthConstants growth_constants(const FeedForwardNet& net) {
    const Activation act = net.activation();
    if (act != Activation::Sigmoid && act != Activation::Tanh) throw UnsupportedActivation();
    const int L = net.layer_count();
    GrowthConstants gc;
    // hidden activations lie in (0,1) resp. (-1,1): |U| <= sum |W_L| + |b_L|
    double row = 0.0;
    for (double v : net.weight(L - 1).a) row += std::abs(v);
    row += std::abs(net.bias(L - 1)[0]);
    gc.A = row * row;
    gc.B = 0.0;
    const double slope = act == Activation::Sigmoid ? 0.25 : 1.0;
    double prod = 1.0;
    for (int l = 0; l < L; ++l) prod *= frobenius_norm(net.weight(l));
    for (int l = 0; l + 1 < L; ++l) prod *= slope;
    gc.C = prod * prod;
    return gc;
}

FeedForwardNet init_net(std::vector<int> dims, Activation hidden, Rng& rng) {
    FeedForwardNet net(std::move(dims), hidden);
    for (int l = 0; l < net.layer_count(); ++l) {
        Mat& W = net.weight(l);
        const double r = std::sqrt(6.0 / (W.cols + W.rows));
        for (double& v : W.a) v = rng.uniform(-r, r);
    }
    return net;
}

void NetFamily::to_flat(std::span<double> out) const {
    out[0] = y0;
    const size_t per = params_per_net();
    for (size_t n = 0; n < nets.size(); ++n) nets[n].to_flat(out.subspan(1 + n * per, per));
}

void NetFamily::from_flat(std::span<const double> in) {
    y0 = in[0];
    const size_t per = params_per_net();
    for (size_t n = 0; n < nets.size(); ++n) nets[n].from_flat(in.subspan(1 + n * per, per));
}

NetFamily init_family(int steps, std::vector<int> dims, Activation hidden, uint64_t seed) {
    NetFamily family;
    family.nets.reserve(steps);
    for (int n = 0; n < steps; ++n) {
        Rng rng = Rng::child(seed, {0x6e6574u, static_cast<uint64_t>(n)});
        family.nets.push_back(init_net(dims, hidden, rng));
    }
    family.y0 = 0.0;
    return family;
}

void save_checkpoint(const std::string& path, const NetFamily& family, uint64_t seed) {
    nlohmann::json header;
    header["format"] = "jbsde-checkpoint-v1";
    header["layer_dims"] = family.nets.empty() ? std::vector<int>{} : family.nets.front().dims();
    header["activation"] =
        (!family.nets.empty() && family.nets.front().activation() == Activation::Tanh) ? "tanh"
                                                                                       : "sigmoid";
    header["nets"] = family.nets.size();
    header["seed"] = seed;
    header["param_count"] = family.params_per_net();
    header["grouped_param_count"] =
        family.nets.empty() ? 0 : family.nets.front().grouped_param_count();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw JbsdeError("cannot write checkpoint: " + path);
    out << header.dump() << '\n';
    std::vector<double> flat(family.total_params());
    family.to_flat(flat);
    out.write(reinterpret_cast<const char*>(flat.data()),
              static_cast<std::streamsize>(flat.size() * sizeof(double)));
}

NetFamily load_checkpoint(const std::string& path, uint64_t* seed_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw JbsdeError("cannot read checkpoint: " + path);
    std::string line;
    std::getline(in, line);
    const nlohmann::json header = nlohmann::json::parse(line);
    if (header.at("format") != "jbsde-checkpoint-v1")
        throw JbsdeError("unknown checkpoint format in " + path);
    const std::vector<int> dims = header.at("layer_dims").get<std::vector<int>>();
    const Activation act =
        header.at("activation") == "tanh" ? Activation::Tanh : Activation::Sigmoid;
    const size_t nnets = header.at("nets").get<size_t>();
    if (seed_out) *seed_out = header.at("seed").get<uint64_t>();

    NetFamily family;
    family.nets.assign(nnets, FeedForwardNet(dims, act));
    std::vector<double> flat(family.total_params());
    in.read(reinterpret_cast<char*>(flat.data()),
            static_cast<std::streamsize>(flat.size() * sizeof(double)));
    if (static_cast<size_t>(in.gcount()) != flat.size() * sizeof(double))
        throw JbsdeError("checkpoint truncated: " + path);
    family.from_flat(flat);
    return family;
}

}  // namespace jbsde::nets
