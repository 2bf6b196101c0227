#include "fedsel/recmodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace fedsel {

void HyperParams::validate() const {
    if (d < 1 || factors < 1 || d % factors != 0)
        throw std::invalid_argument("factor count must divide embedding dim");
    if (d_text < 1 || d_visual < 1 || h_text < 1 || h_visual < 1 || h_attn < 1)
        throw std::invalid_argument("dims must be >= 1");
    if (k_neg < 0) throw std::invalid_argument("k_neg must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout in [0,1)");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
    if (weight_decay < 0.0 || lambda_dcor < 0.0)
        throw std::invalid_argument("decay/regularizer weights must be >= 0");
    if (epochs_local < 0 || batch_size < 1) throw std::invalid_argument("bad schedule");
}

double gelu(double z) { return z * 0.5 * (1.0 + std::erf(z / std::sqrt(2.0))); }

double gelu_grad(double z) {
    const double phi = std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846);
    const double Phi = 0.5 * (1.0 + std::erf(z / std::sqrt(2.0)));
    return Phi + z * phi;
}

// --- ModelParams -------------------------------------------------------------

ModelParams ModelParams::init(int num_users, int num_items, const HyperParams& hy,
                              uint64_t seed) {
    hy.validate();
    ModelParams p;
    p.user_emb = Mat(num_users, hy.d);
    p.item_emb = Mat(num_items, hy.d);
    p.wt1 = Mat(hy.h_text, hy.d_text);
    p.bt1 = Mat(hy.h_text, 1);
    p.wt2 = Mat(hy.d, hy.h_text);
    p.bt2 = Mat(hy.d, 1);
    p.wv1 = Mat(hy.h_visual, hy.d_visual);
    p.bv1 = Mat(hy.h_visual, 1);
    p.wv2 = Mat(hy.d, hy.h_visual);
    p.bv2 = Mat(hy.d, 1);
    p.a1 = Mat(hy.h_attn, 4 * hy.d_f());
    p.b1 = Mat(hy.h_attn, 1);
    p.a2 = Mat(kChannels, hy.h_attn);
    p.b2 = Mat(kChannels, 1);

    uint64_t k = 0;
    p.for_each([&](const char* name, Mat& m) {
        auto rng = RngStream::keyed(seed, 0x90de1ULL, k++);
        const std::string n(name);
        if (n == "user_emb" || n == "item_emb") {
            for (auto& x : m.a) x = 0.01 * rng.normal();
        } else if (n[0] == 'b') {
            // biases start at zero
        } else {
            const double bound = std::sqrt(6.0 / double(m.rows + m.cols));
            for (auto& x : m.a) x = rng.uniform(-bound, bound);
        }
    });
    return p;
}

ModelParams ModelParams::zeros_like(const ModelParams& other) {
    ModelParams p = other;
    p.for_each([](const char*, Mat& m) { std::fill(m.a.begin(), m.a.end(), 0.0); });
    return p;
}

void ModelParams::for_each(const std::function<void(const char*, Mat&)>& fn) {
    fn("user_emb", user_emb);
    fn("item_emb", item_emb);
    fn("wt1", wt1); fn("bt1", bt1); fn("wt2", wt2); fn("bt2", bt2);
    fn("wv1", wv1); fn("bv1", bv1); fn("wv2", wv2); fn("bv2", bv2);
    fn("a1", a1); fn("b1", b1); fn("a2", a2); fn("b2", b2);
}

void ModelParams::for_each(const std::function<void(const char*, const Mat&)>& fn) const {
    const_cast<ModelParams*>(this)->for_each(
        [&](const char* n, Mat& m) { fn(n, m); });
}

size_t ModelParams::num_params() const {
    size_t n = 0;
    for_each([&](const char*, const Mat& m) { n += m.a.size(); });
    return n;
}

std::vector<double> ModelParams::flatten() const {
    std::vector<double> out;
    out.reserve(num_params());
    for_each([&](const char*, const Mat& m) { out.insert(out.end(), m.a.begin(), m.a.end()); });
    return out;
}

bool ModelParams::same_shape(const ModelParams& o) const {
    bool ok = true;
    std::vector<std::pair<int, int>> mine, theirs;
    for_each([&](const char*, const Mat& m) { mine.push_back({m.rows, m.cols}); });
    o.for_each([&](const char*, const Mat& m) { theirs.push_back({m.rows, m.cols}); });
    ok = mine == theirs;
    return ok;
}

void ModelParams::add_scaled(const ModelParams& other, double scale) {
    if (!same_shape(other)) throw std::invalid_argument("parameter shape mismatch");
    std::vector<const Mat*> src;
    other.for_each([&](const char*, const Mat& m) { src.push_back(&m); });
    size_t i = 0;
    for_each([&](const char*, Mat& m) {
        const Mat& s = *src[i++];
        for (size_t j = 0; j < m.a.size(); ++j) m.a[j] += scale * s.a[j];
    });
}

// --- basic ops ----------------------------------------------------------------

static void matvec(const Mat& w, const double* x, double* out) {
    for (int r = 0; r < w.rows; ++r) {
        const double* row = w.row(r);
        double s = 0.0;
        for (int c = 0; c < w.cols; ++c) s += row[c] * x[c];
        out[r] = s;
    }
}

// out[c] += w^T y, i.e. out = W^T y accumulated
static void matvec_t_acc(const Mat& w, const double* y, double* out) {
    for (int r = 0; r < w.rows; ++r) {
        const double* row = w.row(r);
        const double yr = y[r];
        for (int c = 0; c < w.cols; ++c) out[c] += row[c] * yr;
    }
}

static void outer_acc(Mat& gw, const double* y, const double* x) {
    for (int r = 0; r < gw.rows; ++r) {
        double* row = gw.row(r);
        const double yr = y[r];
        for (int c = 0; c < gw.cols; ++c) row[c] += yr * x[c];
    }
}

struct MlpCache {
    std::vector<double> pre1, hid, mask, pre2, out;
    const std::vector<double>* raw = nullptr;
};

static void mlp_forward(const std::vector<double>& raw, const Mat& w1, const Mat& b1,
                        const Mat& w2, const Mat& b2, double dropout, RngStream* rng,
                        bool training, MlpCache& c) {
    if (int(raw.size()) != w1.cols) throw std::invalid_argument("modality dim mismatch");
    if (w2.cols != w1.rows || b1.rows != w1.rows || b2.rows != w2.rows)
        throw std::invalid_argument("mlp shape mismatch");
    c.raw = &raw;
    c.pre1.assign(size_t(w1.rows), 0.0);
    matvec(w1, raw.data(), c.pre1.data());
    for (int r = 0; r < w1.rows; ++r) c.pre1[size_t(r)] += b1.a[size_t(r)];
    c.hid.resize(size_t(w1.rows));
    for (int r = 0; r < w1.rows; ++r) c.hid[size_t(r)] = lrelu(c.pre1[size_t(r)]);
    c.mask.clear();
    if (training && dropout > 0.0) {
        if (!rng) throw std::invalid_argument("dropout requires an rng stream");
        c.mask.resize(c.hid.size());
        const double keep = 1.0 - dropout;
        for (auto& m : c.mask) m = rng->uniform() < keep ? 1.0 / keep : 0.0;
        for (size_t i = 0; i < c.hid.size(); ++i) c.hid[i] *= c.mask[i];
    }
    c.pre2.assign(size_t(w2.rows), 0.0);
    matvec(w2, c.hid.data(), c.pre2.data());
    for (int r = 0; r < w2.rows; ++r) c.pre2[size_t(r)] += b2.a[size_t(r)];
    c.out.resize(size_t(w2.rows));
    for (int r = 0; r < w2.rows; ++r) c.out[size_t(r)] = lrelu(c.pre2[size_t(r)]);
}

static void mlp_backward(const MlpCache& c, const Mat& w2, const std::vector<double>& dout,
                         Mat& gw1, Mat& gb1, Mat& gw2, Mat& gb2) {
    std::vector<double> dpre2(dout.size());
    for (size_t r = 0; r < dout.size(); ++r) dpre2[r] = dout[r] * lrelu_grad(c.pre2[r]);
    outer_acc(gw2, dpre2.data(), c.hid.data());
    for (size_t r = 0; r < dpre2.size(); ++r) gb2.a[r] += dpre2[r];
    std::vector<double> dhid(c.hid.size(), 0.0);
    matvec_t_acc(w2, dpre2.data(), dhid.data());
    if (!c.mask.empty())
        for (size_t i = 0; i < dhid.size(); ++i) dhid[i] *= c.mask[i];
    std::vector<double> dpre1(dhid.size());
    for (size_t r = 0; r < dhid.size(); ++r) dpre1[r] = dhid[r] * lrelu_grad(c.pre1[r]);
    outer_acc(gw1, dpre1.data(), c.raw->data());
    for (size_t r = 0; r < dpre1.size(); ++r) gb1.a[r] += dpre1[r];
}

std::vector<double> project_modality(const std::vector<double>& raw, const Mat& w1,
                                     const Mat& b1, const Mat& w2, const Mat& b2,
                                     double dropout, RngStream& rng, bool training) {
    MlpCache c;
    mlp_forward(raw, w1, b1, w2, b2, dropout, &rng, training, c);
    return c.out;
}

std::vector<std::vector<double>> factorize(const std::vector<double>& embedding, int factors) {
    if (factors < 1 || embedding.size() % size_t(factors) != 0)
        throw std::invalid_argument("factor count must divide embedding dim");
    const size_t df = embedding.size() / size_t(factors);
    std::vector<std::vector<double>> blocks(static_cast<size_t>(factors));
    for (int f = 0; f < factors; ++f)
        blocks[size_t(f)].assign(embedding.begin() + long(size_t(f) * df),
                                 embedding.begin() + long(size_t(f + 1) * df));
    return blocks;
}

static void softmax_inplace(double* q, int n) {
    double mx = q[0];
    for (int i = 1; i < n; ++i) mx = std::max(mx, q[i]);
    double sum = 0.0;
    for (int i = 0; i < n; ++i) { q[i] = std::exp(q[i] - mx); sum += q[i]; }
    for (int i = 0; i < n; ++i) q[i] /= sum;
}

std::vector<double> attention_weights(const std::vector<double>& h, const Mat& a1,
                                      const Mat& b1, const Mat& a2, const Mat& b2) {
    if (int(h.size()) != a1.cols) throw std::invalid_argument("attention input dim mismatch");
    for (double v : h)
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite attention input");
    std::vector<double> u(size_t(a1.rows));
    matvec(a1, h.data(), u.data());
    for (int r = 0; r < a1.rows; ++r) u[size_t(r)] = std::tanh(u[size_t(r)] + b1.a[size_t(r)]);
    std::vector<double> q(size_t(a2.rows));
    matvec(a2, u.data(), q.data());
    for (int r = 0; r < a2.rows; ++r) q[size_t(r)] += b2.a[size_t(r)];
    softmax_inplace(q.data(), a2.rows);
    return q;
}

static double dot(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double factor_score(const std::vector<double>& p, const std::vector<double>& v,
                    const std::vector<double>& t, const std::vector<double>& x,
                    const std::vector<double>& alpha) {
    if (alpha.size() != kChannels) throw std::invalid_argument("expected one weight per channel");
    const int n = int(p.size());
    if (v.size() != p.size() || t.size() != p.size() || x.size() != p.size())
        throw std::invalid_argument("factor block dim mismatch");
    return alpha[0] * gelu(dot(p.data(), v.data(), n)) +
           alpha[1] * gelu(dot(p.data(), t.data(), n)) +
           alpha[2] * gelu(dot(p.data(), x.data(), n));
}

double ranking_loss(double s_pos, const std::vector<double>& s_negs, double margin) {
    if (s_negs.empty()) return 0.0;
    double sum = 0.0;
    for (double s : s_negs) sum += std::max(0.0, margin - (s_pos - s));
    return sum / double(s_negs.size());
}

// --- score forward/backward ---------------------------------------------------

namespace {

struct ScoreCache {
    // flattened per factor: h (4 d_f), u1 (H_a), alpha (3), z (3)
    std::vector<double> h, u1, alpha, z;
};

double score_forward(const double* p_row, const double* v_row, const double* t_row,
                     const double* x_row, const ModelParams& pa, const HyperParams& hy,
                     ScoreCache& c) {
    const int F = hy.factors, df = hy.d_f(), Ha = hy.h_attn;
    c.h.resize(size_t(F) * size_t(4 * df));
    c.u1.resize(size_t(F) * size_t(Ha));
    c.alpha.resize(size_t(F) * kChannels);
    c.z.resize(size_t(F) * kChannels);
    double score = 0.0;
    for (int f = 0; f < F; ++f) {
        double* h = c.h.data() + size_t(f) * size_t(4 * df);
        const double* p = p_row + f * df;
        const double* v = v_row + f * df;
        const double* t = t_row + f * df;
        const double* x = x_row + f * df;
        std::memcpy(h, p, size_t(df) * sizeof(double));
        std::memcpy(h + df, v, size_t(df) * sizeof(double));
        std::memcpy(h + 2 * df, t, size_t(df) * sizeof(double));
        std::memcpy(h + 3 * df, x, size_t(df) * sizeof(double));
        double* u1 = c.u1.data() + size_t(f) * size_t(Ha);
        matvec(pa.a1, h, u1);
        for (int r = 0; r < Ha; ++r) u1[r] = std::tanh(u1[r] + pa.b1.a[size_t(r)]);
        double* al = c.alpha.data() + size_t(f) * kChannels;
        matvec(pa.a2, u1, al);
        for (int r = 0; r < kChannels; ++r) al[r] += pa.b2.a[size_t(r)];
        softmax_inplace(al, kChannels);
        double* z = c.z.data() + size_t(f) * kChannels;
        z[0] = dot(p, v, df);
        z[1] = dot(p, t, df);
        z[2] = dot(p, x, df);
        for (int s = 0; s < kChannels; ++s) score += al[s] * gelu(z[s]);
    }
    return score;
}

// Accumulates parameter grads; dp/dv go straight into embedding grad rows,
// dt/dx into caller-provided buffers (projection backprop happens later).
void score_backward(double ds, const ScoreCache& c, const ModelParams& pa,
                    const HyperParams& hy, ModelParams& g, double* dp_row, double* dv_row,
                    double* dt_row, double* dx_row) {
    const int F = hy.factors, df = hy.d_f(), Ha = hy.h_attn;
    std::vector<double> dq(kChannels), du1(static_cast<size_t>(Ha)),
        da1(static_cast<size_t>(Ha)), dh(size_t(4 * df));
    for (int f = 0; f < F; ++f) {
        const double* h = c.h.data() + size_t(f) * size_t(4 * df);
        const double* u1 = c.u1.data() + size_t(f) * size_t(Ha);
        const double* al = c.alpha.data() + size_t(f) * kChannels;
        const double* z = c.z.data() + size_t(f) * kChannels;
        const double* p = h;
        const double* v = h + df;
        const double* t = h + 2 * df;
        const double* x = h + 3 * df;

        double gz[kChannels], dalpha[kChannels], dz[kChannels];
        for (int s = 0; s < kChannels; ++s) {
            gz[s] = gelu(z[s]);
            dalpha[s] = ds * gz[s];
            dz[s] = ds * al[s] * gelu_grad(z[s]);
        }
        // softmax backward
        double inner = 0.0;
        for (int s = 0; s < kChannels; ++s) inner += al[s] * dalpha[s];
        for (int s = 0; s < kChannels; ++s) dq[size_t(s)] = al[s] * (dalpha[s] - inner);
        // attention second layer
        outer_acc(g.a2, dq.data(), u1);
        for (int s = 0; s < kChannels; ++s) g.b2.a[size_t(s)] += dq[size_t(s)];
        std::fill(du1.begin(), du1.end(), 0.0);
        matvec_t_acc(pa.a2, dq.data(), du1.data());
        // tanh backward
        for (int r = 0; r < Ha; ++r) da1[size_t(r)] = du1[size_t(r)] * (1.0 - u1[r] * u1[r]);
        outer_acc(g.a1, da1.data(), h);
        for (int r = 0; r < Ha; ++r) g.b1.a[size_t(r)] += da1[size_t(r)];
        std::fill(dh.begin(), dh.end(), 0.0);
        matvec_t_acc(pa.a1, da1.data(), dh.data());
        // dot products and concatenation
        double* dp = dp_row + f * df;
        double* dv = dv_row + f * df;
        double* dt = dt_row + f * df;
        double* dx = dx_row + f * df;
        for (int i = 0; i < df; ++i) {
            dp[i] += dz[0] * v[i] + dz[1] * t[i] + dz[2] * x[i] + dh[size_t(i)];
            dv[i] += dz[0] * p[i] + dh[size_t(df + i)];
            dt[i] += dz[1] * p[i] + dh[size_t(2 * df + i)];
            dx[i] += dz[2] * p[i] + dh[size_t(3 * df + i)];
        }
    }
}

}  // namespace

double predict(int user, int item, const ModelParams& params, const ModalityBundle& features,
               const HyperParams& hyper) {
    hyper.validate();
    RngStream unused(0);
    auto tproj = project_modality(features.text_features[size_t(item)], params.wt1, params.bt1,
                                  params.wt2, params.bt2, 0.0, unused, false);
    auto xproj = project_modality(features.visual_features[size_t(item)], params.wv1,
                                  params.bv1, params.wv2, params.bv2, 0.0, unused, false);
    ScoreCache c;
    return score_forward(params.user_emb.row(user), params.item_emb.row(item), tproj.data(),
                         xproj.data(), params, hyper, c);
}

// --- distance correlation -------------------------------------------------------

namespace {

// Doubly-centered pairwise-distance machinery shared by the plain statistic
// and the gradient path.
struct DcorBlock {
    int n = 0;
    std::vector<double> dist;      // n*n raw distances
    std::vector<double> centered;  // n*n doubly centered
};

void dcor_prepare(const std::vector<const double*>& rows, int dim, DcorBlock& b) {
    const int n = int(rows.size());
    b.n = n;
    b.dist.assign(size_t(n) * size_t(n), 0.0);
    for (int k = 0; k < n; ++k)
        for (int l = k + 1; l < n; ++l) {
            double s = 0.0;
            for (int j = 0; j < dim; ++j) {
                const double d = rows[size_t(k)][j] - rows[size_t(l)][j];
                s += d * d;
            }
            const double dd = std::sqrt(s);
            b.dist[size_t(k) * size_t(n) + size_t(l)] = dd;
            b.dist[size_t(l) * size_t(n) + size_t(k)] = dd;
        }
    std::vector<double> rowmean(size_t(n), 0.0);
    double grand = 0.0;
    for (int k = 0; k < n; ++k) {
        double s = 0.0;
        for (int l = 0; l < n; ++l) s += b.dist[size_t(k) * size_t(n) + size_t(l)];
        rowmean[size_t(k)] = s / double(n);
        grand += s;
    }
    grand /= double(n) * double(n);
    b.centered.resize(size_t(n) * size_t(n));
    for (int k = 0; k < n; ++k)
        for (int l = 0; l < n; ++l)
            b.centered[size_t(k) * size_t(n) + size_t(l)] =
                b.dist[size_t(k) * size_t(n) + size_t(l)] - rowmean[size_t(k)] -
                rowmean[size_t(l)] + grand;
}

double mean_prod(const std::vector<double>& a, const std::vector<double>& b, int n) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s / (double(n) * double(n));
}

// Returns dCor and, when grads are requested, accumulates scale * dR/dX into
// gx (and gy), laid out as n rows of `dim` doubles.
double dcor_core(const std::vector<const double*>& xr, int dx,
                 const std::vector<const double*>& yr, int dy, double scale, double* gx,
                 double* gy) {
    const int n = int(xr.size());
    if (n < 2) throw std::invalid_argument("distance correlation needs n >= 2");
    if (int(yr.size()) != n) throw std::invalid_argument("sample count mismatch");
    DcorBlock A, B;
    dcor_prepare(xr, dx, A);
    dcor_prepare(yr, dy, B);
    const double v2 = std::max(0.0, mean_prod(A.centered, B.centered, n));
    const double vx = mean_prod(A.centered, A.centered, n);
    const double vy = mean_prod(B.centered, B.centered, n);
    if (vx <= 1e-24 || vy <= 1e-24) return 0.0;
    const double denom = std::sqrt(std::sqrt(vx * vy));
    const double r = std::sqrt(v2) / denom;
    if (!gx || v2 <= 1e-20) return r;

    const double dr_dv2 = 0.5 / (std::sqrt(v2) * denom);
    const double dr_dvx = -0.25 * r / vx;
    const double dr_dvy = -0.25 * r / vy;
    const double inv_n2 = 1.0 / (double(n) * double(n));
    // G_kl = dR/d a_kl, H_kl = dR/d b_kl
    for (int k = 0; k < n; ++k) {
        for (int l = 0; l < n; ++l) {
            if (l == k) continue;
            const size_t kl = size_t(k) * size_t(n) + size_t(l);
            const double akl = A.dist[kl];
            const double bkl = B.dist[kl];
            if (akl > 0.0) {
                const double gkl =
                    (dr_dv2 * B.centered[kl] + dr_dvx * 2.0 * A.centered[kl]) * inv_n2;
                const double w = scale * 2.0 * gkl / akl;
                double* gk = gx + size_t(k) * size_t(dx);
                for (int j = 0; j < dx; ++j) gk[j] += w * (xr[size_t(k)][j] - xr[size_t(l)][j]);
            }
            if (bkl > 0.0) {
                const double hkl =
                    (dr_dv2 * A.centered[kl] + dr_dvy * 2.0 * B.centered[kl]) * inv_n2;
                const double w = scale * 2.0 * hkl / bkl;
                double* gk = gy + size_t(k) * size_t(dy);
                for (int j = 0; j < dy; ++j) gk[j] += w * (yr[size_t(k)][j] - yr[size_t(l)][j]);
            }
        }
    }
    return r;
}

}  // namespace

double distance_correlation(const std::vector<std::vector<double>>& x,
                            const std::vector<std::vector<double>>& y) {
    if (x.size() < 2) throw std::invalid_argument("distance correlation needs n >= 2");
    std::vector<const double*> xr(x.size()), yr(y.size());
    for (size_t i = 0; i < x.size(); ++i) xr[i] = x[i].data();
    for (size_t i = 0; i < y.size(); ++i) yr[i] = y[i].data();
    return dcor_core(xr, int(x[0].size()), yr, int(y[0].size()), 0.0, nullptr, nullptr);
}

// --- total loss ------------------------------------------------------------------

LossResult total_loss(const std::vector<BatchSample>& batch, const ModelParams& params,
                      const ModalityBundle& features, const HyperParams& hy, RngStream& rng,
                      bool training) {
    hy.validate();
    if (batch.empty()) throw std::invalid_argument("empty batch");
    const int n = int(batch.size());
    const int d = hy.d, F = hy.factors, df = hy.d_f();
    const double dropout = training ? hy.dropout : 0.0;

    LossResult res;
    res.grads = ModelParams::zeros_like(params);
    res.sample_losses.assign(size_t(n), 0.0);
    ModelParams& g = res.grads;

    std::vector<MlpCache> tpos(static_cast<size_t>(n)), xpos(static_cast<size_t>(n));
    std::vector<ScoreCache> spos(static_cast<size_t>(n));
    std::vector<std::vector<double>> dt_pos(size_t(n), std::vector<double>(size_t(d), 0.0));
    std::vector<std::vector<double>> dx_pos(size_t(n), std::vector<double>(size_t(d), 0.0));

    double rank_sum = 0.0;
    MlpCache tneg, xneg;
    ScoreCache sneg;
    std::vector<double> dtn(static_cast<size_t>(d)), dxn(static_cast<size_t>(d));
    for (int k = 0; k < n; ++k) {
        const auto& s = batch[size_t(k)];
        mlp_forward(features.text_features[size_t(s.pos_item)], params.wt1, params.bt1,
                    params.wt2, params.bt2, dropout, &rng, training, tpos[size_t(k)]);
        mlp_forward(features.visual_features[size_t(s.pos_item)], params.wv1, params.bv1,
                    params.wv2, params.bv2, dropout, &rng, training, xpos[size_t(k)]);
        const double s_pos =
            score_forward(params.user_emb.row(s.user), params.item_emb.row(s.pos_item),
                          tpos[size_t(k)].out.data(), xpos[size_t(k)].out.data(), params, hy,
                          spos[size_t(k)]);
        double pos_mult = 0.0, loss_k = 0.0;
        const int K = int(s.neg_items.size());
        for (int j = 0; j < K; ++j) {
            const int neg = s.neg_items[size_t(j)];
            mlp_forward(features.text_features[size_t(neg)], params.wt1, params.bt1, params.wt2,
                        params.bt2, dropout, &rng, training, tneg);
            mlp_forward(features.visual_features[size_t(neg)], params.wv1, params.bv1,
                        params.wv2, params.bv2, dropout, &rng, training, xneg);
            const double s_neg =
                score_forward(params.user_emb.row(s.user), params.item_emb.row(neg),
                              tneg.out.data(), xneg.out.data(), params, hy, sneg);
            const double viol = hy.margin - (s_pos - s_neg);
            if (viol > 0.0) {
                loss_k += viol / double(K);
                const double w = 1.0 / (double(K) * double(n));
                std::fill(dtn.begin(), dtn.end(), 0.0);
                std::fill(dxn.begin(), dxn.end(), 0.0);
                score_backward(w, sneg, params, hy, g, g.user_emb.row(s.user),
                               g.item_emb.row(neg), dtn.data(), dxn.data());
                mlp_backward(tneg, params.wt2, dtn, g.wt1, g.bt1, g.wt2, g.bt2);
                mlp_backward(xneg, params.wv2, dxn, g.wv1, g.bv1, g.wv2, g.bv2);
                pos_mult -= w;
            }
        }
        rank_sum += loss_k;
        res.sample_losses[size_t(k)] = loss_k;
        if (pos_mult != 0.0)
            score_backward(pos_mult, spos[size_t(k)], params, hy, g, g.user_emb.row(s.user),
                           g.item_emb.row(s.pos_item), dt_pos[size_t(k)].data(),
                           dx_pos[size_t(k)].data());
    }
    res.loss = rank_sum / double(n);

    // Disentanglement penalty over factor-block pairs, per modality stream,
    // with the batch as the sample.
    if (hy.lambda_dcor > 0.0 && n >= 2 && F >= 2) {
        // stream row pointers into persistent storage per sample
        std::vector<std::vector<const double*>> stream_rows(4,
                                                            std::vector<const double*>(size_t(n)));
        for (int k = 0; k < n; ++k) {
            stream_rows[0][size_t(k)] = params.user_emb.row(batch[size_t(k)].user);
            stream_rows[1][size_t(k)] = params.item_emb.row(batch[size_t(k)].pos_item);
            stream_rows[2][size_t(k)] = tpos[size_t(k)].out.data();
            stream_rows[3][size_t(k)] = xpos[size_t(k)].out.data();
        }
        std::vector<double> gx(size_t(n) * size_t(df)), gy(size_t(n) * size_t(df));
        std::vector<const double*> xr(static_cast<size_t>(n)), yr(static_cast<size_t>(n));
        for (int m = 0; m < 4; ++m) {
            for (int f1 = 0; f1 < F; ++f1) {
                for (int f2 = f1 + 1; f2 < F; ++f2) {
                    for (int k = 0; k < n; ++k) {
                        xr[size_t(k)] = stream_rows[size_t(m)][size_t(k)] + f1 * df;
                        yr[size_t(k)] = stream_rows[size_t(m)][size_t(k)] + f2 * df;
                    }
                    std::fill(gx.begin(), gx.end(), 0.0);
                    std::fill(gy.begin(), gy.end(), 0.0);
                    res.loss += hy.lambda_dcor *
                                dcor_core(xr, df, yr, df, hy.lambda_dcor, gx.data(), gy.data());
                    for (int k = 0; k < n; ++k) {
                        double* dst;
                        if (m == 0) dst = g.user_emb.row(batch[size_t(k)].user);
                        else if (m == 1) dst = g.item_emb.row(batch[size_t(k)].pos_item);
                        else if (m == 2) dst = dt_pos[size_t(k)].data();
                        else dst = dx_pos[size_t(k)].data();
                        for (int j = 0; j < df; ++j) {
                            dst[f1 * df + j] += gx[size_t(k) * size_t(df) + size_t(j)];
                            dst[f2 * df + j] += gy[size_t(k) * size_t(df) + size_t(j)];
                        }
                    }
                }
            }
        }
    }

    for (int k = 0; k < n; ++k) {
        mlp_backward(tpos[size_t(k)], params.wt2, dt_pos[size_t(k)], g.wt1, g.bt1, g.wt2,
                     g.bt2);
        mlp_backward(xpos[size_t(k)], params.wv2, dx_pos[size_t(k)], g.wv1, g.bv1, g.wv2,
                     g.bv2);
    }

    if (!std::isfinite(res.loss)) throw std::runtime_error("non-finite loss");
    g.for_each([](const char* name, Mat& m) {
        for (double v : m.a)
            if (!std::isfinite(v))
                throw std::runtime_error(std::string("non-finite gradient in ") + name);
    });
    return res;
}

// --- optimizer -----------------------------------------------------------------

AdamWState AdamWState::zeros_like(const ModelParams& params) {
    AdamWState s;
    s.m = ModelParams::zeros_like(params);
    s.v = ModelParams::zeros_like(params);
    s.step = 0;
    return s;
}

void adamw_step(ModelParams& params, const ModelParams& grads, AdamWState& state, double lr,
                double weight_decay, double beta1, double beta2, double eps) {
    if (!params.same_shape(grads)) throw std::invalid_argument("gradient shape mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(beta2, double(state.step));
    std::vector<const Mat*> gs;
    grads.for_each([&](const char*, const Mat& m) { gs.push_back(&m); });
    std::vector<Mat*> ms, vs;
    state.m.for_each([&](const char*, Mat& m) { ms.push_back(&m); });
    state.v.for_each([&](const char*, Mat& m) { vs.push_back(&m); });
    size_t t = 0;
    params.for_each([&](const char*, Mat& w) {
        const Mat& gm = *gs[t];
        Mat& mm = *ms[t];
        Mat& vm = *vs[t];
        ++t;
        for (size_t i = 0; i < w.a.size(); ++i) {
            w.a[i] *= (1.0 - lr * weight_decay);
            mm.a[i] = beta1 * mm.a[i] + (1.0 - beta1) * gm.a[i];
            vm.a[i] = beta2 * vm.a[i] + (1.0 - beta2) * gm.a[i] * gm.a[i];
            const double mhat = mm.a[i] / bc1;
            const double vhat = vm.a[i] / bc2;
            w.a[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    });
}

// --- local training --------------------------------------------------------------

LocalUpdate train_local(const ModelParams& global, const std::vector<Interaction>& data,
                        const ModalityBundle& features, const HyperParams& hy, RngStream& rng,
                        int num_items, size_t max_samples_per_epoch) {
    hy.validate();
    if (data.empty()) throw std::invalid_argument("empty client dataset");
    ModelParams local = global;
    AdamWState opt = AdamWState::zeros_like(global);

    std::unordered_map<int, std::unordered_set<int>> positives;
    for (const auto& it : data) positives[it.user_id].insert(it.item_id);

    LocalUpdate up;
    up.sample_count = data.size();
    up.work_units = double(data.size()) * double(hy.epochs_local);

    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < hy.epochs_local; ++epoch) {
        rng.shuffle(order.data(), order.size());
        size_t limit = order.size();
        if (max_samples_per_epoch > 0) limit = std::min(limit, max_samples_per_epoch);
        const bool last = (epoch == hy.epochs_local - 1);
        if (last) { up.sample_losses.clear(); up.sample_losses.reserve(limit); }
        for (size_t start = 0; start < limit; start += size_t(hy.batch_size)) {
            const size_t end = std::min(limit, start + size_t(hy.batch_size));
            std::vector<BatchSample> batch;
            batch.reserve(end - start);
            for (size_t i = start; i < end; ++i) {
                const auto& it = data[order[i]];
                BatchSample s;
                s.user = it.user_id;
                s.pos_item = it.item_id;
                s.neg_items =
                    sample_negatives(positives[it.user_id], num_items, hy.k_neg, rng);
                batch.push_back(std::move(s));
            }
            auto lr = total_loss(batch, local, features, hy, rng, true);
            adamw_step(local, lr.grads, opt, hy.lr, hy.weight_decay);
            if (last)
                up.sample_losses.insert(up.sample_losses.end(), lr.sample_losses.begin(),
                                        lr.sample_losses.end());
        }
    }
    up.delta = local;
    up.delta.add_scaled(global, -1.0);
    return up;
}

// --- checkpoints -------------------------------------------------------------------

std::vector<uint8_t> serialize_checkpoint(const ModelParams& params) {
    nlohmann::json manifest;
    manifest["tensors"] = nlohmann::json::array();
    params.for_each([&](const char* name, const Mat& m) {
        manifest["tensors"].push_back({{"name", name}, {"rows", m.rows}, {"cols", m.cols}});
    });
    std::string header = manifest.dump();
    std::vector<uint8_t> out(header.begin(), header.end());
    out.push_back('\0');
    params.for_each([&](const char*, const Mat& m) {
        for (double v : m.a) {
            float f = float(v);
            uint32_t bits;
            std::memcpy(&bits, &f, 4);
            out.push_back(uint8_t(bits & 0xff));
            out.push_back(uint8_t((bits >> 8) & 0xff));
            out.push_back(uint8_t((bits >> 16) & 0xff));
            out.push_back(uint8_t((bits >> 24) & 0xff));
        }
    });
    return out;
}

void save_checkpoint(const std::string& path, const ModelParams& params) {
    auto bytes = serialize_checkpoint(params);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

size_t checkpoint_size_bytes(const ModelParams& params) {
    return serialize_checkpoint(params).size();
}

// --- fast scorer ----------------------------------------------------------------------

Scorer::Scorer(const ModelParams& params, const ModalityBundle& features,
               const HyperParams& hyper)
    : params_(params), hyper_(hyper), d_f_(hyper.d_f()) {
    const int N = params.item_emb.rows, F = hyper.factors, df = d_f_, Ha = hyper.h_attn;
    if (Ha > 256) throw std::invalid_argument("attention width exceeds scorer buffer");
    item_blocks_.assign(size_t(N) * size_t(F) * 3 * size_t(df), 0.0);
    item_pre_.assign(size_t(N) * size_t(F) * size_t(Ha), 0.0);
    RngStream unused(0);
    MlpCache tc, xc;
    for (int i = 0; i < N; ++i) {
        mlp_forward(features.text_features[size_t(i)], params.wt1, params.bt1, params.wt2,
                    params.bt2, 0.0, &unused, false, tc);
        mlp_forward(features.visual_features[size_t(i)], params.wv1, params.bv1, params.wv2,
                    params.bv2, 0.0, &unused, false, xc);
        const double* v = params.item_emb.row(i);
        for (int f = 0; f < F; ++f) {
            double* blocks = item_blocks_.data() +
                             (size_t(i) * size_t(F) + size_t(f)) * 3 * size_t(df);
            std::memcpy(blocks, v + f * df, size_t(df) * sizeof(double));
            std::memcpy(blocks + df, tc.out.data() + f * df, size_t(df) * sizeof(double));
            std::memcpy(blocks + 2 * df, xc.out.data() + f * df, size_t(df) * sizeof(double));
            double* pre = item_pre_.data() + (size_t(i) * size_t(F) + size_t(f)) * size_t(Ha);
            // A1 column blocks: [p | v | t | x]; the item part covers v/t/x.
            for (int r = 0; r < Ha; ++r) {
                const double* row = params.a1.row(r);
                double s = params.b1.a[size_t(r)];
                for (int j = 0; j < df; ++j) {
                    s += row[df + j] * blocks[j];
                    s += row[2 * df + j] * blocks[df + j];
                    s += row[3 * df + j] * blocks[2 * df + j];
                }
                pre[r] = s;
            }
        }
    }
    user_pre_.assign(size_t(hyper.factors) * size_t(hyper.h_attn), 0.0);
}

void Scorer::prepare_user(int user) {
    const int F = hyper_.factors, df = d_f_, Ha = hyper_.h_attn;
    const double* p = params_.user_emb.row(user);
    for (int f = 0; f < F; ++f) {
        double* pre = user_pre_.data() + size_t(f) * size_t(Ha);
        for (int r = 0; r < Ha; ++r) {
            const double* row = params_.a1.row(r);
            double s = 0.0;
            for (int j = 0; j < df; ++j) s += row[j] * p[f * df + j];
            pre[r] = s;
        }
    }
    prepared_user_ = user;
}

double Scorer::score_prepared(int item) const {
    const int F = hyper_.factors, df = d_f_, Ha = hyper_.h_attn;
    const double* p = params_.user_emb.row(prepared_user_);
    double score = 0.0;
    double u1[256];
    double q[kChannels];
    for (int f = 0; f < F; ++f) {
        const double* upre = user_pre_.data() + size_t(f) * size_t(Ha);
        const double* ipre = item_pre_.data() + (size_t(item) * size_t(F) + size_t(f)) * size_t(Ha);
        for (int r = 0; r < Ha; ++r) u1[r] = std::tanh(upre[r] + ipre[r]);
        for (int s = 0; s < kChannels; ++s) {
            const double* row = params_.a2.row(s);
            double acc = params_.b2.a[size_t(s)];
            for (int r = 0; r < Ha; ++r) acc += row[r] * u1[r];
            q[s] = acc;
        }
        softmax_inplace(q, kChannels);
        const double* blocks =
            item_blocks_.data() + (size_t(item) * size_t(F) + size_t(f)) * 3 * size_t(df);
        const double* pf = p + f * df;
        for (int s = 0; s < kChannels; ++s)
            score += q[s] * gelu(dot(pf, blocks + s * df, df));
    }
    return score;
}

double Scorer::score(int user, int item) {
    if (user != prepared_user_) prepare_user(user);
    return score_prepared(item);
}

}  // namespace fedsel
