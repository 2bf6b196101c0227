#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fedsel/dataset.hpp"
#include "fedsel/rng.hpp"

namespace fedsel {

// Row-major dense matrix; biases are n x 1.
struct Mat {
    int rows = 0, cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(size_t(r) * size_t(c), 0.0) {}
    double& operator()(int r, int c) { return a[size_t(r) * size_t(cols) + size_t(c)]; }
    double operator()(int r, int c) const { return a[size_t(r) * size_t(cols) + size_t(c)]; }
    double* row(int r) { return a.data() + size_t(r) * size_t(cols); }
    const double* row(int r) const { return a.data() + size_t(r) * size_t(cols); }
};

// Scoring channels {ID, T, V}; the attention softmax runs over these three.
inline constexpr int kChannels = 3;

struct HyperParams {
    int d = 32;           // embedding dim
    int factors = 4;      // F; must divide d
    int d_text = 64;      // raw text feature dim
    int d_visual = 64;
    int h_text = 64;      // modality MLP hidden dims
    int h_visual = 64;
    int h_attn = 32;
    int k_neg = 4;
    double margin = 1.0;
    double lambda_dcor = 0.01;
    double weight_decay = 1e-5;
    double lr = 1e-3;
    double dropout = 0.2;
    int epochs_local = 2;
    int batch_size = 64;

    int d_f() const { return d / factors; }
    void validate() const;
};

struct ModelParams {
    Mat user_emb;  // M x d
    Mat item_emb;  // N x d
    Mat wt1, bt1, wt2, bt2;  // text MLP
    Mat wv1, bv1, wv2, bv2;  // visual MLP
    Mat a1, b1, a2, b2;      // attention: H_a x 4d_f, H_a, C x H_a, C

    static ModelParams init(int num_users, int num_items, const HyperParams& hyper,
                            uint64_t seed);
    static ModelParams zeros_like(const ModelParams& other);

    // Fixed tensor order shared by flatten, checkpoints, and the optimizer.
    void for_each(const std::function<void(const char*, Mat&)>& fn);
    void for_each(const std::function<void(const char*, const Mat&)>& fn) const;

    size_t num_params() const;
    std::vector<double> flatten() const;
    void add_scaled(const ModelParams& other, double scale);  // this += scale * other
    bool same_shape(const ModelParams& other) const;
};

struct LocalUpdate {
    ModelParams delta;
    size_t sample_count = 0;            // |B_i|
    std::vector<double> sample_losses;  // per-sample ranking loss, final epoch
    double work_units = 0.0;            // sample-epochs actually scheduled
};

struct BatchSample {
    int user;
    int pos_item;
    std::vector<int> neg_items;
};

struct LossResult {
    double loss = 0.0;
    ModelParams grads;
    std::vector<double> sample_losses;  // ranking loss per batch sample
};

// --- elementwise pieces -----------------------------------------------------

inline constexpr double kLeakySlope = 0.2;

double gelu(double z);        // exact erf form
double gelu_grad(double z);
inline double lrelu(double z) { return z >= 0.0 ? z : kLeakySlope * z; }
inline double lrelu_grad(double z) { return z >= 0.0 ? 1.0 : kLeakySlope; }

// --- spec operations --------------------------------------------------------

// Two-layer LeakyReLU MLP; dropout (inverted scaling) on the hidden layer
// during training.
std::vector<double> project_modality(const std::vector<double>& raw, const Mat& w1,
                                     const Mat& b1, const Mat& w2, const Mat& b2,
                                     double dropout, RngStream& rng, bool training);

// Contiguous equal blocks of the embedding.
std::vector<std::vector<double>> factorize(const std::vector<double>& embedding, int factors);

// Softmax(A2 tanh(A1 h + b1) + b2)
std::vector<double> attention_weights(const std::vector<double>& h, const Mat& a1,
                                      const Mat& b1, const Mat& a2, const Mat& b2);

// sum_s alpha_s * GELU(<p, e_s>) over channels {ID, T, V}
double factor_score(const std::vector<double>& p, const std::vector<double>& v,
                    const std::vector<double>& t, const std::vector<double>& x,
                    const std::vector<double>& alpha);

// Evaluation-mode score for one user/item pair.
double predict(int user, int item, const ModelParams& params, const ModalityBundle& features,
               const HyperParams& hyper);

// (1/K) sum_k max(0, margin - (s_pos - s_neg_k))
double ranking_loss(double s_pos, const std::vector<double>& s_negs, double margin);

// Sample distance correlation of two row-sample blocks; 0 for constant blocks.
double distance_correlation(const std::vector<std::vector<double>>& x,
                            const std::vector<std::vector<double>>& y);

// Ranking loss averaged over the batch plus the distance-correlation penalty,
// with analytic gradients for every parameter tensor.
LossResult total_loss(const std::vector<BatchSample>& batch, const ModelParams& params,
                      const ModalityBundle& features, const HyperParams& hyper,
                      RngStream& rng, bool training);

struct AdamWState {
    ModelParams m, v;
    long step = 0;

    static AdamWState zeros_like(const ModelParams& params);
};

// Decoupled decay applied before the bias-corrected adaptive update.
void adamw_step(ModelParams& params, const ModelParams& grads, AdamWState& state, double lr,
                double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

// Local training: copies the global model, runs epochs of mini-batch AdamW
// over the client's train positives, returns delta = local - global.
// max_samples_per_epoch == 0 means the full client dataset every epoch.
LocalUpdate train_local(const ModelParams& global, const std::vector<Interaction>& data,
                        const ModalityBundle& features, const HyperParams& hyper,
                        RngStream& rng, int num_items, size_t max_samples_per_epoch = 0);

// --- checkpoints ------------------------------------------------------------

// JSON shape manifest followed by little-endian float32 payload.
std::vector<uint8_t> serialize_checkpoint(const ModelParams& params);
void save_checkpoint(const std::string& path, const ModelParams& params);
size_t checkpoint_size_bytes(const ModelParams& params);

// --- fast batched evaluation ------------------------------------------------

// Eval-mode scorer caching per-item projections and attention partial
// products; orders of magnitude cheaper than predict() in full-ranking loops.
class Scorer {
public:
    Scorer(const ModelParams& params, const ModalityBundle& features,
           const HyperParams& hyper);

    void prepare_user(int user);
    double score_prepared(int item) const;
    double score(int user, int item);

private:
    const ModelParams& params_;
    const HyperParams& hyper_;
    int d_f_;
    // per item, per factor: channel blocks and A1-partial (H_a)
    std::vector<double> item_blocks_;  // item * F * 3 * d_f
    std::vector<double> item_pre_;     // item * F * H_a
    std::vector<double> user_pre_;     // F * H_a for the prepared user
    int prepared_user_ = -1;
};

}  // namespace fedsel
