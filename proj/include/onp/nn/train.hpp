#pragma once

#include <algorithm>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "onp/dataset.hpp"
#include "onp/nn/engine.hpp"

namespace onp::nn {

struct TrainConfig {
    double lr = 0.05;
    double weight_decay = 5e-4;
    double momentum = 0.9;
    int batch_size = 128;
    int epochs = 30;
    std::string lr_schedule = "cosine";
    uint64_t seed = 0;
    std::string log_path;  // optional CSV: epoch, train_loss, train_acc, test_acc

    void validate() const {
        if (lr <= 0 || batch_size <= 0 || epochs < 0 || momentum < 0 || weight_decay < 0)
            throw ConfigError("train config fields must be positive");
        if (lr_schedule != "cosine" && lr_schedule != "constant")
            throw ConfigError("unknown lr schedule: " + lr_schedule);
    }
};

struct EpochStats {
    int epoch;
    double lr, train_loss, train_acc, test_acc;
    uint64_t param_hash;
};

// Mean cross-entropy of logits [N,C] against labels; optional softmax-grad
// output (dlogits = (softmax - onehot) / N).
inline double softmax_cross_entropy(const Tensor& logits, const int* labels, int n,
                                    Tensor* dlogits = nullptr) {
    const int c = logits.dim(1);
    if (dlogits) *dlogits = Tensor({n, c});
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const float* row = logits.ptr() + static_cast<size_t>(i) * c;
        float mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < c; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
        const double lse = mx + std::log(sum);
        total += lse - row[labels[i]];
        if (dlogits) {
            for (int j = 0; j < c; ++j) {
                const double p = std::exp(static_cast<double>(row[j]) - lse);
                dlogits->at(i, j) = static_cast<float>(p / n);
            }
            dlogits->at(i, labels[i]) -= 1.0f / n;
        }
    }
    return total / n;
}

inline double accuracy(const Tensor& logits, const int* labels, int n) {
    const int c = logits.dim(1);
    int hits = 0;
    for (int i = 0; i < n; ++i) {
        const float* row = logits.ptr() + static_cast<size_t>(i) * c;
        const int pred = static_cast<int>(std::max_element(row, row + c) - row);
        if (pred == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / n;
}

inline double evaluate_accuracy(ConvModel& model, const Dataset& ds,
                                const PruneMask* mask = nullptr) {
    Tensor logits = predict_logits(model, ds, mask);
    return accuracy(logits, ds.labels.data(), ds.size());
}

inline bool is_trainable_param(const std::string& name) {
    return !name.ends_with(".norm_mean") && !name.ends_with(".norm_var");
}

// SGD with momentum and cosine-annealed learning rate. Returns a trained
// copy; the input model is untouched. Fixed seed fixes initialization already
// baked into `model` plus the shuffle order, so the trajectory is
// reproducible on a given platform.
inline ConvModel train(const ConvModel& model, const Dataset& train_ds, const TrainConfig& cfg,
                       const Dataset* test_ds = nullptr, std::vector<EpochStats>* stats_out = nullptr) {
    cfg.validate();
    if (train_ds.size() == 0) throw InputError("train: empty dataset");
    for (int l : train_ds.labels)
        if (l < 0 || l >= model.num_classes) throw InputError("label out of range");

    ConvModel m = model;
    if (cfg.epochs == 0) return m;

    std::map<std::string, Tensor> velocity;
    for (const auto& [name, t] : m.params)
        if (is_trainable_param(name)) velocity[name] = Tensor(t.shape);

    Rng rng = make_rng(cfg.seed, 11);
    std::vector<int> order(static_cast<size_t>(train_ds.size()));
    std::iota(order.begin(), order.end(), 0);

    Workspace ws;
    ForwardOptions fopt;
    fopt.training = true;
    fopt.keep_pre_norm = true;

    std::vector<float> batch_images;
    std::vector<int> batch_labels;
    std::vector<EpochStats> log;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr =
            cfg.lr_schedule == "cosine"
                ? 0.5 * cfg.lr * (1.0 + std::cos(M_PI * epoch / cfg.epochs))
                : cfg.lr;
        std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0, acc_sum = 0.0;
        int seen = 0;
        for (int start = 0; start < train_ds.size(); start += cfg.batch_size) {
            const int n = std::min(cfg.batch_size, train_ds.size() - start);
            batch_images.resize(static_cast<size_t>(n) * train_ds.image_size());
            batch_labels.resize(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) {
                std::copy_n(train_ds.image(order[static_cast<size_t>(start + i)]),
                            train_ds.image_size(),
                            batch_images.data() + static_cast<size_t>(i) * train_ds.image_size());
                batch_labels[static_cast<size_t>(i)] =
                    train_ds.labels[static_cast<size_t>(order[static_cast<size_t>(start + i)])];
            }
            Tensor logits = forward_batch(m, batch_images.data(), n, ws, fopt);
            Tensor dlogits;
            const double loss = softmax_cross_entropy(logits, batch_labels.data(), n, &dlogits);
            if (!finite(loss))
                throw TrainingError("loss diverged at epoch " + std::to_string(epoch));
            loss_sum += loss * n;
            acc_sum += accuracy(logits, batch_labels.data(), n) * n;
            seen += n;

            GradMap grads;
            backward_batch(m, ws, dlogits, grads);
            for (auto& [name, v] : velocity) {
                Tensor& p = m.param(name);
                const Tensor& g = grads.at(name);
                for (size_t i = 0; i < p.numel(); ++i) {
                    const float step = static_cast<float>(
                        cfg.momentum * v.at(static_cast<int>(i)) + g.data[i] +
                        cfg.weight_decay * p.data[i]);
                    v.data[i] = step;
                    p.data[i] -= static_cast<float>(lr) * step;
                }
            }
        }

        EpochStats st;
        st.epoch = epoch;
        st.lr = lr;
        st.train_loss = loss_sum / seen;
        st.train_acc = acc_sum / seen;
        st.test_acc = test_ds ? evaluate_accuracy(m, *test_ds) : 0.0;
        st.param_hash = m.params_hash();
        log.push_back(st);
    }

    if (!cfg.log_path.empty()) {
        std::ofstream out(cfg.log_path);
        if (!out) throw IoError("cannot write training log " + cfg.log_path);
        out << "epoch,train_loss,train_acc,test_acc\n";
        for (const auto& st : log)
            out << st.epoch << "," << st.train_loss << "," << st.train_acc << "," << st.test_acc
                << "\n";
    }
    if (stats_out) *stats_out = log;
    return m;
}

}  // namespace onp::nn
