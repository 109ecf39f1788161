#pragma once

#include <map>
#include <string>
#include <vector>

#include "onp/dataset.hpp"
#include "onp/nn/model.hpp"
#include "onp/nn/ops.hpp"

namespace onp::nn {

// Per-batch execution state. Owns activation slots plus scratch; reusable
// across batches of the same size.
struct Workspace {
    int batch = 0;
    std::vector<Tensor> slots;            // [C][N][HW]
    std::vector<int> slot_h, slot_w;
    std::vector<Tensor> pre_norm;         // per op: conv output before normalization (training)
    std::vector<NormStats> norm_saved;    // per op
    std::vector<float> col, dcol;         // im2col scratch

    void ensure_scratch(size_t n) {
        if (col.size() < n) col.resize(n);
    }
    void ensure_dscratch(size_t n) {
        if (dcol.size() < n) dcol.resize(n);
    }
};

struct ForwardOptions {
    const PruneMask* mask = nullptr;
    bool training = false;       // batch-stat normalization + saved state for backward
    bool keep_pre_norm = false;  // required for training-mode backward
    float norm_momentum = 0.1f;
};

namespace detail {

inline ConvDims conv_dims(const LayerSpec& l, int h_in, int w_in) {
    return ConvDims::make(l.c_in, l.c_out, l.kernel_h, l.kernel_w, l.stride, l.pad, h_in, w_in);
}

inline void apply_channel_mask(Tensor& t, const PruneMask& mask, const std::string& layer) {
    auto it = mask.entries.find(layer);
    if (it == mask.entries.end()) return;
    const size_t per = static_cast<size_t>(t.dim(1)) * t.dim(2);
    for (int c = 0; c < t.dim(0); ++c)
        if (!it->second[static_cast<size_t>(c)])
            std::fill_n(t.data.begin() + static_cast<size_t>(c) * per, per, 0.0f);
}

}  // namespace detail

// Forward pass over a batch in NCHW layout. Returns logits [N, num_classes].
// Masked channels produce exactly-zero feature maps (mask applied after the
// per-channel normalization, before the nonlinearity).
inline Tensor forward_batch(ConvModel& model, const float* images, int n, Workspace& ws,
                            const ForwardOptions& opt = {}) {
    if (n <= 0) throw InputError("empty batch");
    ws.batch = n;
    ws.slots.assign(static_cast<size_t>(model.num_slots), Tensor());
    ws.slot_h.assign(static_cast<size_t>(model.num_slots), 0);
    ws.slot_w.assign(static_cast<size_t>(model.num_slots), 0);
    ws.pre_norm.assign(model.ops.size(), Tensor());
    ws.norm_saved.assign(model.ops.size(), NormStats());

    const int hw_in = model.input_h * model.input_w;
    ws.slots[0] = Tensor({model.input_channels, n, hw_in});
    ws.slot_h[0] = model.input_h;
    ws.slot_w[0] = model.input_w;
    // NCHW -> [C][N][HW]
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < model.input_channels; ++c)
            std::copy_n(images + (static_cast<size_t>(i) * model.input_channels + c) * hw_in,
                        hw_in, ws.slots[0].ptr() + (static_cast<size_t>(c) * n + i) * hw_in);

    for (size_t oi = 0; oi < model.ops.size(); ++oi) {
        const OpNode& op = model.ops[oi];
        Tensor& in = ws.slots[static_cast<size_t>(op.in0)];
        switch (op.kind) {
            case OpKind::conv: {
                const LayerSpec& l = model.layers[static_cast<size_t>(op.layer)];
                const ConvDims d = detail::conv_dims(l, ws.slot_h[static_cast<size_t>(op.in0)],
                                                     ws.slot_w[static_cast<size_t>(op.in0)]);
                if (l.c_in != in.dim(0))
                    throw InputError("channel mismatch at layer " + l.name);
                const size_t col_n = static_cast<size_t>(d.k()) * n * d.hw_out();
                ws.ensure_scratch(col_n);
                im2col(d, in.ptr(), n, ws.col.data());
                Tensor& out = ws.slots[static_cast<size_t>(op.out)];
                out = Tensor({l.c_out, n, d.hw_out()});
                conv_gemm_forward(d, model.param(l.name + ".weight").ptr(), ws.col.data(), n,
                                  out.ptr());
                const size_t per = static_cast<size_t>(n) * d.hw_out();
                if (l.has_norm) {
                    if (opt.keep_pre_norm) ws.pre_norm[oi] = out;  // copy before normalization
                    norm_forward(l.c_out, per, out.ptr(),
                                 model.param(l.name + ".norm_scale").ptr(),
                                 model.param(l.name + ".norm_shift").ptr(),
                                 model.param(l.name + ".norm_mean").ptr(),
                                 model.param(l.name + ".norm_var").ptr(), opt.training,
                                 opt.norm_momentum, &ws.norm_saved[oi]);
                } else {
                    const Tensor& b = model.param(l.name + ".bias");
                    for (int c = 0; c < l.c_out; ++c) {
                        float* row = out.ptr() + static_cast<size_t>(c) * per;
                        for (size_t i = 0; i < per; ++i) row[i] += b.at(c);
                    }
                }
                if (opt.mask) detail::apply_channel_mask(out, *opt.mask, l.name);
                ws.slot_h[static_cast<size_t>(op.out)] = d.h_out;
                ws.slot_w[static_cast<size_t>(op.out)] = d.w_out;
                break;
            }
            case OpKind::relu: {
                Tensor& out = ws.slots[static_cast<size_t>(op.out)];
                out = in;
                relu_forward(out.ptr(), out.numel());
                ws.slot_h[static_cast<size_t>(op.out)] = ws.slot_h[static_cast<size_t>(op.in0)];
                ws.slot_w[static_cast<size_t>(op.out)] = ws.slot_w[static_cast<size_t>(op.in0)];
                break;
            }
            case OpKind::add: {
                Tensor& rhs = ws.slots[static_cast<size_t>(op.in1)];
                Tensor& out = ws.slots[static_cast<size_t>(op.out)];
                out = in;
                out += rhs;
                ws.slot_h[static_cast<size_t>(op.out)] = ws.slot_h[static_cast<size_t>(op.in0)];
                ws.slot_w[static_cast<size_t>(op.out)] = ws.slot_w[static_cast<size_t>(op.in0)];
                break;
            }
            case OpKind::global_avg_pool: {
                const int c = in.dim(0);
                const int hw = in.dim(2);
                Tensor& out = ws.slots[static_cast<size_t>(op.out)];
                out = Tensor({c, n, 1});
                for (int ch = 0; ch < c; ++ch)
                    for (int i = 0; i < n; ++i) {
                        const float* row = in.ptr() + (static_cast<size_t>(ch) * n + i) * hw;
                        double s = 0.0;
                        for (int j = 0; j < hw; ++j) s += row[j];
                        out.at(ch, i, 0) = static_cast<float>(s / hw);
                    }
                ws.slot_h[static_cast<size_t>(op.out)] = 1;
                ws.slot_w[static_cast<size_t>(op.out)] = 1;
                break;
            }
        }
    }

    const Tensor& lg = ws.slots[static_cast<size_t>(model.logits_slot)];
    Tensor logits({n, model.num_classes});
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < model.num_classes; ++c) logits.at(i, c) = lg.at(c, i, 0);
    return logits;
}

using GradMap = std::map<std::string, Tensor>;

struct BackwardOptions {
    bool training_norm = true;   // batch-stat normalization backward (else fixed affine)
    bool want_input_grad = false;
};

// Backward pass over the workspace of the immediately preceding forward.
// dlogits is [N, num_classes]; parameter gradients accumulate into grads.
// Returns the input-image gradient in NCHW when requested.
inline Tensor backward_batch(ConvModel& model, Workspace& ws, const Tensor& dlogits,
                             GradMap& grads, const BackwardOptions& opt = {}) {
    const int n = ws.batch;
    std::vector<Tensor> grad_slots(static_cast<size_t>(model.num_slots));
    for (size_t s = 0; s < grad_slots.size(); ++s)
        if (!ws.slots[s].empty()) grad_slots[s] = Tensor(ws.slots[s].shape);

    Tensor& glog = grad_slots[static_cast<size_t>(model.logits_slot)];
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < model.num_classes; ++c) glog.at(c, i, 0) = dlogits.at(i, c);

    for (size_t ri = model.ops.size(); ri-- > 0;) {
        const OpNode& op = model.ops[ri];
        Tensor& gout = grad_slots[static_cast<size_t>(op.out)];
        switch (op.kind) {
            case OpKind::conv: {
                const LayerSpec& l = model.layers[static_cast<size_t>(op.layer)];
                const ConvDims d = detail::conv_dims(l, ws.slot_h[static_cast<size_t>(op.in0)],
                                                     ws.slot_w[static_cast<size_t>(op.in0)]);
                const size_t per = static_cast<size_t>(n) * d.hw_out();
                if (l.has_norm) {
                    Tensor& dscale = grads[l.name + ".norm_scale"];
                    Tensor& dshift = grads[l.name + ".norm_shift"];
                    if (dscale.empty()) dscale = Tensor({l.c_out});
                    if (dshift.empty()) dshift = Tensor({l.c_out});
                    if (opt.training_norm) {
                        if (ws.pre_norm[ri].empty())
                            throw InputError("training backward requires keep_pre_norm forward");
                        norm_backward_train(l.c_out, per, ws.pre_norm[ri].ptr(), gout.ptr(),
                                            model.param(l.name + ".norm_scale").ptr(),
                                            ws.norm_saved[ri], dscale.ptr(), dshift.ptr());
                    } else {
                        for (int c = 0; c < l.c_out; ++c) {
                            const float* row = gout.ptr() + static_cast<size_t>(c) * per;
                            double s = 0.0;
                            for (size_t i = 0; i < per; ++i) s += row[i];
                            dshift.at(c) += static_cast<float>(s);
                        }
                        norm_backward_eval(l.c_out, per, gout.ptr(),
                                           model.param(l.name + ".norm_scale").ptr(),
                                           model.param(l.name + ".norm_var").ptr());
                    }
                } else {
                    Tensor& dbias = grads[l.name + ".bias"];
                    if (dbias.empty()) dbias = Tensor({l.c_out});
                    for (int c = 0; c < l.c_out; ++c) {
                        const float* row = gout.ptr() + static_cast<size_t>(c) * per;
                        double s = 0.0;
                        for (size_t i = 0; i < per; ++i) s += row[i];
                        dbias.at(c) += static_cast<float>(s);
                    }
                }
                Tensor& dw = grads[l.name + ".weight"];
                if (dw.empty()) dw = Tensor({l.c_out, l.c_in, l.kernel_h, l.kernel_w});
                const size_t col_n = static_cast<size_t>(d.k()) * n * d.hw_out();
                ws.ensure_scratch(col_n);
                im2col(d, ws.slots[static_cast<size_t>(op.in0)].ptr(), n, ws.col.data());
                const bool need_dx = op.in0 != 0 || opt.want_input_grad;
                float* dcol = nullptr;
                if (need_dx) {
                    ws.ensure_dscratch(col_n);
                    dcol = ws.dcol.data();
                }
                conv_gemm_backward(d, model.param(l.name + ".weight").ptr(), ws.col.data(),
                                   gout.ptr(), n, dw.ptr(), dcol);
                if (need_dx)
                    col2im_add(d, dcol, n, grad_slots[static_cast<size_t>(op.in0)].ptr());
                break;
            }
            case OpKind::relu: {
                relu_backward(ws.slots[static_cast<size_t>(op.out)].ptr(), gout.ptr(),
                              gout.numel());
                grad_slots[static_cast<size_t>(op.in0)] += gout;
                break;
            }
            case OpKind::add: {
                grad_slots[static_cast<size_t>(op.in0)] += gout;
                grad_slots[static_cast<size_t>(op.in1)] += gout;
                break;
            }
            case OpKind::global_avg_pool: {
                Tensor& gin = grad_slots[static_cast<size_t>(op.in0)];
                const int c = gin.dim(0);
                const int hw = gin.dim(2);
                const float inv = 1.0f / hw;
                for (int ch = 0; ch < c; ++ch)
                    for (int i = 0; i < n; ++i) {
                        const float g = gout.at(ch, i, 0) * inv;
                        float* row = gin.ptr() + (static_cast<size_t>(ch) * n + i) * hw;
                        for (int j = 0; j < hw; ++j) row[j] += g;
                    }
                break;
            }
        }
    }

    Tensor dinput;
    if (opt.want_input_grad) {
        const int hw = model.input_h * model.input_w;
        dinput = Tensor({n, model.input_channels, hw});
        const Tensor& g0 = grad_slots[0];
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < model.input_channels; ++c)
                std::copy_n(g0.ptr() + (static_cast<size_t>(c) * n + i) * hw, hw,
                            dinput.ptr() + (static_cast<size_t>(i) * model.input_channels + c) * hw);
    }
    return dinput;
}

// Convenience: logits for a whole dataset (eval mode), chunked.
inline Tensor predict_logits(ConvModel& model, const Dataset& ds, const PruneMask* mask = nullptr,
                             int chunk = 64) {
    Tensor logits({ds.size(), model.num_classes});
    Workspace ws;
    ForwardOptions opt;
    opt.mask = mask;
    for (int start = 0; start < ds.size(); start += chunk) {
        const int n = std::min(chunk, ds.size() - start);
        Tensor part = forward_batch(model, ds.image(start), n, ws, opt);
        std::copy_n(part.ptr(), part.numel(),
                    logits.ptr() + static_cast<size_t>(start) * model.num_classes);
    }
    return logits;
}

// Spatial-mean post-activation samples per channel for the requested units,
// evaluated with the given mask. Group units sample the residual stream
// output; layer units sample the rectified normalized layer output.
// Result: unit -> [channels x n_images] matrix.
inline std::map<std::string, Tensor> record_activations(ConvModel& model, const Dataset& data,
                                                        const PruneMask* mask,
                                                        const std::vector<std::string>& units,
                                                        int chunk = 64) {
    if (data.size() == 0) throw InputError("record_activations: empty data");
    std::map<std::string, Tensor> out;
    for (const auto& u : units) {
        if (!model.has_unit(u)) throw IndexError("unknown unit: " + u);
        out[u] = Tensor({model.unit_width(u), data.size()});
    }
    Workspace ws;
    ForwardOptions opt;
    opt.mask = mask;
    for (int start = 0; start < data.size(); start += chunk) {
        const int n = std::min(chunk, data.size() - start);
        forward_batch(model, data.image(start), n, ws, opt);
        for (const auto& u : units) {
            Tensor post;  // [C][n][HW] view of the sampled tensor
            const Tensor* src = nullptr;
            if (model.find_group(u)) {
                src = &ws.slots[static_cast<size_t>(model.group_stream_slot.at(u))];
            } else {
                const int slot = model.conv_out_slot.at(model.layer_index.at(u));
                post = ws.slots[static_cast<size_t>(slot)];
                relu_forward(post.ptr(), post.numel());
                src = &post;
            }
            const int hw = src->dim(2);
            Tensor& dst = out[u];
            for (int c = 0; c < src->dim(0); ++c)
                for (int i = 0; i < n; ++i) {
                    const float* row = src->ptr() + (static_cast<size_t>(c) * n + i) * hw;
                    double s = 0.0;
                    for (int j = 0; j < hw; ++j) s += row[j];
                    dst.at(c, start + i) = static_cast<float>(s / hw);
                }
        }
    }
    return out;
}

}  // namespace onp::nn
