#include <catch2/catch_amalgamated.hpp>

#include "onp/dataset.hpp"
#include "onp/nn/engine.hpp"
#include "onp/nn/model.hpp"
#include "onp/nn/train.hpp"

using namespace onp;
using namespace onp::nn;

namespace {

Dataset tiny_images(int n, uint64_t seed) { return make_synthetic_dataset(n, seed); }

}  // namespace

TEST_CASE("mini-resnet preset: groups and widths") {
    ConvModel m = build_model(ArchPreset::mini_resnet, 10, 1);
    REQUIRE(m.groups.size() == 2);
    CHECK(m.groups[0].width == 16);
    CHECK(m.groups[1].width == 32);
    CHECK(m.groups[0].member_layers.back() == "g1b2c2");
    CHECK(m.groups[1].member_layers.back() == "g2b2c2");
    for (const auto& g : m.groups)
        for (const auto& lname : g.member_layers) CHECK(m.layer(lname).c_out == g.width);
}

TEST_CASE("tiny-cnn preset: no groups, four conv layer specs") {
    ConvModel m = build_model(ArchPreset::tiny_cnn, 10, 1);
    CHECK(m.groups.empty());
    CHECK(m.layers.size() == 4);
}

TEST_CASE("unknown preset string is a configuration error") {
    CHECK_THROWS_AS(parse_preset("resnet-152"), ConfigError);
}

TEST_CASE("mini-resnet parameter count regression") {
    ConvModel m = build_model(ArchPreset::mini_resnet, 10, 1);
    // counted once from the preset definition and frozen
    CHECK(parameter_count(m) == 43706);
    CHECK(parameter_count(m, /*trainable_only=*/true) == 43226);
}

TEST_CASE("forward: identity mask equals unmasked forward") {
    ConvModel m = build_model(ArchPreset::mini_resnet, 10, 3);
    Dataset ds = tiny_images(4, 5);
    Workspace ws;
    Tensor base = forward_batch(m, ds.image(0), 4, ws);
    PruneMask full = m.full_mask();
    ForwardOptions opt;
    opt.mask = &full;
    Tensor masked = forward_batch(m, ds.image(0), 4, ws, opt);
    REQUIRE(base.numel() == masked.numel());
    for (size_t i = 0; i < base.numel(); ++i) CHECK(base.data[i] == masked.data[i]);
}

TEST_CASE("forward: masked channel equals literally zeroed weights") {
    // single channels across several layers, relative agreement within 1e-5
    ConvModel m = build_model(ArchPreset::mini_resnet, 10, 7);
    Dataset ds = tiny_images(6, 9);
    Workspace ws;
    for (auto [layer, ch] : std::vector<std::pair<std::string, int>>{
             {"stem", 3}, {"g1b1c2", 7}, {"g2b1ds", 11}, {"g2b2c2", 0}, {"fc", 4}}) {
        PruneMask mask = m.full_mask();
        mask.entries[layer][static_cast<size_t>(ch)] = 0;
        ForwardOptions opt;
        opt.mask = &mask;
        Tensor via_mask = forward_batch(m, ds.image(0), 6, ws, opt);

        ConvModel zeroed = m;
        zero_channel_weights(zeroed, layer, ch);
        Tensor via_zero = forward_batch(zeroed, ds.image(0), 6, ws);

        for (size_t i = 0; i < via_mask.numel(); ++i) {
            const double denom = std::max(1.0, std::fabs(static_cast<double>(via_zero.data[i])));
            CHECK(std::fabs(via_mask.data[i] - via_zero.data[i]) / denom < 1e-5);
        }
    }
}

TEST_CASE("forward: all-false mask on final layer gives constant logits") {
    ConvModel m = build_model(ArchPreset::mini_resnet, 10, 11);
    Dataset ds = tiny_images(5, 13);
    PruneMask mask = m.full_mask();
    std::fill(mask.entries["fc"].begin(), mask.entries["fc"].end(), 0);
    Workspace ws;
    ForwardOptions opt;
    opt.mask = &mask;
    Tensor logits = forward_batch(m, ds.image(0), 5, ws, opt);
    for (int i = 0; i < 5; ++i)
        for (int c = 0; c < 10; ++c) CHECK(logits.at(i, c) == logits.at(0, c));
}

TEST_CASE("expand_prune_set: group entry masks every member layer") {
    ConvModel m = build_model(ArchPreset::mini_resnet, 10, 1);
    PruneMask mask = expand_prune_set(m, {{"g1", 3}});
    int flipped = 0;
    for (const auto& [lname, keep] : mask.entries)
        for (size_t c = 0; c < keep.size(); ++c)
            if (!keep[c]) {
                CHECK(c == 3);
                ++flipped;
            }
    CHECK(flipped == static_cast<int>(m.groups[0].member_layers.size()));

    // a constructed 4-member group flips exactly 4 entries
    ConvModel m4 = m;
    m4.groups[0].member_layers = {"g1b1c1", "g1b1c2", "g1b2c1", "g1b2c2"};
    PruneMask mask4 = expand_prune_set(m4, {{"g1", 3}});
    int flipped4 = 0;
    for (const auto& [lname, keep] : mask4.entries)
        for (uint8_t k : keep)
            if (!k) ++flipped4;
    CHECK(flipped4 == 4);
}

TEST_CASE("expand_prune_set: empty set, duplicates, errors") {
    ConvModel m = build_model(ArchPreset::mini_resnet, 10, 1);
    CHECK(expand_prune_set(m, {}).all_true());

    PruneMask once = expand_prune_set(m, {{"g2", 5}});
    PruneMask twice = expand_prune_set(m, {{"g2", 5}, {"g2", 5}});
    CHECK(once.entries == twice.entries);

    CHECK_THROWS_AS(expand_prune_set(m, {{"g1", 16}}), IndexError);
    CHECK_THROWS_AS(expand_prune_set(m, {{"nope", 0}}), IndexError);
}

TEST_CASE("group consistency: pruned group channel zero in every member map") {
    ConvModel m = build_model(ArchPreset::mini_resnet, 10, 17);
    Dataset ds = tiny_images(3, 19);
    const int ch = 9;
    PruneMask mask = expand_prune_set(m, {{"g1", ch}});
    Workspace ws;
    ForwardOptions opt;
    opt.mask = &mask;
    forward_batch(m, ds.image(0), 3, ws, opt);
    for (const auto& lname : m.groups[0].member_layers) {
        const int slot = m.conv_out_slot.at(m.layer_index.at(lname));
        const Tensor& t = ws.slots[static_cast<size_t>(slot)];
        const size_t per = static_cast<size_t>(t.dim(1)) * t.dim(2);
        for (size_t i = 0; i < per; ++i)
            REQUIRE(t.data[static_cast<size_t>(ch) * per + i] == 0.0f);
    }
    // the residual stream itself is zero at that channel too
    const Tensor& stream = ws.slots[static_cast<size_t>(m.group_stream_slot.at("g1"))];
    const size_t per = static_cast<size_t>(stream.dim(1)) * stream.dim(2);
    for (size_t i = 0; i < per; ++i)
        REQUIRE(stream.data[static_cast<size_t>(ch) * per + i] == 0.0f);
}

TEST_CASE("record_activations: masked channel zero, sample cardinality") {
    ConvModel m = build_model(ArchPreset::mini_resnet, 10, 23);
    Dataset ds = tiny_images(7, 29);
    PruneMask mask = expand_prune_set(m, {{"g2", 2}});
    auto acts = record_activations(m, ds, &mask, {"g2", "g2b1c1"});
    const Tensor& g2 = acts.at("g2");
    REQUIRE(g2.dim(0) == 32);
    REQUIRE(g2.dim(1) == 7);
    for (int i = 0; i < 7; ++i) CHECK(g2.at(2, i) == 0.0f);
    for (int c = 0; c < 32; ++c)
        for (int i = 0; i < 7; ++i) CHECK(g2.at(c, i) >= 0.0f);
}

TEST_CASE("record_activations: hand-computed spatial mean on a 2x2 toy layer") {
    // one 1->1 conv, kernel [[1,-2],[3,0]] applied at pad 0 to a 2x2 image,
    // output is a single pixel; relu then spatial mean is that pixel.
    ConvModel m;
    m.preset = ArchPreset::tiny_cnn;
    m.num_classes = 1;
    m.input_channels = 1;
    m.input_h = 2;
    m.input_w = 2;
    m.num_slots = 1;
    const int conv = nn::detail::add_layer(m, "toy", LayerKind::conv, 1, 1, 2, 1, 0, false,
                                           std::nullopt);
    m.logits_slot = nn::detail::emit(m, OpKind::conv, conv, 0);
    Tensor& w = m.param("toy.weight");
    w.data = {1.0f, -2.0f, 3.0f, 0.0f};

    Dataset ds;
    ds.channels = 1;
    ds.height = 2;
    ds.width = 2;
    ds.num_classes = 1;
    const float img[4] = {0.5f, 0.25f, 1.0f, 0.75f};
    ds.append(img, 0);

    auto acts = record_activations(m, ds, nullptr, {"toy"});
    // conv value = 0.5*1 + 0.25*(-2) + 1.0*3 + 0.75*0 = 3.0
    CHECK(acts.at("toy").at(0, 0) == Catch::Approx(3.0).margin(1e-6));
}

TEST_CASE("conv/norm backward matches finite differences") {
    ConvModel m = build_model(ArchPreset::mini_resnet, 10, 31);
    Dataset ds = tiny_images(2, 37);
    std::vector<int> labels = {ds.labels[0], ds.labels[1]};

    Workspace ws;
    ForwardOptions fopt;
    fopt.training = true;
    fopt.keep_pre_norm = true;
    fopt.norm_momentum = 0.0f;  // keep running stats fixed so probes see one mode
    Tensor logits = forward_batch(m, ds.image(0), 2, ws, fopt);
    Tensor dlogits;
    softmax_cross_entropy(logits, labels.data(), 2, &dlogits);
    GradMap grads;
    backward_batch(m, ws, dlogits, grads);

    auto loss_at = [&](ConvModel& model) {
        Workspace w2;
        ForwardOptions o;
        o.training = true;
        o.norm_momentum = 0.0f;
        Tensor lg = forward_batch(model, ds.image(0), 2, w2, o);
        return softmax_cross_entropy(lg, labels.data(), 2);
    };

    // relu kinks make fp32 central differences O(eps)-accurate at best, so
    // the tolerance is loose per-coordinate with a tight aggregate bound
    Rng rng = make_rng(99);
    int checked = 0;
    double err_sum = 0.0, mag_sum = 0.0;
    for (const auto& [name, g] : grads) {
        // a few random coordinates per parameter tensor
        std::uniform_int_distribution<size_t> pick(0, g.numel() - 1);
        for (int rep = 0; rep < 3; ++rep) {
            const size_t i = pick(rng);
            const float eps = 5e-3f;
            ConvModel mp = m, mm = m;
            mp.param(name).data[i] += eps;
            mm.param(name).data[i] -= eps;
            const double num = (loss_at(mp) - loss_at(mm)) / (2.0 * eps);
            const double ana = g.data[i];
            if (std::fabs(num) < 5e-3 && std::fabs(ana) < 5e-3) continue;  // below fp32 noise
            CHECK(std::fabs(num - ana) < 3e-3 + 0.15 * std::fabs(num));
            err_sum += std::fabs(num - ana);
            mag_sum += std::fabs(num);
            ++checked;
        }
    }
    CHECK(checked > 10);
    CHECK(err_sum < 0.05 * mag_sum);
}

TEST_CASE("input gradient (eval-mode backward) matches finite differences") {
    ConvModel m = build_model(ArchPreset::mini_resnet, 10, 41);
    // move running stats off init so eval mode is nontrivial
    Dataset warm = tiny_images(8, 43);
    Workspace ws;
    ForwardOptions wopt;
    wopt.training = true;
    forward_batch(m, warm.image(0), 8, ws, wopt);

    Dataset ds = tiny_images(1, 47);
    int label = 3;
    Tensor logits = forward_batch(m, ds.image(0), 1, ws);
    Tensor dlogits;
    softmax_cross_entropy(logits, &label, 1, &dlogits);
    GradMap grads;
    BackwardOptions bopt;
    bopt.training_norm = false;
    bopt.want_input_grad = true;
    Tensor dinput = backward_batch(m, ws, dlogits, grads, bopt);
    REQUIRE(dinput.numel() == ds.image_size());

    auto loss_at = [&](const float* img) {
        Workspace w2;
        Tensor lg = forward_batch(m, img, 1, w2);
        return softmax_cross_entropy(lg, &label, 1);
    };
    Rng rng = make_rng(101);
    std::uniform_int_distribution<size_t> pick(0, ds.image_size() - 1);
    int checked = 0;
    for (int rep = 0; rep < 30; ++rep) {
        const size_t i = pick(rng);
        const float eps = 1e-2f;
        std::vector<float> up(ds.image(0), ds.image(0) + ds.image_size());
        std::vector<float> dn = up;
        up[i] += eps;
        dn[i] -= eps;
        const double num = (loss_at(up.data()) - loss_at(dn.data())) / (2.0 * eps);
        const double ana = dinput.data[i];
        if (std::fabs(num) < 5e-3 && std::fabs(ana) < 5e-3) continue;
        CHECK(std::fabs(num - ana) < 1e-3 + 0.08 * std::fabs(num));
        ++checked;
    }
    CHECK(checked > 5);
}
